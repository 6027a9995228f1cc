#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""LEMP: learning under an exogenous Markov process.

Time is split into epochs. At each epoch boundary the learner either
explores one arm (SB1: wait for the arm's stored anchor reward, SB2: take
4^k consecutive samples) or exploits for 2*4^(k-1) slots, playing the
arm with the best frozen value estimate under the last revealed global
state. Exploration rates come from the estimated hardness table D-hat,
which is recomputed from the running estimators at every decision.

Per-(arm, state) arrays are indexed [arm, state] throughout.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from markov_core import second_eigenvalue_modulus
from sim_common import BasePolicy, ScenarioError, WatchdogAbort

logger = logging.getLogger(__name__)

DEFAULT_SB1_WATCHDOG_CAP = 10_000_000


def formula_I_L(x_max, x_count_max, pi_hat_max, n_states, v_star_max, lambda_bar_min) -> float:
    return lambda_bar_min / (
        3072.0
        * ((x_max + 2.0) ** 2 * x_count_max * pi_hat_max * n_states * (v_star_max + 2.0)) ** 2
    )


def formula_I_G(x_max, n_states, v_star_max) -> float:
    return 1.0 / (128.0 * ((x_max + 2.0) * n_states * (v_star_max + 2.0)) ** 2)


def formula_L(v_star_max, I_L, I_G) -> float:
    return max(1.0 / I_L, 1.0 / I_G) / (16.0 * (v_star_max + 2.0) ** 2)


@dataclass(frozen=True)
class ConstantsBundle:
    """Model constants driving D-hat and the explore conditions.

    I_L, I_G and L follow their closed forms unless given explicitly
    (practical overrides); everything must end up strictly positive.
    """

    x_max: float
    x_count_max: int
    n_states: int
    v_star_max: float
    pi_hat_max: float
    lambda_bar_min: float
    delta: float
    epsilon: float
    I_L: Optional[float] = None
    I_G: Optional[float] = None
    L: Optional[float] = None

    def __post_init__(self):
        for name in ("x_max", "x_count_max", "n_states", "delta", "epsilon"):
            value = getattr(self, name)
            if not value > 0 or not math.isfinite(value):
                raise ScenarioError(f"constant {name} must be finite and > 0, got {value!r}")
        if not 0.0 < self.pi_hat_max <= 1.0:
            raise ScenarioError(f"pi_hat_max must lie in (0, 1], got {self.pi_hat_max!r}")
        if not 0.0 < self.lambda_bar_min <= 1.0:
            raise ScenarioError(f"lambda_bar_min must lie in (0, 1], got {self.lambda_bar_min!r}")
        if self.v_star_max < 0:
            raise ScenarioError(f"v_star_max must be >= 0, got {self.v_star_max!r}")

        if self.I_L is None:
            object.__setattr__(
                self,
                "I_L",
                formula_I_L(
                    self.x_max,
                    self.x_count_max,
                    self.pi_hat_max,
                    self.n_states,
                    self.v_star_max,
                    self.lambda_bar_min,
                ),
            )
        if self.I_G is None:
            object.__setattr__(self, "I_G", formula_I_G(self.x_max, self.n_states, self.v_star_max))
        if self.L is None:
            object.__setattr__(self, "L", formula_L(self.v_star_max, self.I_L, self.I_G))
        for name in ("I_L", "I_G", "L"):
            value = getattr(self, name)
            if not value > 0 or not math.isfinite(value):
                raise ScenarioError(f"constant {name} must be finite and > 0, got {value!r}")

    @property
    def local_floor(self) -> float:
        """2 / (eps^2 I_L): the rate floor of the local explore condition."""
        return 2.0 / (self.epsilon ** 2 * self.I_L)

    @property
    def global_rate(self) -> float:
        """2 / (eps^2 I_G): the rate of the global-state explore condition."""
        return 2.0 / (self.epsilon ** 2 * self.I_G)

    @property
    def worst_case_rate(self) -> float:
        return 4.0 * self.L / self.delta

    def to_dict(self) -> dict:
        return {
            "x_max": self.x_max,
            "x_count_max": self.x_count_max,
            "n_states": self.n_states,
            "v_star_max": self.v_star_max,
            "pi_hat_max": self.pi_hat_max,
            "lambda_bar_min": self.lambda_bar_min,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "I_L": self.I_L,
            "I_G": self.I_G,
            "L": self.L,
        }


def oracle_constants(model, summary, epsilon=None, delta=None) -> ConstantsBundle:
    """Constants computed from the true model."""
    if model.n_arms < 2:
        raise ScenarioError("oracle constants need at least two arms (the gap floor is undefined)")
    delta = summary.delta if delta is None else delta
    pi_hat_max = max(
        float(np.max(np.maximum(pi, 1.0 - pi)))
        for arm in model.local_stationary
        for pi in arm
    )
    lambda_max = max(
        second_eigenvalue_modulus(chain) for arm in model.arm_chains for chain in arm
    )
    return ConstantsBundle(
        x_max=model.x_max,
        x_count_max=model.x_count_max,
        n_states=model.n_states,
        v_star_max=float(summary.best_value.max()),
        pi_hat_max=pi_hat_max,
        lambda_bar_min=1.0 - lambda_max,
        delta=delta,
        epsilon=delta / 4.0 if epsilon is None else epsilon,
    )


# ----------------------------------------------------------------------
# Estimators
# ----------------------------------------------------------------------


@dataclass
class EstimatorState:
    """SB2 sample statistics and global-state counts."""

    T: np.ndarray
    sums: np.ndarray
    N_s: np.ndarray
    N_trans: np.ndarray
    t: int = 0
    last_state: Optional[int] = None

    @classmethod
    def empty(cls, n_arms: int, n_states: int) -> "EstimatorState":
        return cls(
            T=np.zeros((n_arms, n_states), dtype=np.int64),
            sums=np.zeros((n_arms, n_states)),
            N_s=np.zeros(n_states, dtype=np.int64),
            N_trans=np.zeros((n_states, n_states), dtype=np.int64),
        )

    @property
    def n_arms(self) -> int:
        return self.T.shape[0]

    @property
    def n_states(self) -> int:
        return self.T.shape[1]

    def mu_hat(self) -> np.ndarray:
        """Sample means; 0 where no SB2 sample exists yet."""
        return np.divide(self.sums, self.T, out=np.zeros_like(self.sums), where=self.T > 0)

    def p_hat(self) -> np.ndarray:
        """Transition estimates; uniform rows for states never left yet.

        The denominator counts departures from the state, which equals N_s
        for every state except the one currently occupied.
        """
        departures = self.N_trans.sum(axis=1)
        n = self.n_states
        p = np.full((n, n), 1.0 / n)
        seen = departures > 0
        p[seen] = self.N_trans[seen] / departures[seen, np.newaxis]
        return p


def update_on_observation(est: EstimatorState, epoch: "EpochState", obs) -> None:
    state = obs.revealed_state
    if est.last_state is not None:
        est.N_trans[est.last_state, state] += 1
    est.N_s[state] += 1
    est.last_state = state
    if epoch.phase is Phase.SB2 and obs.arm == epoch.arm:
        est.T[obs.arm, state] += 1
        est.sums[obs.arm, state] += obs.reward
    est.t += 1


def value_estimates(est: EstimatorState):
    """V-hat[i, s] = sum_s' p-hat[s, s'] mu-hat[i, s'], and V-hat* per state."""
    values = est.mu_hat() @ est.p_hat().T
    return values, values.max(axis=0)


def hardness_estimate(est: EstimatorState, consts: ConstantsBundle, values=None) -> np.ndarray:
    if values is None:
        values = value_estimates(est)
    v_hat, v_star = values
    gaps = (v_star[np.newaxis, :] - v_hat) ** 2
    return 4.0 * consts.L / np.maximum(consts.delta, gaps - consts.epsilon)


# ----------------------------------------------------------------------
# Epoch state machine
# ----------------------------------------------------------------------


class Phase(enum.Enum):
    DECIDE = "decide"
    SB1 = "sb1"
    SB2 = "sb2"
    EXPLOIT = "exploit"


@dataclass
class EpochRecord:
    kind: str
    arm: Optional[int]
    start: int
    length: int
    sb1_length: int = 0
    reason: str = ""
    pseudo_regret: float = 0.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "arm": self.arm,
            "start": self.start,
            "length": self.length,
            "sb1_length": self.sb1_length,
            "reason": self.reason,
            "pseudo_regret": self.pseudo_regret,
        }


@dataclass
class EpochState:
    n_O: list
    gamma: list
    phase: Phase = Phase.DECIDE
    arm: Optional[int] = None
    reason: str = ""
    samples_remaining: int = 0
    slots_remaining: int = 0
    n_I: int = 0
    frozen_values: Optional[np.ndarray] = None
    frozen_best: Optional[list] = None
    epoch_start: int = 0
    sb1_length: int = 0
    log: list = field(default_factory=list)

    @classmethod
    def fresh(cls, n_arms: int) -> "EpochState":
        return cls(n_O=[0] * n_arms, gamma=[None] * n_arms)


@dataclass(frozen=True)
class Decision:
    kind: str
    arm: Optional[int] = None
    reason: str = ""


def exploration_thresholds(rates: np.ndarray, consts: ConstantsBundle, t: int) -> np.ndarray:
    return np.maximum(rates, consts.local_floor) * math.log(t)


def begin_exploitation(epoch: EpochState, values: np.ndarray, t: int) -> None:
    epoch.n_I += 1
    epoch.frozen_values = np.array(values, copy=True)
    epoch.frozen_best = np.argmax(epoch.frozen_values, axis=0).tolist()
    epoch.slots_remaining = 2 * 4 ** (epoch.n_I - 1)
    epoch.phase = Phase.EXPLOIT
    epoch.arm = None
    epoch.reason = "exploit"
    epoch.epoch_start = t


def decide_epoch(
    est: EstimatorState,
    epoch: EpochState,
    consts: ConstantsBundle,
    t: int,
    rates: Optional[np.ndarray] = None,
    exploit_values: Optional[Callable[[EstimatorState], np.ndarray]] = None,
) -> Decision:
    """Pick the next epoch at slot t; enters exploitation directly when chosen.

    ``rates`` replaces the D-hat table in both explore conditions (the
    worst-case baseline passes a constant table); ``exploit_values``
    replaces the table frozen for exploitation.
    """
    values = value_estimates(est)
    if rates is None:
        rates = hardness_estimate(est, consts, values)
    log_t = math.log(t)

    thresholds = exploration_thresholds(rates, consts, t)
    violated = est.T <= thresholds
    if violated.any():
        deficits = thresholds - est.T
        chosen, best_deficit = None, -math.inf
        for arm in range(est.n_arms):
            for state in range(est.n_states):
                if violated[arm, state] and deficits[arm, state] > best_deficit:
                    chosen, best_deficit = arm, deficits[arm, state]
        return Decision("explore", chosen, "local_rate")

    if np.any(est.N_s <= consts.global_rate * log_t):
        i_m = int(np.argmin(rates.min(axis=1)))
        return Decision("explore", i_m, "global_rate")

    table = values[0] if exploit_values is None else exploit_values(est)
    begin_exploitation(epoch, table, t)
    logger.debug("slot %d: exploitation epoch %d for %d slots", t, epoch.n_I, epoch.slots_remaining)
    return Decision("exploit", None, "exploit")


def begin_exploration(epoch: EpochState, arm: int, t: int, reason: str = "") -> None:
    epoch.n_O[arm] += 1
    epoch.arm = arm
    epoch.reason = reason
    epoch.epoch_start = t
    epoch.sb1_length = 0
    if epoch.n_O[arm] == 1 or epoch.gamma[arm] is None:
        epoch.phase = Phase.SB2
        epoch.samples_remaining = 4 ** epoch.n_O[arm]
    else:
        epoch.phase = Phase.SB1
    logger.debug("slot %d: exploration epoch %d of arm %d (%s)", t, epoch.n_O[arm], arm, reason)


def advance_exploration(epoch: EpochState, obs, watchdog_cap: int = DEFAULT_SB1_WATCHDOG_CAP) -> None:
    """Move SB1 -> SB2 -> Decide after the slot's observation was recorded."""
    arm = epoch.arm
    if epoch.phase is Phase.SB1:
        epoch.sb1_length += 1
        if obs.reward == epoch.gamma[arm]:
            epoch.phase = Phase.SB2
            epoch.samples_remaining = 4 ** epoch.n_O[arm]
        elif epoch.sb1_length >= watchdog_cap:
            raise WatchdogAbort(arm, epoch.gamma[arm], epoch.sb1_length, obs.t)
    elif epoch.phase is Phase.SB2:
        epoch.samples_remaining -= 1
        if epoch.samples_remaining == 0:
            epoch.gamma[arm] = obs.reward
            sb2_length = 4 ** epoch.n_O[arm]
            epoch.log.append(
                EpochRecord(
                    kind="explore",
                    arm=arm,
                    start=epoch.epoch_start,
                    length=epoch.sb1_length + sb2_length,
                    sb1_length=epoch.sb1_length,
                    reason=epoch.reason,
                )
            )
            epoch.phase = Phase.DECIDE
            epoch.arm = None


def run_exploration_epoch(
    arm: int,
    epoch: EpochState,
    est: EstimatorState,
    env,
    watchdog_cap: int = DEFAULT_SB1_WATCHDOG_CAP,
) -> int:
    """Play one full exploration epoch of ``arm`` against a world handle; returns slots used."""
    begin_exploration(epoch, arm, env.state.t + 1)
    slots = 0
    while epoch.phase in (Phase.SB1, Phase.SB2):
        obs = env.play(arm)
        slots += 1
        update_on_observation(est, epoch, obs)
        advance_exploration(epoch, obs, watchdog_cap)
    return slots


def exploit_step(epoch: EpochState, s_prev: int) -> int:
    arm = epoch.frozen_best[s_prev]
    epoch.slots_remaining -= 1
    if epoch.slots_remaining == 0:
        epoch.log.append(
            EpochRecord(
                kind="exploit",
                arm=None,
                start=epoch.epoch_start,
                length=2 * 4 ** (epoch.n_I - 1),
                reason="exploit",
            )
        )
        epoch.phase = Phase.DECIDE
    return arm


class LempPolicy(BasePolicy):
    """Adaptive-hardness exploration with regenerative sampling."""

    name = "lemp"

    def __init__(
        self,
        n_arms: int,
        n_states: int,
        constants: ConstantsBundle,
        watchdog_cap: int = DEFAULT_SB1_WATCHDOG_CAP,
    ) -> None:
        super().__init__(n_arms)
        if constants.n_states != n_states:
            raise ScenarioError(
                f"constants were built for {constants.n_states} global states, model has {n_states}"
            )
        if watchdog_cap < 1:
            raise ScenarioError(f"sb1_watchdog_cap must be >= 1, got {watchdog_cap}")
        self.constants = constants
        self.watchdog_cap = watchdog_cap
        self.estimator = EstimatorState.empty(n_arms, n_states)
        self.epoch = EpochState.fresh(n_arms)
        self.epoch_log = self.epoch.log
        self.last_decision: Optional[Decision] = None

    # Hooks for the baselines sharing this machinery.

    def exploration_rates(self) -> Optional[np.ndarray]:
        return None

    def exploit_values(self, est: EstimatorState) -> np.ndarray:
        return value_estimates(est)[0]

    def select(self, t: int, last_revealed_state: int) -> int:
        epoch = self.epoch
        if epoch.phase is Phase.DECIDE:
            decision = decide_epoch(
                self.estimator,
                epoch,
                self.constants,
                t,
                rates=self.exploration_rates(),
                exploit_values=self.exploit_values,
            )
            self.last_decision = decision
            if decision.kind == "explore":
                begin_exploration(epoch, decision.arm, t, decision.reason)
        if epoch.phase is Phase.EXPLOIT:
            return exploit_step(epoch, last_revealed_state)
        return epoch.arm

    def observe(self, observation) -> None:
        update_on_observation(self.estimator, self.epoch, observation)
        if self.epoch.phase in (Phase.SB1, Phase.SB2):
            advance_exploration(self.epoch, observation, self.watchdog_cap)

    def exploration_epoch_counts(self) -> list:
        return list(self.epoch.n_O)

    def exploitation_epoch_count(self) -> int:
        return self.epoch.n_I

    def snapshot(self) -> dict:
        est = self.estimator
        values, _ = value_estimates(est)
        rates = self.exploration_rates()
        if rates is None:
            rates = hardness_estimate(est, self.constants)
        decision = self.last_decision
        return {
            "t": est.t,
            "mu_hat": est.mu_hat().tolist(),
            "p_hat": est.p_hat().tolist(),
            "v_hat": values.tolist(),
            "d_hat": np.asarray(rates).tolist(),
            "T": est.T.tolist(),
            "N_s": est.N_s.tolist(),
            "N_trans": est.N_trans.tolist(),
            "n_explore_epochs": list(self.epoch.n_O),
            "n_exploit_epochs": self.epoch.n_I,
            "gamma": list(self.epoch.gamma),
            "last_decision": None if decision is None else {
                "kind": decision.kind,
                "arm": decision.arm,
                "reason": decision.reason,
            },
        }
