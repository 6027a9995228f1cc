#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""The restless, Markov-modulated bandit world.

A global chain selects which of each arm's reward chains is active. All
N*|S| reward chains keep running every slot whether or not they are
played or active; the reward read at a slot comes from chain
(arm, current global state). Reward supports of one arm are disjoint
across global states, so a single reward reveals the global state.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from markov_core import (
    ChainSampler,
    TransitionMatrix,
    require_ergodic,
    stationary_distribution,
)
from sim_common import STRUCTURAL_TOL, ModelRejectedError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BanditModel:
    """All true parameters: global chain plus one reward chain per (arm, state)."""

    global_chain: TransitionMatrix
    arm_chains: tuple
    reward_values: tuple
    global_stationary: np.ndarray = field(init=False, repr=False)
    local_stationary: tuple = field(init=False, repr=False)
    _reward_table: tuple = field(init=False, repr=False)
    _state_lookup: tuple = field(init=False, repr=False)

    def __post_init__(self):
        n_states = self.global_chain.n
        if len(self.arm_chains) < 1:
            raise ModelRejectedError("model needs at least one arm")
        if len(self.reward_values) != len(self.arm_chains):
            raise ModelRejectedError(
                f"{len(self.arm_chains)} arms have chains but {len(self.reward_values)} have reward values"
            )
        require_ergodic(self.global_chain, "global chain")

        chains = []
        values = []
        for arm, (arm_chains, arm_values) in enumerate(zip(self.arm_chains, self.reward_values)):
            if len(arm_chains) != n_states or len(arm_values) != n_states:
                raise ModelRejectedError(
                    f"arm {arm} must define one chain and one value vector per global state ({n_states})"
                )
            per_state_values = []
            for state, (chain, state_values) in enumerate(zip(arm_chains, arm_values)):
                state_values = np.array(state_values, dtype=np.float64).reshape(-1)
                if state_values.size != chain.n:
                    raise ModelRejectedError(
                        f"arm {arm}, state {state}: {state_values.size} reward values for a {chain.n}-state chain"
                    )
                if np.any(~np.isfinite(state_values)) or np.any(state_values <= 0.0):
                    raise ModelRejectedError(
                        f"arm {arm}, state {state}: rewards must be finite and strictly positive"
                    )
                if len(set(state_values.tolist())) != state_values.size:
                    raise ModelRejectedError(
                        f"arm {arm}, state {state}: local states must carry distinct rewards"
                    )
                require_ergodic(chain, f"arm {arm}, state {state}")
                state_values.setflags(write=False)
                per_state_values.append(state_values)
            chains.append(tuple(arm_chains))
            values.append(tuple(per_state_values))

        lookups = []
        for arm, per_state_values in enumerate(values):
            lookup = {}
            for state, state_values in enumerate(per_state_values):
                for reward in state_values.tolist():
                    if reward in lookup:
                        raise ModelRejectedError(
                            f"arm {arm}: reward {reward!r} appears under global states "
                            f"{lookup[reward]} and {state}; supports must be disjoint"
                        )
                    lookup[reward] = state
            lookups.append(lookup)

        object.__setattr__(self, "arm_chains", tuple(chains))
        object.__setattr__(self, "reward_values", tuple(values))
        object.__setattr__(self, "global_stationary", stationary_distribution(self.global_chain))
        object.__setattr__(
            self,
            "local_stationary",
            tuple(tuple(stationary_distribution(chain) for chain in arm) for arm in chains),
        )
        object.__setattr__(
            self,
            "_reward_table",
            tuple(tuple(v.tolist() for v in arm) for arm in values),
        )
        object.__setattr__(self, "_state_lookup", tuple(lookups))

    @classmethod
    def build(cls, global_transition, arms) -> "BanditModel":
        """Build from plain lists: arms[i][s] = {"values": [...], "transition": [[...]]}."""
        return cls(
            global_chain=TransitionMatrix.from_rows(global_transition),
            arm_chains=tuple(
                tuple(TransitionMatrix.from_rows(state["transition"]) for state in arm)
                for arm in arms
            ),
            reward_values=tuple(tuple(state["values"] for state in arm) for arm in arms),
        )

    @property
    def n_arms(self) -> int:
        return len(self.arm_chains)

    @property
    def n_states(self) -> int:
        return self.global_chain.n

    @property
    def x_max(self) -> float:
        return max(float(v.max()) for arm in self.reward_values for v in arm)

    @property
    def x_count_max(self) -> int:
        return max(chain.n for arm in self.arm_chains for chain in arm)

    def reward_table(self) -> tuple:
        return self._reward_table

    def state_of_reward(self, arm: int, reward: float) -> int:
        """Recover the global state from one reward of the given arm."""
        return self._state_lookup[arm][reward]

    def to_dict(self) -> dict:
        return {
            "global_transition": self.global_chain.to_list(),
            "arms": [
                [
                    {"values": values.tolist(), "transition": chain.to_list()}
                    for chain, values in zip(arm_chains, arm_values)
                ]
                for arm_chains, arm_values in zip(self.arm_chains, self.reward_values)
            ],
        }


@dataclass(frozen=True, eq=False)
class ModelSummary:
    """Genie knowledge. Per-(arm, state) arrays are indexed [arm, state]."""

    pi_global: np.ndarray
    mu: np.ndarray
    values: np.ndarray
    best_value: np.ndarray
    best_arm: np.ndarray
    value_gaps: np.ndarray
    gaps: np.ndarray
    delta_s: np.ndarray
    delta: float

    @property
    def n_arms(self) -> int:
        return self.values.shape[0]

    @property
    def n_states(self) -> int:
        return self.values.shape[1]

    def to_dict(self) -> dict:
        return {
            "pi_global": self.pi_global.tolist(),
            "mu": self.mu.tolist(),
            "values": self.values.tolist(),
            "best_value": self.best_value.tolist(),
            "best_arm": self.best_arm.tolist(),
            "gaps": self.gaps.tolist(),
            "delta_s": self.delta_s.tolist(),
            "delta": self.delta,
        }


def summarize(model: BanditModel) -> ModelSummary:
    """Exact means, values, best arms and squared gaps from the true matrices."""
    n_arms, n_states = model.n_arms, model.n_states
    mu = np.zeros((n_arms, n_states))
    for arm in range(n_arms):
        for state in range(n_states):
            mu[arm, state] = float(
                model.reward_values[arm][state] @ model.local_stationary[arm][state]
            )

    # V_s^i = sum_s' p_{s s'} mu_{s'}^i
    values = mu @ model.global_chain.rows.T
    best_arm = np.argmax(values, axis=0)
    best_value = values[best_arm, np.arange(n_states)]

    if n_arms > 1:
        for state in range(n_states):
            ordered = np.sort(values[:, state])[::-1]
            if ordered[0] - ordered[1] <= STRUCTURAL_TOL:
                tied = np.flatnonzero(values[:, state] >= ordered[0] - STRUCTURAL_TOL).tolist()
                raise ModelRejectedError(
                    f"state {state}: arms {tied} tie for the best value {ordered[0]!r}"
                )

    value_gaps = best_value[np.newaxis, :] - values
    gaps = value_gaps ** 2
    delta_s = np.full(n_states, np.inf)
    for state in range(n_states):
        suboptimal = [arm for arm in range(n_arms) if arm != best_arm[state]]
        if suboptimal:
            delta_s[state] = gaps[suboptimal, state].min()
    return ModelSummary(
        pi_global=model.global_stationary.copy(),
        mu=mu,
        values=values,
        best_value=best_value,
        best_arm=best_arm,
        value_gaps=value_gaps,
        gaps=gaps,
        delta_s=delta_s,
        delta=float(delta_s.min()),
    )


@dataclass(frozen=True, slots=True)
class Observation:
    arm: int
    reward: float
    revealed_state: int
    counterfactual_rewards: tuple
    t: int = 0


@dataclass
class WorldState:
    t: int
    s_prev: int
    s_cur: int
    local: list


class WorldStreams:
    """One substream per chain plus one for the global chain and one for the policy."""

    def __init__(self, global_sampler: ChainSampler, chain_samplers: list, policy_rng) -> None:
        self.global_sampler = global_sampler
        self.chain_samplers = chain_samplers
        self.policy_rng = policy_rng

    @classmethod
    def from_seed(cls, model: BanditModel, seed: int) -> "WorldStreams":
        children = np.random.SeedSequence(seed).spawn(2 + model.n_arms * model.n_states)
        global_sampler = ChainSampler(model.global_chain, np.random.default_rng(children[0]))
        policy_rng = np.random.default_rng(children[1])
        chain_samplers = []
        child = 2
        for arm in range(model.n_arms):
            per_state = []
            for state in range(model.n_states):
                per_state.append(
                    ChainSampler(model.arm_chains[arm][state], np.random.default_rng(children[child]))
                )
                child += 1
            chain_samplers.append(per_state)
        return cls(global_sampler, chain_samplers, policy_rng)


def init(model: BanditModel, streams: WorldStreams) -> WorldState:
    """Draw every chain from its stationary distribution; reveal the starting state."""
    s_cur = streams.global_sampler.initial(model.global_stationary)
    local = [
        [
            streams.chain_samplers[arm][state].initial(model.local_stationary[arm][state])
            for state in range(model.n_states)
        ]
        for arm in range(model.n_arms)
    ]
    return WorldState(t=0, s_prev=s_cur, s_cur=s_cur, local=local)


def step(world: WorldState, model: BanditModel, arm: int, streams: WorldStreams) -> Observation:
    """Read rewards, advance every local chain, then advance the global chain."""
    state = world.s_cur
    table = model.reward_table()
    local = world.local
    counterfactual = tuple(
        table[i][state][local[i][state]] for i in range(len(table))
    )

    samplers = streams.chain_samplers
    for i, arm_local in enumerate(local):
        arm_samplers = samplers[i]
        for s in range(len(arm_local)):
            arm_local[s] = arm_samplers[s].next(arm_local[s])

    world.s_prev = state
    world.s_cur = streams.global_sampler.next(state)
    world.t += 1
    return Observation(
        arm=arm,
        reward=counterfactual[arm],
        revealed_state=state,
        counterfactual_rewards=counterfactual,
        t=world.t,
    )


class RestlessWorld:
    """A world handle owning its state and streams; what policies are run against."""

    def __init__(self, model: BanditModel, seed: int) -> None:
        self.model = model
        self.streams = WorldStreams.from_seed(model, seed)
        self.state = init(model, self.streams)

    @property
    def revealed_state(self) -> int:
        return self.state.s_prev

    @property
    def policy_rng(self):
        return self.streams.policy_rng

    def play(self, arm: int) -> Observation:
        if not 0 <= arm < self.model.n_arms:
            raise ValueError(f"arm {arm} outside 0..{self.model.n_arms - 1}")
        return step(self.state, self.model, arm, self.streams)
