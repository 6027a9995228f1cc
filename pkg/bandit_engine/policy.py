#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""Reference policies: genie, uniform random, best-on-average and extended DSEE.

The two learning baselines reuse the LEMP epoch machinery unchanged and
differ only in one decision rule each, so comparisons isolate that rule.
"""

from __future__ import annotations

import numpy as np

from lemp import DEFAULT_SB1_WATCHDOG_CAP, ConstantsBundle, EstimatorState, LempPolicy, value_estimates
from sim_common import BasePolicy, ScenarioError

POLICY_NAMES = ("lemp", "dsee", "best-average", "genie", "uniform-random")


def genie_select(summary, s_prev: int) -> int:
    return int(summary.best_arm[s_prev])


class GeniePolicy(BasePolicy):
    """Knows every true parameter and plays argmax_i V_{s_prev}^i."""

    name = "genie"

    def __init__(self, summary) -> None:
        super().__init__(summary.n_arms)
        self._summary = summary

    def select(self, t, last_revealed_state):
        return genie_select(self._summary, last_revealed_state)

    def observe(self, observation):
        pass


class UniformRandomPolicy(BasePolicy):
    name = "uniform-random"

    def __init__(self, n_arms: int, rng: np.random.Generator) -> None:
        super().__init__(n_arms)
        self.rng = rng

    def select(self, t, last_revealed_state):
        return int(self.rng.integers(self.n_arms))

    def observe(self, observation):
        pass


class BestOnAveragePolicy(LempPolicy):
    """LEMP exploration; exploitation plays the best state-averaged arm."""

    name = "best-average"

    def exploit_values(self, est: EstimatorState) -> np.ndarray:
        values, _ = value_estimates(est)
        weights = est.N_s / max(est.t, 1)
        averaged = values @ weights
        # Same arm under every revealed state.
        return np.repeat(averaged[:, np.newaxis], est.n_states, axis=1)


class ExtendedDseePolicy(LempPolicy):
    """LEMP with the hardness estimate replaced by the worst-case rate 4L/Delta.

    Every arm then shares one rate, so the global-state explore condition,
    which samples the arm of smallest rate, always falls to arm 0. That is
    the DSEE reading of the rule: no arm is preferred, the lowest index
    breaks the tie.
    """

    name = "dsee"

    def exploration_rates(self) -> np.ndarray:
        return np.full(
            (self.n_arms, self.estimator.n_states), self.constants.worst_case_rate
        )


def best_on_average_policy(
    n_arms: int,
    n_states: int,
    constants: ConstantsBundle,
    watchdog_cap: int = DEFAULT_SB1_WATCHDOG_CAP,
) -> BestOnAveragePolicy:
    return BestOnAveragePolicy(n_arms, n_states, constants, watchdog_cap)


def dsee_extended_policy(
    n_arms: int,
    n_states: int,
    constants: ConstantsBundle,
    watchdog_cap: int = DEFAULT_SB1_WATCHDOG_CAP,
) -> ExtendedDseePolicy:
    return ExtendedDseePolicy(n_arms, n_states, constants, watchdog_cap)


def make_policy(
    name: str,
    model,
    summary,
    constants: ConstantsBundle,
    rng: np.random.Generator,
    watchdog_cap: int = DEFAULT_SB1_WATCHDOG_CAP,
) -> BasePolicy:
    if name == "lemp":
        return LempPolicy(model.n_arms, model.n_states, constants, watchdog_cap)
    if name == "dsee":
        return dsee_extended_policy(model.n_arms, model.n_states, constants, watchdog_cap)
    if name == "best-average":
        return best_on_average_policy(model.n_arms, model.n_states, constants, watchdog_cap)
    if name == "genie":
        return GeniePolicy(summary)
    if name == "uniform-random":
        return UniformRandomPolicy(model.n_arms, rng)
    raise ScenarioError(f"unknown policy: {name} (expected one of {', '.join(POLICY_NAMES)})")
