#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""Finite-sample regret upper bound for LEMP, evaluated from the true model.

The additive O(1) term of the bound has no numeric form; it is reported
symbolically and left out of every returned value.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from markov_core import analyze
from sim_common import BenchError

logger = logging.getLogger(__name__)

UNQUANTIFIED_TERM = "O(1)"


@dataclass(frozen=True, eq=False)
class BoundInputs:
    """Everything the bound reads. Per-(arm, state) arrays are indexed [arm, state]."""

    n_arms: int
    n_states: int
    x_max: float
    x_count_max: int
    pi_min: float
    pi_hat_max: float
    lambda_max: float
    lambda_bar_min: float
    hitting_max_per_state: np.ndarray
    hitting_max: np.ndarray
    pi_global: np.ndarray
    values: np.ndarray
    best_value: np.ndarray
    best_arm: np.ndarray
    delta_s: np.ndarray
    delta: float
    epsilon: float
    L: float
    I_L: float
    I_G: float

    def to_dict(self) -> dict:
        return {
            "n_arms": self.n_arms,
            "n_states": self.n_states,
            "x_max": self.x_max,
            "x_count_max": self.x_count_max,
            "pi_min": self.pi_min,
            "pi_hat_max": self.pi_hat_max,
            "lambda_max": self.lambda_max,
            "lambda_bar_min": self.lambda_bar_min,
            "hitting_max": self.hitting_max.tolist(),
            "pi_global": self.pi_global.tolist(),
            "delta": self.delta,
            "epsilon": self.epsilon,
            "L": self.L,
            "I_L": self.I_L,
            "I_G": self.I_G,
        }


def bound_inputs(model, summary, constants) -> BoundInputs:
    """Collect the bound's inputs; delta, epsilon, L, I_L, I_G come from ``constants``."""
    n_arms, n_states = model.n_arms, model.n_states
    hitting_max_per_state = np.zeros((n_arms, n_states))
    slems = []
    pi_min = math.inf
    pi_hat_max = 0.0
    for arm in range(n_arms):
        for state in range(n_states):
            analysis = analyze(model.arm_chains[arm][state])
            hitting_max_per_state[arm, state] = analysis.max_hitting_time
            slems.append(analysis.slem)
            pi = analysis.stationary
            pi_min = min(pi_min, float(pi.min()))
            pi_hat_max = max(pi_hat_max, float(np.max(np.maximum(pi, 1.0 - pi))))
    lambda_max = max(slems)
    return BoundInputs(
        n_arms=n_arms,
        n_states=n_states,
        x_max=model.x_max,
        x_count_max=model.x_count_max,
        pi_min=pi_min,
        pi_hat_max=pi_hat_max,
        lambda_max=lambda_max,
        lambda_bar_min=1.0 - lambda_max,
        hitting_max_per_state=hitting_max_per_state,
        hitting_max=hitting_max_per_state.max(axis=1),
        pi_global=summary.pi_global.copy(),
        values=summary.values.copy(),
        best_value=summary.best_value.copy(),
        best_arm=summary.best_arm.copy(),
        delta_s=summary.delta_s.copy(),
        delta=constants.delta,
        epsilon=constants.epsilon,
        L=constants.L,
        I_L=constants.I_L,
        I_G=constants.I_G,
    )


def classify_K(summary, epsilon: float) -> list:
    """Per state, the suboptimal arms with (V* - V)^2 - 2 eps > Delta_s."""
    finite = summary.delta_s[np.isfinite(summary.delta_s)]
    if finite.size and epsilon >= finite.min() / 2.0:
        logger.warning(
            "epsilon=%.6g is not below min_s Delta_s / 2 = %.6g; K_s sets shrink",
            epsilon,
            finite.min() / 2.0,
        )
    gaps = (summary.best_value[np.newaxis, :] - summary.values) ** 2
    k_sets = []
    for state in range(summary.values.shape[1]):
        k_sets.append(
            {
                arm
                for arm in range(summary.values.shape[0])
                if arm != int(summary.best_arm[state])
                and gaps[arm, state] - 2.0 * epsilon > summary.delta_s[state]
            }
        )
    return k_sets


def compute_A(arm: int, inputs: BoundInputs, k_sets=None) -> float:
    if k_sets is None:
        k_sets = classify_K(inputs, inputs.epsilon)
    floor = max(2.0 / inputs.I_L, 2.0 / inputs.I_G)
    if all(arm in k_sets[state] for state in range(inputs.n_states)):
        worst = 0.0
        for state in range(inputs.n_states):
            denominator = (inputs.best_value[state] - inputs.values[arm, state]) ** 2 - 2.0 * inputs.epsilon
            if denominator <= 0:
                raise BenchError(
                    f"arm {arm}, state {state}: (V* - V)^2 - 2 eps = {denominator!r} is not positive"
                )
            worst = max(worst, 4.0 * inputs.L / denominator)
        return max(floor, worst)
    return max(floor, 4.0 * inputs.L / inputs.delta)


def regret_bound(t: int, inputs: BoundInputs, a_values=None) -> float:
    """Bound value at slot t, excluding the unquantified additive constant."""
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    if a_values is None:
        k_sets = classify_K(inputs, inputs.epsilon)
        a_values = [compute_A(arm, inputs, k_sets) for arm in range(inputs.n_arms)]
    log_t = math.log(t)
    per_arm = 0.0
    for arm, a in enumerate(a_values):
        inner = 3.0 * a * log_t + 1.0
        per_arm += (4.0 * inner - 1.0) / 3.0 + inputs.hitting_max[arm] * math.log(inner, 4)
    n, s = inputs.n_arms, inputs.n_states
    state_term = (
        6.0
        * n
        * s
        * (s * inputs.x_count_max / inputs.pi_min + 2.0 * s)
        * float(inputs.pi_global.max())
        * math.ceil(math.log(1.5 * t + 1.0, 4))
    )
    return inputs.x_max * (per_arm + state_term)


def bound_curve(grid, inputs: BoundInputs) -> list:
    k_sets = classify_K(inputs, inputs.epsilon)
    a_values = [compute_A(arm, inputs, k_sets) for arm in range(inputs.n_arms)]
    return [(int(t), regret_bound(int(t), inputs, a_values)) for t in grid]


def exploration_budget(arm: int, t: int, inputs: BoundInputs, a_value=None) -> float:
    """Upper bound on arm's exploration-epoch count by slot t: log_4(3 A log t + 1) + 1."""
    a = compute_A(arm, inputs) if a_value is None else a_value
    return math.log(3.0 * a * math.log(t) + 1.0, 4) + 1.0
