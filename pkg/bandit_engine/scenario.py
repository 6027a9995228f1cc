#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""Scenario files: schema, loading, seed derivation, logging grid and presets."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from environment import BanditModel, summarize
from lemp import DEFAULT_SB1_WATCHDOG_CAP, ConstantsBundle, oracle_constants
from sim_common import BenchError, ScenarioError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CONSTANTS_MODES = ("oracle", "bounds")
OVERRIDE_KEYS = ("L", "I_L", "I_G")
DEFAULT_GRID_POINTS = 50
GRID_START = 100

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(value: int) -> int:
    z = value & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, k: int) -> int:
    """seed_k = splitmix64(master + (k + 1) * 0x9E3779B97F4A7C15 mod 2^64)."""
    return splitmix64((master_seed + (k + 1) * _GOLDEN_GAMMA) & _MASK64)


@dataclass(frozen=True)
class ConstantBounds:
    """User-supplied conservative bounds for the bounds constants mode."""

    x_max: float
    x_count_max: int
    v_star_max: float
    lambda_bar_min: float
    pi_hat_max: float = 1.0


@dataclass(frozen=True)
class PolicyConfig:
    epsilon: Optional[float] = None
    delta: Optional[float] = None
    constants_mode: str = "oracle"
    bounds: Optional[ConstantBounds] = None
    overrides: dict = field(default_factory=dict)
    sb1_watchdog_cap: int = DEFAULT_SB1_WATCHDOG_CAP

    def __post_init__(self):
        if self.constants_mode not in CONSTANTS_MODES:
            raise ScenarioError(
                f"constants_mode must be one of {CONSTANTS_MODES}, got {self.constants_mode!r}"
            )
        unknown = set(self.overrides) - set(OVERRIDE_KEYS)
        if unknown:
            raise ScenarioError(f"unknown constant overrides: {sorted(unknown)}")
        if self.sb1_watchdog_cap < 1:
            raise ScenarioError(f"sb1_watchdog_cap must be >= 1, got {self.sb1_watchdog_cap}")


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    model: BanditModel
    horizon: int
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    seed_count: int = 1
    master_seed: int = 0
    seed_list: Optional[tuple] = None
    grid: Optional[tuple] = None
    grid_points: int = DEFAULT_GRID_POINTS
    notes: str = ""

    def __post_init__(self):
        if self.horizon < 1:
            raise ScenarioError(f"horizon must be >= 1, got {self.horizon}")
        if self.seed_list is not None:
            if not self.seed_list:
                raise ScenarioError("seed list is empty")
        elif self.seed_count < 1:
            raise ScenarioError(f"need at least one seed, got count {self.seed_count}")
        if self.grid is not None:
            grid = list(self.grid)
            if not grid:
                raise ScenarioError("logging grid is empty")
            if grid != sorted(set(grid)):
                raise ScenarioError("logging grid must be strictly increasing")
            if grid[0] < 1 or grid[-1] > self.horizon:
                raise ScenarioError(f"logging grid must lie within [1, {self.horizon}]")
        if self.grid_points < 1:
            raise ScenarioError(f"grid_points must be >= 1, got {self.grid_points}")

    def seeds(self) -> list:
        if self.seed_list is not None:
            return list(self.seed_list)
        return [derive_seed(self.master_seed, k) for k in range(self.seed_count)]

    def logging_grid(self) -> tuple:
        if self.grid is not None:
            return tuple(self.grid)
        return default_grid(self.horizon, self.grid_points)

    def replace(self, **changes) -> "Scenario":
        if "horizon" in changes and "grid" not in changes and self.grid is not None:
            changes["grid"] = tuple(t for t in self.grid if t <= changes["horizon"]) or None
        return dataclasses.replace(self, **changes)


def default_grid(horizon: int, points: int = DEFAULT_GRID_POINTS) -> tuple:
    """Log-spaced slots over [100, horizon]; every slot when the horizon is short."""
    if horizon <= GRID_START:
        if horizon <= points:
            return tuple(range(1, horizon + 1))
        raw = np.geomspace(1, horizon, points)
    else:
        raw = np.geomspace(GRID_START, horizon, points)
    grid = sorted(set(int(round(v)) for v in raw) | {horizon})
    return tuple(t for t in grid if 1 <= t <= horizon)


def resolve_constants(scenario: Scenario, summary=None) -> ConstantsBundle:
    config = scenario.policy
    model = scenario.model
    if config.constants_mode == "oracle":
        if config.overrides:
            logger.warning("oracle constants mode ignores overrides %s", sorted(config.overrides))
        summary = summary if summary is not None else summarize(model)
        return oracle_constants(model, summary, epsilon=config.epsilon, delta=config.delta)

    if config.delta is None:
        raise ScenarioError("bounds constants mode needs policy.delta")
    if config.bounds is None:
        raise ScenarioError("bounds constants mode needs policy.bounds")
    bounds = config.bounds
    return ConstantsBundle(
        x_max=bounds.x_max,
        x_count_max=bounds.x_count_max,
        n_states=model.n_states,
        v_star_max=bounds.v_star_max,
        pi_hat_max=bounds.pi_hat_max,
        lambda_bar_min=bounds.lambda_bar_min,
        delta=config.delta,
        epsilon=config.delta / 4.0 if config.epsilon is None else config.epsilon,
        **config.overrides,
    )


# ----------------------------------------------------------------------
# JSON
# ----------------------------------------------------------------------


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ScenarioError(f"{where}: missing required field '{key}'")
    return mapping[key]


def scenario_from_dict(payload: dict) -> Scenario:
    if not isinstance(payload, dict):
        raise ScenarioError("scenario must be a JSON object")
    version = _require(payload, "schema_version", "scenario")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")

    model_payload = _require(payload, "model", "scenario")
    try:
        model = BanditModel.build(
            _require(model_payload, "global_transition", "model"),
            _require(model_payload, "arms", "model"),
        )
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"model: malformed arm definition ({exc})") from exc

    policy_payload = payload.get("policy", {}) or {}
    bounds_payload = policy_payload.get("bounds")
    try:
        bounds = ConstantBounds(**bounds_payload) if bounds_payload else None
    except TypeError as exc:
        raise ScenarioError(f"policy.bounds: {exc}") from exc
    policy = PolicyConfig(
        epsilon=policy_payload.get("epsilon"),
        delta=policy_payload.get("delta"),
        constants_mode=policy_payload.get("constants_mode", "oracle"),
        bounds=bounds,
        overrides=dict(policy_payload.get("overrides") or {}),
        sb1_watchdog_cap=int(policy_payload.get("sb1_watchdog_cap", DEFAULT_SB1_WATCHDOG_CAP)),
    )

    seeds_payload = payload.get("seeds", {}) or {}
    grid_payload = payload.get("grid", {}) or {}
    seed_list = seeds_payload.get("list")
    slots = grid_payload.get("slots")
    return Scenario(
        name=payload.get("name", "unnamed"),
        notes=payload.get("notes", ""),
        model=model,
        horizon=int(_require(payload, "horizon", "scenario")),
        policy=policy,
        seed_count=int(seeds_payload.get("count", 1)),
        master_seed=int(seeds_payload.get("master_seed", 0)),
        seed_list=tuple(int(s) for s in seed_list) if seed_list is not None else None,
        grid=tuple(int(t) for t in slots) if slots is not None else None,
        grid_points=int(grid_payload.get("points", DEFAULT_GRID_POINTS)),
    )


def scenario_to_dict(scenario: Scenario) -> dict:
    config = scenario.policy
    seeds = (
        {"list": list(scenario.seed_list)}
        if scenario.seed_list is not None
        else {"count": scenario.seed_count, "master_seed": scenario.master_seed}
    )
    grid = {"slots": list(scenario.grid)} if scenario.grid is not None else {"points": scenario.grid_points}
    return {
        "schema_version": SCHEMA_VERSION,
        "name": scenario.name,
        "notes": scenario.notes,
        "model": scenario.model.to_dict(),
        "horizon": scenario.horizon,
        "seeds": seeds,
        "grid": grid,
        "policy": {
            "epsilon": config.epsilon,
            "delta": config.delta,
            "constants_mode": config.constants_mode,
            "bounds": dataclasses.asdict(config.bounds) if config.bounds else None,
            "overrides": dict(config.overrides),
            "sb1_watchdog_cap": config.sb1_watchdog_cap,
        },
    }


def load_scenario(path: str) -> Scenario:
    if not os.path.isfile(path):
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file is not valid JSON: {exc}") from exc
    scenario = scenario_from_dict(payload)
    logger.info(
        "loaded scenario %s: %d arms, %d global states, horizon %d",
        scenario.name,
        scenario.model.n_arms,
        scenario.model.n_states,
        scenario.horizon,
    )
    return scenario


def save_scenario(scenario: Scenario, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = path + ".tmp"
    with open(tmp_path, "w", encoding="utf-8") as f:
        json.dump(scenario_to_dict(scenario), f, ensure_ascii=False, indent=2)
        f.write("\n")
    os.replace(tmp_path, path)


# ----------------------------------------------------------------------
# Presets
# ----------------------------------------------------------------------

# Global state 0: primary user idle; 1: primary user transmitting.
_GE_GLOBAL = [[0.95, 0.05], [0.10, 0.90]]

# Three secondary channels as small FSMCs, indexed [arm][global state].
_FSMC_ARMS = [
    [
        {"values": [3.0, 4.0], "transition": [[0.7, 0.3], [0.2, 0.8]]},
        {"values": [0.5, 1.0], "transition": [[0.8, 0.2], [0.4, 0.6]]},
    ],
    [
        {"values": [2.6, 3.2], "transition": [[0.6, 0.4], [0.4, 0.6]]},
        {"values": [2.2, 2.7], "transition": [[0.5, 0.5], [0.3, 0.7]]},
    ],
    [
        {"values": [0.4, 0.6], "transition": [[0.6, 0.4], [0.4, 0.6]]},
        {"values": [0.3, 0.5], "transition": [[0.6, 0.4], [0.4, 0.6]]},
    ],
]

_GE_OVERRIDES = {"L": 4.75, "I_L": 400.0, "I_G": 400.0}

PRESET_NAMES = ("gilbert-elliott-fsmc",)


def preset_gilbert_elliott_fsmc() -> Scenario:
    """Two-state Gilbert-Elliott primary user over three FSMC channels.

    The numbers are a reconstruction: channel 0 is best while the primary
    user is idle, channel 1 while it transmits, channel 1 is best on
    average, and channel 2 is poor everywhere. Delta is computed from the
    model itself and epsilon is Delta / 4.

    L = 4.75 puts the worst-case rate 4L/Delta near 58. Channel 0 then
    settles on five exploration epochs (about 900 SB2 samples while the
    user is idle) and channel 1 on six, both well before slot 10^4. At
    their expected counts neither is due another epoch before 10^6, which
    leaves every cell enough samples to pin its mean within 0.05. A larger
    L pushes channel 0's sixth epoch into the 10^5..10^6 window, where
    regret outgrows log t; a smaller one leaves channel 0 under-sampled
    while the user is idle. I_L and I_G stay at 400: the rate floor
    2/(eps^2 I) is then about 0.75, below every hardness estimate, so LEMP
    and DSEE differ only through D-hat.
    """
    model = BanditModel.build(_GE_GLOBAL, _FSMC_ARMS)
    summary = summarize(model)
    if len(set(summary.best_arm.tolist())) < 2:
        raise BenchError("preset must have different best arms across global states")
    delta = summary.delta
    return Scenario(
        name="gilbert-elliott-fsmc",
        notes=(
            "Reconstructed Gilbert-Elliott global chain with three FSMC channels; "
            "practical overrides for L, I_L, I_G. Use constants_mode=oracle for theory constants."
        ),
        model=model,
        horizon=1_000_000,
        policy=PolicyConfig(
            epsilon=delta / 4.0,
            delta=delta,
            constants_mode="bounds",
            bounds=ConstantBounds(
                x_max=model.x_max,
                x_count_max=model.x_count_max,
                v_star_max=3.5,
                lambda_bar_min=0.4,
                pi_hat_max=1.0,
            ),
            overrides=dict(_GE_OVERRIDES),
        ),
        seed_count=20,
        master_seed=2021,
    )


def get_preset(name: str) -> Scenario:
    if name == "gilbert-elliott-fsmc":
        return preset_gilbert_elliott_fsmc()
    raise ScenarioError(f"unknown preset: {name} (expected one of {', '.join(PRESET_NAMES)})")
