#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""Seeded Monte Carlo runs, regret accounting, aggregation and CSV output."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from bound import bound_curve, bound_inputs
from environment import RestlessWorld, summarize
from policy import make_policy
from scenario import resolve_constants
from sim_common import WatchdogAbort

logger = logging.getLogger(__name__)

LEMP_FAMILY = ("lemp", "dsee", "best-average")

RESULTS_COLUMNS = (
    "policy",
    "seed",
    "t",
    "pseudo_regret",
    "sampled_regret",
    "pseudo_regret_over_logt",
    "n_explore_epochs_total",
    "n_exploit_epochs",
)

COMPARE_COLUMNS = (
    "policy",
    "t",
    "n_runs",
    "n_failed",
    "mean_pseudo_regret",
    "stderr_pseudo_regret",
    "mean_sampled_regret",
    "stderr_sampled_regret",
    "mean_pseudo_regret_over_logt",
    "bound_value",
)

BOUND_COLUMNS = ("t", "bound_value")


def over_log_t(value: float, t: int) -> float:
    return math.nan if t <= 1 else value / math.log(t)


class RegretLedger:
    """Pseudo-regret and sampled regret against the one-step-ahead genie.

    Both are charged on the revealed state the decision was made under.
    Regret accrued since the last closed epoch is held as pending until
    the policy closes the epoch.
    """

    def __init__(self, summary) -> None:
        self._gaps = summary.value_gaps.tolist()
        self._best = [int(arm) for arm in summary.best_arm]
        self.pseudo_regret = 0.0
        self.sampled_regret = 0.0
        self.pending = 0.0

    def charge(self, s_prev: int, arm: int, counterfactual_rewards) -> float:
        gap = self._gaps[arm][s_prev]
        if arm != self._best[s_prev]:
            self.pseudo_regret += gap
            self.pending += gap
        self.sampled_regret += counterfactual_rewards[self._best[s_prev]] - counterfactual_rewards[arm]
        return gap

    def close_epochs(self, records) -> None:
        for record in records:
            record.pseudo_regret = self.pending
            self.pending = 0.0


@dataclass
class GridRow:
    t: int
    pseudo_regret: float
    sampled_regret: float
    pseudo_regret_over_logt: float
    n_explore_epochs_total: int
    n_exploit_epochs: int


@dataclass
class RunRecord:
    policy: str
    seed: int
    horizon: int
    rows: list
    pseudo_regret: float
    sampled_regret: float
    exploration_counts: list
    exploitation_count: int
    epoch_log: list = field(default_factory=list)
    open_epoch_pseudo_regret: float = 0.0
    sb2_totals: Optional[list] = None
    snapshot: Optional[dict] = None
    trace: Optional[list] = None

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "seed": self.seed,
            "horizon": self.horizon,
            "pseudo_regret": self.pseudo_regret,
            "sampled_regret": self.sampled_regret,
            "exploration_counts": list(self.exploration_counts),
            "exploitation_count": self.exploitation_count,
            "epoch_log": [record.to_dict() for record in self.epoch_log],
            "open_epoch_pseudo_regret": self.open_epoch_pseudo_regret,
            "sb2_totals": self.sb2_totals,
            "snapshot": self.snapshot,
        }


def run(
    scenario,
    seed: int,
    policy_name: str = "lemp",
    constants=None,
    summary=None,
    record_trace: bool = False,
) -> RunRecord:
    """One seeded run; deterministic given (scenario, seed, policy)."""
    model = scenario.model
    if summary is None:
        summary = summarize(model)
    if constants is None and policy_name in LEMP_FAMILY:
        constants = resolve_constants(scenario, summary)

    world = RestlessWorld(model, seed)
    policy = make_policy(
        policy_name,
        model,
        summary,
        constants,
        world.policy_rng,
        scenario.policy.sb1_watchdog_cap,
    )
    ledger = RegretLedger(summary)
    grid = scenario.logging_grid()
    rows = []
    trace = [] if record_trace else None
    next_row = 0
    closed = 0
    epoch_log = policy.epoch_log

    logger.info("run start: policy=%s seed=%d horizon=%d", policy_name, seed, scenario.horizon)
    for t in range(1, scenario.horizon + 1):
        s_prev = world.revealed_state
        arm = policy.select(t, s_prev)
        obs = world.play(arm)
        policy.observe(obs)
        ledger.charge(s_prev, arm, obs.counterfactual_rewards)
        if trace is not None:
            trace.append((t, s_prev, arm, obs.counterfactual_rewards))
        if len(epoch_log) > closed:
            ledger.close_epochs(epoch_log[closed:])
            closed = len(epoch_log)

        if next_row < len(grid) and grid[next_row] == t:
            rows.append(
                GridRow(
                    t=t,
                    pseudo_regret=ledger.pseudo_regret,
                    sampled_regret=ledger.sampled_regret,
                    pseudo_regret_over_logt=over_log_t(ledger.pseudo_regret, t),
                    n_explore_epochs_total=sum(policy.exploration_epoch_counts()),
                    n_exploit_epochs=policy.exploitation_epoch_count(),
                )
            )
            next_row += 1

    estimator = getattr(policy, "estimator", None)
    logger.info(
        "run done: policy=%s seed=%d pseudo_regret=%.6g sampled_regret=%.6g",
        policy_name,
        seed,
        ledger.pseudo_regret,
        ledger.sampled_regret,
    )
    return RunRecord(
        policy=policy_name,
        seed=seed,
        horizon=scenario.horizon,
        rows=rows,
        pseudo_regret=ledger.pseudo_regret,
        sampled_regret=ledger.sampled_regret,
        exploration_counts=policy.exploration_epoch_counts(),
        exploitation_count=policy.exploitation_epoch_count(),
        epoch_log=list(epoch_log),
        open_epoch_pseudo_regret=ledger.pending,
        sb2_totals=estimator.T.tolist() if estimator is not None else None,
        snapshot=policy.snapshot(),
        trace=trace,
    )


def replay_regret(trace, summary):
    """Recompute (pseudo, sampled) regret offline from a recorded trace."""
    ledger = RegretLedger(summary)
    for _t, s_prev, arm, counterfactual in trace:
        ledger.charge(s_prev, arm, counterfactual)
    return ledger.pseudo_regret, ledger.sampled_regret


# ----------------------------------------------------------------------
# Batches
# ----------------------------------------------------------------------


@dataclass
class AggregateRow:
    t: int
    n_runs: int
    n_failed: int
    mean_pseudo_regret: float
    stderr_pseudo_regret: float
    mean_sampled_regret: float
    stderr_sampled_regret: float
    mean_pseudo_regret_over_logt: float


@dataclass
class BatchResult:
    policy: str
    runs: list
    failed: list
    rows: list
    aborts: list = field(default_factory=list)


def _mean_stderr(samples: np.ndarray):
    if samples.size == 0:
        return math.nan, math.nan
    mean = float(samples.mean())
    if samples.size == 1:
        return mean, 0.0
    return mean, float(samples.std(ddof=1) / math.sqrt(samples.size))


def aggregate(runs, n_failed: int = 0) -> list:
    """Per-grid-point mean and standard error, folded in the given run order."""
    if not runs:
        return []
    grid = [row.t for row in runs[0].rows]
    aggregated = []
    for index, t in enumerate(grid):
        pseudo = np.array([record.rows[index].pseudo_regret for record in runs])
        sampled = np.array([record.rows[index].sampled_regret for record in runs])
        mean_pseudo, se_pseudo = _mean_stderr(pseudo)
        mean_sampled, se_sampled = _mean_stderr(sampled)
        aggregated.append(
            AggregateRow(
                t=t,
                n_runs=len(runs),
                n_failed=n_failed,
                mean_pseudo_regret=mean_pseudo,
                stderr_pseudo_regret=se_pseudo,
                mean_sampled_regret=mean_sampled,
                stderr_sampled_regret=se_sampled,
                mean_pseudo_regret_over_logt=over_log_t(mean_pseudo, t),
            )
        )
    return aggregated


def _run_job(job):
    scenario, seed, policy_name, constants, summary = job
    return run(scenario, seed, policy_name, constants=constants, summary=summary)


def run_batch(scenario, policy_name: str = "lemp", workers: int = 1, constants=None) -> BatchResult:
    """Run every seed of the scenario; watchdog aborts are excluded and counted."""
    summary = summarize(scenario.model)
    if constants is None and policy_name in LEMP_FAMILY:
        constants = resolve_constants(scenario, summary)
    seeds = scenario.seeds()
    jobs = [(scenario, seed, policy_name, constants, summary) for seed in seeds]
    logger.info("batch start: policy=%s runs=%d workers=%d", policy_name, len(jobs), workers)

    runs, failed, aborts = [], [], []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = [executor.submit(_run_job, job) for job in jobs]
            outcomes = []
            for future in futures:
                try:
                    outcomes.append(future.result())
                except WatchdogAbort as exc:
                    outcomes.append(exc)
    else:
        outcomes = []
        for job in jobs:
            try:
                outcomes.append(_run_job(job))
            except WatchdogAbort as exc:
                outcomes.append(exc)

    for seed, outcome in zip(seeds, outcomes):
        if isinstance(outcome, WatchdogAbort):
            logger.error("run failed: policy=%s seed=%d: %s", policy_name, seed, outcome)
            failed.append({"seed": seed, "error": str(outcome), "type": outcome.error_type})
            aborts.append(outcome)
        else:
            runs.append(outcome)

    logger.info("batch done: policy=%s ok=%d failed=%d", policy_name, len(runs), len(failed))
    return BatchResult(
        policy=policy_name,
        runs=runs,
        failed=failed,
        rows=aggregate(runs, n_failed=len(failed)),
        aborts=aborts,
    )


def compare(scenario, policies, workers: int = 1):
    """Batch every policy and attach the bound, evaluated with the effective constants."""
    summary = summarize(scenario.model)
    constants = resolve_constants(scenario, summary)
    inputs = bound_inputs(scenario.model, summary, constants)
    bound_by_t = dict(bound_curve(scenario.logging_grid(), inputs))
    results = [
        run_batch(
            scenario,
            name,
            workers=workers,
            constants=constants if name in LEMP_FAMILY else None,
        )
        for name in policies
    ]
    return results, bound_by_t


# ----------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path: str, columns, rows) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(value) for value in row])


def _read_rows(path: str, columns, types) -> list:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != tuple(columns):
            raise ValueError(f"{path}: unexpected header {header}")
        return [tuple(cast(value) for cast, value in zip(types, row)) for row in reader]


_RESULTS_TYPES = (str, int, int, float, float, float, int, int)
_COMPARE_TYPES = (str, int, int, int, float, float, float, float, float, float)
_BOUND_TYPES = (int, float)


def results_rows(records) -> list:
    return [
        (
            record.policy,
            record.seed,
            row.t,
            row.pseudo_regret,
            row.sampled_regret,
            row.pseudo_regret_over_logt,
            row.n_explore_epochs_total,
            row.n_exploit_epochs,
        )
        for record in records
        for row in record.rows
    ]


def write_results_csv(path: str, rows) -> None:
    _write_rows(path, RESULTS_COLUMNS, rows)


def read_results_csv(path: str) -> list:
    return _read_rows(path, RESULTS_COLUMNS, _RESULTS_TYPES)


def compare_rows(results, bound_by_t) -> list:
    return [
        (
            result.policy,
            row.t,
            row.n_runs,
            row.n_failed,
            row.mean_pseudo_regret,
            row.stderr_pseudo_regret,
            row.mean_sampled_regret,
            row.stderr_sampled_regret,
            row.mean_pseudo_regret_over_logt,
            float(bound_by_t.get(row.t, math.nan)),
        )
        for result in results
        for row in result.rows
    ]


def write_compare_csv(path: str, rows) -> None:
    _write_rows(path, COMPARE_COLUMNS, rows)


def read_compare_csv(path: str) -> list:
    return _read_rows(path, COMPARE_COLUMNS, _COMPARE_TYPES)


def write_bound_csv(path: str, curve) -> None:
    _write_rows(path, BOUND_COLUMNS, [(int(t), float(value)) for t, value in curve])


def read_bound_csv(path: str) -> list:
    return _read_rows(path, BOUND_COLUMNS, _BOUND_TYPES)
