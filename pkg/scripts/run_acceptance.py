#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Desk-scale acceptance experiments for the LEMP bench.

Steps:
1. Chain analytics against simulation (random chains)
2. Preset batches: LEMP / DSEE / best-average in the scenario's constants
   mode, plus LEMP in oracle mode for the bound checks
3. Every check is evaluated from the batch results
4. A JSON report is written to --out

Default sizes are small enough for a laptop; --horizon 1000000 --seeds 20
is the full-scale setting.
"""

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

PROJECT_ROOT = Path(__file__).resolve().parent.parent
ENGINE_DIR = PROJECT_ROOT / "bandit_engine"
sys.path.insert(0, str(ENGINE_DIR))

import harness  # noqa: E402
from bound import bound_inputs, compute_A, exploration_budget, regret_bound  # noqa: E402
from environment import summarize  # noqa: E402
from markov_core import (  # noqa: E402
    ChainSampler,
    TransitionMatrix,
    mean_hitting_times,
    second_eigenvalue_modulus,
    stationary_distribution,
)
from scenario import PolicyConfig, get_preset, resolve_constants  # noqa: E402

DEFAULT_HORIZON = 100_000
DEFAULT_SEEDS = 8
CHAIN_COUNT = 10
CHAIN_SEEDS = 3
OCCUPANCY_TOL = 1e-2
HITTING_REL_TOL = 0.02
HITTING_TRIALS = 20_000
MU_TOL = 0.05
P_TOL = 0.02
CELL_FRACTION = 0.95
ORDER_SLACK = 0.10


def checkpoints(horizon: int) -> list:
    points = [horizon // 100, horizon // 10, horizon]
    return [t for t in points if t >= 2]


def acceptance_grid(scenario) -> tuple:
    grid = set(scenario.logging_grid()) | set(checkpoints(scenario.horizon))
    return tuple(sorted(grid))


def random_chain(rng: np.random.Generator) -> TransitionMatrix:
    n = int(rng.integers(2, 5))
    rows = rng.uniform(0.05, 1.0, size=(n, n))
    rows /= rows.sum(axis=1, keepdims=True)
    return TransitionMatrix.from_rows(rows.tolist())


def occupancy(P: TransitionMatrix, steps: int, seed: int) -> np.ndarray:
    sampler = ChainSampler(P, np.random.default_rng(seed))
    counts = np.zeros(P.n)
    x = 0
    for _ in range(steps):
        x = sampler.next(x)
        counts[x] += 1
    return counts / steps


def hitting_estimate(P: TransitionMatrix, start: int, target: int, trials: int, seed: int) -> float:
    sampler = ChainSampler(P, np.random.default_rng(seed))
    total = 0
    for _ in range(trials):
        x, steps = start, 0
        while True:
            x = sampler.next(x)
            steps += 1
            if x == target:
                break
        total += steps
    return total / trials


def check_chain_analytics(occupancy_steps: int, seed: int = 2021) -> dict:
    rng = np.random.default_rng(seed)
    worst_occupancy = 0.0
    worst_hitting = 0.0
    worst_slem = 0.0
    for index in range(CHAIN_COUNT):
        P = random_chain(rng)
        pi = stationary_distribution(P)
        for k in range(CHAIN_SEEDS):
            empirical = occupancy(P, occupancy_steps, seed + 1000 * index + k)
            worst_occupancy = max(worst_occupancy, float(np.max(np.abs(empirical - pi))))
        hitting = mean_hitting_times(P)
        exact = hitting[0, P.n - 1]
        simulated = hitting_estimate(P, 0, P.n - 1, HITTING_TRIALS, seed + index)
        worst_hitting = max(worst_hitting, abs(simulated - exact) / exact)

        two = TransitionMatrix.from_rows(rng.dirichlet([1.0, 1.0], size=2).tolist())
        worst_slem = max(
            worst_slem, abs(second_eigenvalue_modulus(two) - abs(float(np.trace(two.rows)) - 1.0))
        )
    return {
        "passed": worst_occupancy <= OCCUPANCY_TOL and worst_hitting <= HITTING_REL_TOL and worst_slem <= 1e-12,
        "max_occupancy_error": worst_occupancy,
        "max_hitting_rel_error": worst_hitting,
        "max_slem_error": worst_slem,
    }


def check_estimators(batch, scenario, summary) -> dict:
    p_true = scenario.model.global_chain.rows
    good = total = 0
    for record in batch.runs:
        snapshot = record.snapshot
        mu_hat = np.array(snapshot["mu_hat"], dtype=float)
        p_err = float(np.max(np.abs(np.array(snapshot["p_hat"]) - p_true)))
        close = np.abs(mu_hat - summary.mu) <= MU_TOL
        good += int(np.sum(close & (p_err <= P_TOL)))
        total += close.size
    fraction = good / total if total else 0.0
    return {"passed": fraction >= CELL_FRACTION, "fraction_within_tolerance": fraction}


def _row_at(batch, t):
    for row in batch.rows:
        if row.t == t:
            return row
    raise KeyError(t)


def check_log_order(batch, horizon: int) -> dict:
    ratios = [_row_at(batch, t).mean_pseudo_regret_over_logt for t in checkpoints(horizon)]
    passed = all(later <= earlier * (1.0 + ORDER_SLACK) for earlier, later in zip(ratios, ratios[1:]))
    return {"passed": passed, "regret_over_logt": dict(zip(map(str, checkpoints(horizon)), ratios))}


def check_bound(oracle_batch, oracle_scenario, summary) -> dict:
    constants = resolve_constants(oracle_scenario, summary)
    inputs = bound_inputs(oracle_scenario.model, summary, constants)
    low = min(1000, oracle_scenario.horizon)
    violations = []
    for row in oracle_batch.rows:
        if row.t < low:
            continue
        value = regret_bound(row.t, inputs)
        if value < row.mean_pseudo_regret:
            violations.append({"t": row.t, "bound": value, "mean_pseudo_regret": row.mean_pseudo_regret})

    a_values = [compute_A(arm, inputs) for arm in range(inputs.n_arms)]
    over_budget = []
    for record in oracle_batch.runs:
        for arm, count in enumerate(record.exploration_counts):
            budget = exploration_budget(arm, record.horizon, inputs, a_values[arm])
            if count > budget:
                over_budget.append({"seed": record.seed, "arm": arm, "count": count, "budget": budget})
    return {
        "dominance": {"passed": not violations, "violations": violations},
        "exploration_budget": {"passed": not over_budget, "violations": over_budget},
    }


def check_reproduction(batches: dict, horizon: int) -> dict:
    lemp = batches["lemp"].rows[-1]
    orderings = {}
    for name in ("best-average", "dsee"):
        other = batches[name].rows[-1]
        spread = 3.0 * math.hypot(lemp.stderr_pseudo_regret, other.stderr_pseudo_regret)
        orderings[name] = {
            "passed": lemp.mean_pseudo_regret + spread < other.mean_pseudo_regret,
            "lemp": lemp.mean_pseudo_regret,
            "other": other.mean_pseudo_regret,
        }

    tenth = horizon // 10

    def growth(name):
        return _row_at(batches[name], horizon).mean_pseudo_regret / _row_at(batches[name], tenth).mean_pseudo_regret

    best_average_growth = growth("best-average")
    lemp_growth = growth("lemp")
    return {
        "passed": all(item["passed"] for item in orderings.values())
        and best_average_growth >= 8.0
        and lemp_growth <= 2.0,
        "orderings": orderings,
        "best_average_growth": best_average_growth,
        "lemp_growth": lemp_growth,
    }


def check_genie_and_determinism(scenario, out_dir: Path) -> dict:
    short = scenario.replace(horizon=min(scenario.horizon, 5000), seed_count=2, grid=None)
    genie = harness.run_batch(short, "genie")
    zero = all(row.pseudo_regret == 0.0 for record in genie.runs for row in record.rows)

    paths = [out_dir / "determinism_a.csv", out_dir / "determinism_b.csv"]
    for path in paths:
        batch = harness.run_batch(short, "lemp")
        harness.write_results_csv(str(path), harness.results_rows(batch.runs))
    identical = paths[0].read_bytes() == paths[1].read_bytes()
    for path in paths:
        path.unlink()
    return {"passed": zero and identical, "genie_zero": zero, "byte_identical": identical}


def check_epoch_accounting(batches: dict) -> dict:
    mismatches = []
    for name in ("lemp", "dsee", "best-average"):
        for record in batches[name].runs:
            log = record.epoch_log
            for arm in range(len(record.exploration_counts)):
                k = sum(1 for e in log if e.kind == "explore" and e.arm == arm)
                sb2 = sum(e.length - e.sb1_length for e in log if e.kind == "explore" and e.arm == arm)
                if sb2 != (4 ** (k + 1) - 4) // 3:
                    mismatches.append({"policy": name, "seed": record.seed, "arm": arm})
            m = sum(1 for e in log if e.kind == "exploit")
            if sum(e.length for e in log if e.kind == "exploit") != 2 * (4 ** m - 1) // 3:
                mismatches.append({"policy": name, "seed": record.seed, "arm": None})
    return {"passed": not mismatches, "mismatches": mismatches}


def run_checks(horizon: int, seeds: int, workers: int, occupancy_steps: int, out_dir: Path) -> dict:
    preset = get_preset("gilbert-elliott-fsmc")
    scenario = preset.replace(horizon=horizon, seed_count=seeds, grid=None)
    scenario = scenario.replace(grid=acceptance_grid(scenario))
    summary = summarize(scenario.model)

    print("=" * 60)
    print("step 1/3: chain analytics")
    print("=" * 60)
    checks = {"chain_analytics": check_chain_analytics(occupancy_steps)}

    print("=" * 60)
    print(f"step 2/3: preset batches (T={horizon}, seeds={seeds}, workers={workers})")
    print("=" * 60)
    batches = {}
    for name in ("lemp", "dsee", "best-average"):
        started = time.time()
        batches[name] = harness.run_batch(scenario, name, workers=workers)
        print(f"  {name}: {len(batches[name].runs)} runs in {time.time() - started:.1f}s")
    oracle_policy = PolicyConfig(
        constants_mode="oracle",
        sb1_watchdog_cap=scenario.policy.sb1_watchdog_cap,
    )
    oracle_scenario = scenario.replace(policy=oracle_policy)
    oracle_batch = harness.run_batch(oracle_scenario, "lemp", workers=workers)

    print("=" * 60)
    print("step 3/3: checks")
    print("=" * 60)
    checks["estimator_consistency"] = check_estimators(batches["lemp"], scenario, summary)
    checks["log_regret_order"] = check_log_order(batches["lemp"], horizon)
    checks.update(check_bound(oracle_batch, oracle_scenario, summary))
    checks["reproduction"] = check_reproduction(batches, horizon)
    checks["genie_and_determinism"] = check_genie_and_determinism(scenario, out_dir)
    checks["epoch_accounting"] = check_epoch_accounting(batches)
    failed = {name: len(batch.failed) for name, batch in batches.items() if batch.failed}

    for name, result in checks.items():
        print(f"  {name}: {'ok' if result['passed'] else 'FAILED'}")
    return {
        "horizon": horizon,
        "seeds": seeds,
        "failed_runs": failed,
        "checks": checks,
        "passed": all(result["passed"] for result in checks.values()),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument("--horizon", type=int, default=DEFAULT_HORIZON)
    parser.add_argument("--seeds", type=int, default=DEFAULT_SEEDS)
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--occupancy-steps", type=int, default=1_000_000)
    parser.add_argument("--out", default=str(PROJECT_ROOT / "acceptance_report.json"))
    args = parser.parse_args(argv)

    if args.horizon < 1000:
        print(f"error: horizon must be at least 1000, got {args.horizon}", file=sys.stderr)
        return 2

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    report = run_checks(args.horizon, args.seeds, args.workers, args.occupancy_steps, out_path.parent)
    tmp_path = out_path.with_suffix(out_path.suffix + ".tmp")
    tmp_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    os.replace(tmp_path, out_path)
    print(f"report: {out_path}")
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
