#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Command-line entry for the LEMP bench.

Subcommands:
  engine.py simulate --scenario F --policy lemp --out results.csv
  engine.py bound    --scenario F --out bound.csv
  engine.py preset   --name gilbert-elliott-fsmc --out scenario.json
  engine.py compare  --scenario F --policies lemp,dsee,best-average --out compare.csv
  engine.py summary  --scenario F

Progress and results are printed to stdout as one JSON object per line.
Exit codes: 0 success, 2 validation error, 3 SB1 watchdog abort, 1 other.
"""

import argparse
import dataclasses
import json
import logging
import sys
import traceback

from sim_common import BenchError, ScenarioError, WatchdogAbort, setup_rotating_logger

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_VALIDATION = 2
EXIT_WATCHDOG = 3

logger = logging.getLogger("engine")


def _emit(stage, **fields):
    status = {"stage": stage}
    status.update(fields)
    print(json.dumps(status, ensure_ascii=False))
    sys.stdout.flush()


def _finish(payload):
    print(json.dumps(payload, ensure_ascii=False))
    sys.stdout.flush()


def _load(args):
    from scenario import get_preset, load_scenario

    if getattr(args, "preset", None):
        scenario = get_preset(args.preset)
    elif getattr(args, "scenario", None):
        scenario = load_scenario(args.scenario)
    else:
        raise ScenarioError("either --scenario or --preset is required")
    return _apply_overrides(scenario, args)


def _apply_overrides(scenario, args):
    changes = {}
    if getattr(args, "horizon", None) is not None:
        changes["horizon"] = args.horizon
    if getattr(args, "seeds", None) is not None:
        changes["seed_count"] = args.seeds
        changes["seed_list"] = None
    if getattr(args, "master_seed", None) is not None:
        changes["master_seed"] = args.master_seed
        changes["seed_list"] = None
    if getattr(args, "constants_mode", None) is not None:
        changes["policy"] = dataclasses.replace(scenario.policy, constants_mode=args.constants_mode)
    if changes:
        logger.info("scenario overrides from the command line: %s", sorted(changes))
        scenario = scenario.replace(**changes)
    return scenario


def cmd_simulate(args):
    from harness import results_rows, run_batch, write_results_csv

    scenario = _load(args)
    _emit("running", command="simulate", policy=args.policy, runs=len(scenario.seeds()))
    batch = run_batch(scenario, args.policy, workers=args.workers)
    if batch.aborts and not batch.runs:
        raise batch.aborts[0]
    write_results_csv(args.out, results_rows(batch.runs))
    if args.runs_json:
        with open(args.runs_json, "w", encoding="utf-8") as f:
            json.dump([record.to_dict() for record in batch.runs], f, ensure_ascii=False, indent=2)
    _emit("completed", command="simulate", out=args.out)
    final = batch.rows[-1] if batch.rows else None
    return {
        "success": True,
        "policy": args.policy,
        "n_runs": len(batch.runs),
        "failed": batch.failed,
        "final_mean_pseudo_regret": final.mean_pseudo_regret if final else None,
        "out": args.out,
    }


def cmd_bound(args):
    from bound import UNQUANTIFIED_TERM, bound_curve, bound_inputs
    from environment import summarize
    from harness import write_bound_csv
    from scenario import resolve_constants

    scenario = _load(args)
    summary = summarize(scenario.model)
    constants = resolve_constants(scenario, summary)
    curve = bound_curve(scenario.logging_grid(), bound_inputs(scenario.model, summary, constants))
    write_bound_csv(args.out, curve)
    return {
        "success": True,
        "out": args.out,
        "points": len(curve),
        "excluded_term": UNQUANTIFIED_TERM,
        "constants_mode": scenario.policy.constants_mode,
    }


def cmd_preset(args):
    from scenario import get_preset, save_scenario

    scenario = get_preset(args.name)
    save_scenario(scenario, args.out)
    return {"success": True, "name": scenario.name, "out": args.out}


def cmd_compare(args):
    from harness import compare, compare_rows, write_compare_csv
    from policy import POLICY_NAMES

    scenario = _load(args)
    policies = [name.strip() for name in args.policies.split(",") if name.strip()]
    unknown = [name for name in policies if name not in POLICY_NAMES]
    if not policies or unknown:
        raise ScenarioError(f"unknown policies {unknown} (expected a subset of {', '.join(POLICY_NAMES)})")
    _emit("running", command="compare", policies=policies, runs=len(scenario.seeds()))
    results, bound_by_t = compare(scenario, policies, workers=args.workers)
    write_compare_csv(args.out, compare_rows(results, bound_by_t))
    _emit("completed", command="compare", out=args.out)
    return {
        "success": True,
        "out": args.out,
        "failed": {result.policy: result.failed for result in results if result.failed},
    }


def cmd_summary(args):
    from environment import summarize
    from markov_core import analyze, period
    from scenario import resolve_constants

    scenario = _load(args)
    model = scenario.model
    summary = summarize(model)
    chains = []
    for arm in range(model.n_arms):
        for state in range(model.n_states):
            chain = model.arm_chains[arm][state]
            analysis = analyze(chain)
            chains.append(
                {
                    "arm": arm,
                    "state": state,
                    "stationary": analysis.stationary.tolist(),
                    "slem": analysis.slem,
                    "max_hitting_time": analysis.max_hitting_time,
                    "period": period(chain),
                }
            )
    result = {
        "success": True,
        "name": scenario.name,
        "summary": summary.to_dict(),
        "chains": chains,
    }
    try:
        result["constants"] = resolve_constants(scenario, summary).to_dict()
    except ScenarioError as exc:
        result["constants"] = None
        result["constants_error"] = str(exc)
    return result


def build_parser():
    from policy import POLICY_NAMES
    from scenario import CONSTANTS_MODES, PRESET_NAMES

    parser = argparse.ArgumentParser(prog="engine")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p, overrides=True):
        p.add_argument("--scenario", help="scenario JSON file")
        p.add_argument("--preset", choices=PRESET_NAMES, help="use a built-in scenario instead")
        p.add_argument("--constants-mode", choices=CONSTANTS_MODES)
        if overrides:
            p.add_argument("--horizon", type=int)
            p.add_argument("--seeds", type=int)
            p.add_argument("--master-seed", type=int)
            p.add_argument("--workers", type=int, default=1)

    sim_p = sub.add_parser("simulate")
    scenario_args(sim_p)
    sim_p.add_argument("--policy", default="lemp", choices=POLICY_NAMES)
    sim_p.add_argument("--out", required=True)
    sim_p.add_argument("--runs-json", help="also write every run record as JSON")

    bound_p = sub.add_parser("bound")
    scenario_args(bound_p, overrides=False)
    bound_p.add_argument("--horizon", type=int)
    bound_p.add_argument("--out", required=True)

    preset_p = sub.add_parser("preset")
    preset_p.add_argument("--name", required=True, choices=PRESET_NAMES)
    preset_p.add_argument("--out", required=True)

    cmp_p = sub.add_parser("compare")
    scenario_args(cmp_p)
    cmp_p.add_argument("--policies", default="lemp,dsee,best-average")
    cmp_p.add_argument("--out", required=True)

    summary_p = sub.add_parser("summary")
    scenario_args(summary_p, overrides=False)

    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "bound": cmd_bound,
    "preset": cmd_preset,
    "compare": cmd_compare,
    "summary": cmd_summary,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_rotating_logger("engine", "lemp_bench.log", "LEMP bench")

    try:
        result = COMMANDS[args.command](args)
    except WatchdogAbort as e:
        logger.error(f"watchdog abort: {e}")
        _finish({"success": False, "error": str(e), "type": e.error_type})
        return EXIT_WATCHDOG
    except (BenchError, ValueError) as e:
        logger.error(f"validation failed: {e}")
        _finish({"success": False, "error": str(e), "type": getattr(e, "error_type", "validation_error")})
        return EXIT_VALIDATION
    except Exception as e:
        logger.exception("unexpected failure")
        _finish(
            {
                "success": False,
                "error": str(e),
                "type": type(e).__name__,
                "traceback": traceback.format_exc(),
            }
        )
        return EXIT_FAILURE

    _finish(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
