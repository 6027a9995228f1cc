import dataclasses
import json
import math
import os
import sys
import tempfile
import unittest
from unittest import mock

import numpy as np

sys.path.insert(0, os.path.dirname(__file__))

import harness
from bound import bound_inputs, regret_bound
from environment import summarize
from scenario import preset_gilbert_elliott_fsmc, resolve_constants
from sim_common import WatchdogAbort

SLOW = os.environ.get("LEMP_SLOW_TESTS") == "1"


def small_scenario(horizon=20_000, seeds=3, grid=None):
    scenario = preset_gilbert_elliott_fsmc()
    return scenario.replace(horizon=horizon, seed_count=seeds, grid=grid)


def read_bytes(path):
    with open(path, "rb") as f:
        return f.read()


class RunTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.scenario = small_scenario(grid=(1, 10, 100, 1000, 5000, 20_000))
        cls.summary = summarize(cls.scenario.model)
        cls.record = harness.run(cls.scenario, 11, "lemp", summary=cls.summary, record_trace=True)

    def test_rows_follow_the_grid(self):
        self.assertEqual([row.t for row in self.record.rows], list(self.scenario.logging_grid()))
        self.assertTrue(math.isnan(self.record.rows[0].pseudo_regret_over_logt))
        row = self.record.rows[-1]
        self.assertAlmostEqual(row.pseudo_regret_over_logt, row.pseudo_regret / math.log(row.t))

    def test_pseudo_regret_is_monotone_and_capped(self):
        previous = 0.0
        x_max = self.scenario.model.x_max
        for row in self.record.rows:
            self.assertGreaterEqual(row.pseudo_regret, previous)
            self.assertLessEqual(row.pseudo_regret, x_max * row.t)
            previous = row.pseudo_regret

    def test_epoch_log_accounts_for_every_gap(self):
        logged = sum(entry.pseudo_regret for entry in self.record.epoch_log)
        total = logged + self.record.open_epoch_pseudo_regret
        self.assertAlmostEqual(total / self.record.pseudo_regret, 1.0, places=9)

    def test_offline_replay_matches_the_ledger_exactly(self):
        pseudo, sampled = harness.replay_regret(self.record.trace, self.summary)
        self.assertEqual(pseudo, self.record.pseudo_regret)
        self.assertEqual(sampled, self.record.sampled_regret)

    def test_epoch_accounting_is_exact(self):
        log = self.record.epoch_log
        for arm in range(self.scenario.model.n_arms):
            explores = [entry for entry in log if entry.kind == "explore" and entry.arm == arm]
            k = len(explores)
            self.assertEqual(sum(e.length - e.sb1_length for e in explores), (4 ** (k + 1) - 4) // 3)
            self.assertGreaterEqual(sum(self.record.sb2_totals[arm]), (4 ** (k + 1) - 4) // 3)
        exploits = [entry for entry in log if entry.kind == "exploit"]
        m = len(exploits)
        self.assertEqual(sum(e.length for e in exploits), 2 * (4 ** m - 1) // 3)

    def test_record_serializes(self):
        payload = json.loads(json.dumps(self.record.to_dict()))
        self.assertEqual(payload["policy"], "lemp")
        self.assertEqual(len(payload["snapshot"]["mu_hat"]), 3)
        self.assertEqual(payload["exploration_counts"], self.record.exploration_counts)

    def test_genie_has_zero_pseudo_regret(self):
        record = harness.run(self.scenario, 3, "genie")
        self.assertTrue(all(row.pseudo_regret == 0.0 for row in record.rows))
        self.assertIsNone(record.snapshot)
        self.assertEqual(record.exploration_counts, [0, 0, 0])

    def test_uniform_random_slope(self):
        horizon = 1_000_000 if SLOW else 200_000
        scenario = small_scenario(horizon=horizon, grid=(horizon,))
        record = harness.run(scenario, 5, "uniform-random", summary=self.summary)
        per_state = self.summary.best_value - self.summary.values.mean(axis=0)
        slope = float(self.summary.pi_global @ per_state)
        self.assertAlmostEqual(record.pseudo_regret / horizon / slope, 1.0, delta=0.05)


class BatchTests(unittest.TestCase):
    def test_single_seed_batch_equals_the_run(self):
        scenario = small_scenario(horizon=3000, seeds=1)
        batch = harness.run_batch(scenario, "lemp")
        single = harness.run(scenario, scenario.seeds()[0], "lemp")
        for agg, row in zip(batch.rows, single.rows):
            self.assertEqual(agg.mean_pseudo_regret, row.pseudo_regret)
            self.assertEqual(agg.stderr_pseudo_regret, 0.0)
            self.assertEqual(agg.n_runs, 1)

    def test_identical_seeds_average_to_the_run(self):
        scenario = small_scenario(horizon=3000).replace(seed_list=(42, 42, 42, 42))
        batch = harness.run_batch(scenario, "dsee")
        single = harness.run(scenario, 42, "dsee")
        for agg, row in zip(batch.rows, single.rows):
            self.assertAlmostEqual(agg.mean_pseudo_regret, row.pseudo_regret, places=9)
            self.assertAlmostEqual(agg.stderr_pseudo_regret, 0.0, places=9)

    def test_stderr_uses_sample_deviation(self):
        scenario = small_scenario(horizon=2000, seeds=4)
        batch = harness.run_batch(scenario, "uniform-random")
        finals = np.array([run.rows[-1].pseudo_regret for run in batch.runs])
        self.assertAlmostEqual(batch.rows[-1].stderr_pseudo_regret, finals.std(ddof=1) / 2.0)

    def test_watchdog_failures_are_excluded_and_counted(self):
        scenario = small_scenario(horizon=500, seeds=3)
        failing_seed = scenario.seeds()[1]
        real_run = harness.run

        def flaky_run(scn, seed, *args, **kwargs):
            if seed == failing_seed:
                raise WatchdogAbort(0, 2.0, 10, 77)
            return real_run(scn, seed, *args, **kwargs)

        with mock.patch.object(harness, "run", side_effect=flaky_run):
            batch = harness.run_batch(scenario, "lemp")
        self.assertEqual(len(batch.runs), 2)
        self.assertEqual(batch.failed, [{"seed": failing_seed, "error": str(batch.aborts[0]), "type": "watchdog_abort"}])
        self.assertTrue(all(row.n_failed == 1 and row.n_runs == 2 for row in batch.rows))

    def test_parallel_batch_matches_serial(self):
        scenario = small_scenario(horizon=1500, seeds=3)
        serial = harness.run_batch(scenario, "lemp", workers=1)
        parallel = harness.run_batch(scenario, "lemp", workers=2)
        self.assertEqual(serial.rows, parallel.rows)

    def test_compare_attaches_the_bound(self):
        scenario = small_scenario(horizon=1000, seeds=2)
        results, bound_by_t = harness.compare(scenario, ["lemp", "genie"])
        self.assertEqual([result.policy for result in results], ["lemp", "genie"])
        summary = summarize(scenario.model)
        inputs = bound_inputs(scenario.model, summary, resolve_constants(scenario, summary))
        for t, value in bound_by_t.items():
            self.assertAlmostEqual(value, regret_bound(t, inputs))
        rows = harness.compare_rows(results, bound_by_t)
        self.assertEqual(len(rows), 2 * len(scenario.logging_grid()))


class CsvTests(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.scenario = small_scenario(horizon=2000, seeds=2, grid=(1, 50, 500, 2000))

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def test_results_header_and_determinism(self):
        first, second = self.path("a.csv"), self.path("b.csv")
        for target in (first, second):
            batch = harness.run_batch(self.scenario, "lemp")
            harness.write_results_csv(target, harness.results_rows(batch.runs))
        self.assertEqual(read_bytes(first), read_bytes(second))
        with open(first, encoding="utf-8") as f:
            self.assertEqual(f.readline().strip(), ",".join(harness.RESULTS_COLUMNS))
            self.assertEqual(f.readline().split(",")[2], "1")

    def test_results_round_trip(self):
        original, rewritten = self.path("results.csv"), self.path("again.csv")
        batch = harness.run_batch(self.scenario, "uniform-random")
        harness.write_results_csv(original, harness.results_rows(batch.runs))
        harness.write_results_csv(rewritten, harness.read_results_csv(original))
        self.assertEqual(read_bytes(original), read_bytes(rewritten))
        self.assertIn("nan", read_bytes(original).decode("utf-8"))

    def test_compare_and_bound_round_trip(self):
        results, bound_by_t = harness.compare(self.scenario, ["lemp", "best-average"])
        compare_path, again = self.path("compare.csv"), self.path("compare2.csv")
        harness.write_compare_csv(compare_path, harness.compare_rows(results, bound_by_t))
        harness.write_compare_csv(again, harness.read_compare_csv(compare_path))
        self.assertEqual(read_bytes(compare_path), read_bytes(again))

        bound_path, bound_again = self.path("bound.csv"), self.path("bound2.csv")
        harness.write_bound_csv(bound_path, sorted(bound_by_t.items()))
        harness.write_bound_csv(bound_again, harness.read_bound_csv(bound_path))
        self.assertEqual(read_bytes(bound_path), read_bytes(bound_again))


@unittest.skipUnless(SLOW, "set LEMP_SLOW_TESTS=1 for full-scale runs")
class ReproductionTests(unittest.TestCase):
    def test_lemp_beats_both_baselines(self):
        scenario = small_scenario(horizon=100_000, seeds=8, grid=(10_000, 100_000))
        finals = {}
        for name in ("lemp", "best-average", "dsee"):
            finals[name] = harness.run_batch(scenario, name, workers=4).rows[-1]
        lemp = finals["lemp"]
        for name in ("best-average", "dsee"):
            other = finals[name]
            spread = 3.0 * math.hypot(lemp.stderr_pseudo_regret, other.stderr_pseudo_regret)
            self.assertLess(lemp.mean_pseudo_regret + spread, other.mean_pseudo_regret)

    def test_best_average_grows_linearly(self):
        scenario = small_scenario(horizon=100_000, seeds=4, grid=(10_000, 100_000))
        summary = summarize(scenario.model)
        rows = harness.run_batch(scenario, "best-average", workers=4).rows
        arm = int(np.argmax(summary.values @ summary.pi_global))
        slope = float(summary.pi_global @ (summary.best_value - summary.values[arm]))
        measured = (rows[1].mean_pseudo_regret - rows[0].mean_pseudo_regret) / (rows[1].t - rows[0].t)
        self.assertAlmostEqual(measured / slope, 1.0, delta=0.1)

    def test_stderr_shrinks_with_the_square_root_of_the_run_count(self):
        scenario = small_scenario(horizon=20_000, seeds=80, grid=(20_000,))
        full = harness.run_batch(scenario, "uniform-random", workers=4)
        self.assertEqual(len(full.runs), 80)
        reference = full.rows[-1].stderr_pseudo_regret
        for k in (5, 20):
            batch = harness.run_batch(scenario.replace(seed_count=k), "uniform-random", workers=4)
            first_chunk = harness.aggregate(full.runs[:k])[-1]
            self.assertEqual(batch.rows[-1].stderr_pseudo_regret, first_chunk.stderr_pseudo_regret)
            # Pool the squared stderr of every disjoint k-run chunk.
            chunks = [harness.aggregate(full.runs[i:i + k])[-1] for i in range(0, 80, k)]
            pooled = math.sqrt(np.mean([row.stderr_pseudo_regret ** 2 for row in chunks]))
            self.assertAlmostEqual(pooled / reference / math.sqrt(80 / k), 1.0, delta=0.3)


@unittest.skipUnless(SLOW, "set LEMP_SLOW_TESTS=1 for full-scale runs")
class FullHorizonTests(unittest.TestCase):
    """Preset runs to 10^6 slots; every check reads the final snapshots."""

    CHECKPOINTS = (10_000, 100_000, 1_000_000)

    @classmethod
    def setUpClass(cls):
        cls.scenario = small_scenario(horizon=1_000_000, seeds=20, grid=cls.CHECKPOINTS)
        cls.summary = summarize(cls.scenario.model)
        cls.lemp = harness.run_batch(cls.scenario, "lemp", workers=4)

    def test_estimators_converge_on_nearly_every_cell(self):
        p_true = self.scenario.model.global_chain.rows
        good = total = 0
        for record in self.lemp.runs:
            mu_hat = np.array(record.snapshot["mu_hat"])
            p_close = np.max(np.abs(np.array(record.snapshot["p_hat"]) - p_true)) <= 0.02
            close = np.abs(mu_hat - self.summary.mu) <= 0.05
            good += int(np.sum(close & p_close))
            total += close.size
        self.assertEqual(total, 20 * self.scenario.model.n_arms * self.scenario.model.n_states)
        self.assertGreaterEqual(good / total, 0.95)

    def test_lemp_regret_tracks_log_t(self):
        ratios = [row.mean_pseudo_regret_over_logt for row in self.lemp.rows]
        for earlier, later in zip(ratios, ratios[1:]):
            self.assertLessEqual(later, earlier * 1.1)

    def test_dsee_regret_over_log_t_stays_bounded(self):
        scenario = self.scenario.replace(seed_count=8)
        ratios = [row.mean_pseudo_regret_over_logt for row in harness.run_batch(scenario, "dsee", workers=4).rows]
        self.assertLessEqual(max(ratios), 2.0 * min(ratios))
        self.assertLessEqual(ratios[-1], ratios[-2] * 1.1)

    def test_gap_estimates_recover_the_true_gaps(self):
        # Heavy exploration: about 6e4 idle-state samples of channel 0.
        policy = dataclasses.replace(
            self.scenario.policy, overrides={"L": 123.0, "I_L": 400.0, "I_G": 400.0}
        )
        scenario = self.scenario.replace(policy=policy, grid=(1_000_000,))
        epsilon = resolve_constants(scenario, self.summary).epsilon
        true_gaps = (self.summary.best_value[np.newaxis, :] - self.summary.values) ** 2
        runs = harness.run_batch(scenario, "lemp", workers=4).runs
        recovered = 0
        for record in runs:
            v_hat = np.array(record.snapshot["v_hat"])
            gaps = (v_hat.max(axis=0)[np.newaxis, :] - v_hat) ** 2
            recovered += int(np.all(np.abs(gaps - true_gaps) <= epsilon))
        self.assertGreaterEqual(recovered / len(runs), 0.95)


if __name__ == "__main__":
    unittest.main()
