import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.dirname(__file__))

import environment
from environment import BanditModel, RestlessWorld, WorldStreams
from scenario import preset_gilbert_elliott_fsmc
from sim_common import ChainValidationError, ModelRejectedError


def single_state_arm(*values):
    """One arm whose chain in every global state is a single fixed reward."""
    return [{"values": [v], "transition": [[1.0]]} for v in values]


def mixing_arm(low, high):
    return {"values": [low, high], "transition": [[0.6, 0.4], [0.3, 0.7]]}


class BanditModelTests(unittest.TestCase):
    def test_constant_arm_summary(self):
        model = BanditModel.build([[1.0]], [single_state_arm(3.0)])
        summary = environment.summarize(model)
        self.assertAlmostEqual(summary.mu[0, 0], 3.0)
        self.assertAlmostEqual(summary.values[0, 0], 3.0)

    def test_value_is_one_step_ahead_expectation(self):
        model = BanditModel.build([[0.9, 0.1], [0.5, 0.5]], [single_state_arm(1.0, 2.0)])
        summary = environment.summarize(model)
        self.assertAlmostEqual(summary.values[0, 0], 1.1, places=12)
        self.assertAlmostEqual(summary.values[0, 1], 1.5, places=12)

    def test_identical_arms_are_rejected_as_a_tie(self):
        arm = [mixing_arm(1.0, 2.0), mixing_arm(3.0, 4.0)]
        model = BanditModel.build([[0.8, 0.2], [0.3, 0.7]], [arm, arm])
        with self.assertRaisesRegex(ModelRejectedError, "tie"):
            environment.summarize(model)

    def test_overlapping_supports_are_rejected(self):
        arm = [mixing_arm(1.0, 2.0), mixing_arm(2.0, 4.0)]
        with self.assertRaisesRegex(ModelRejectedError, "disjoint"):
            BanditModel.build([[0.8, 0.2], [0.3, 0.7]], [arm])

    def test_non_positive_reward_is_rejected(self):
        with self.assertRaisesRegex(ModelRejectedError, "arm 0, state 0"):
            BanditModel.build([[1.0]], [[mixing_arm(0.0, 1.0)]])

    def test_periodic_reward_chain_is_rejected(self):
        arm = [{"values": [1.0, 2.0], "transition": [[0.0, 1.0], [1.0, 0.0]]}]
        with self.assertRaisesRegex(ChainValidationError, "arm 0, state 0"):
            BanditModel.build([[1.0]], [arm])

    def test_state_of_reward_inverts_supports(self):
        model = preset_gilbert_elliott_fsmc().model
        for arm in range(model.n_arms):
            for state in range(model.n_states):
                for value in model.reward_values[arm][state]:
                    self.assertEqual(model.state_of_reward(arm, float(value)), state)

    def test_preset_summary(self):
        summary = environment.summarize(preset_gilbert_elliott_fsmc().model)
        np.testing.assert_allclose(summary.pi_global, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)
        np.testing.assert_allclose(summary.mu[0], [3.6, 2.0 / 3.0], atol=1e-12)
        np.testing.assert_allclose(summary.values[:, 0], [3.45333333, 2.880625, 0.495], atol=1e-7)
        np.testing.assert_allclose(summary.values[:, 1], [0.96, 2.55125, 0.41], atol=1e-7)
        self.assertEqual(summary.best_arm.tolist(), [0, 1])
        self.assertAlmostEqual(summary.delta, (3.45333333333 - 2.880625) ** 2, places=9)
        self.assertEqual(summary.gaps[0, 0], 0.0)


class WorldTests(unittest.TestCase):
    def setUp(self):
        self.model = preset_gilbert_elliott_fsmc().model

    def test_single_state_global_chain_always_starts_in_zero(self):
        model = BanditModel.build([[1.0]], [[mixing_arm(1.0, 2.0)]])
        for seed in range(20):
            self.assertEqual(RestlessWorld(model, seed).state.s_cur, 0)

    def test_init_reveals_the_starting_state(self):
        world = RestlessWorld(self.model, 7)
        self.assertEqual(world.state.t, 0)
        self.assertEqual(world.state.s_prev, world.state.s_cur)

    def test_init_distribution_matches_stationary(self):
        model = BanditModel.build(
            [[0.95, 0.05], [0.10, 0.90]], [single_state_arm(1.0, 2.0)]
        )
        draws = 4_000
        ones = sum(
            environment.init(model, WorldStreams.from_seed(model, seed)).s_cur for seed in range(draws)
        )
        p = 1.0 / 3.0
        sigma = np.sqrt(p * (1 - p) / draws)
        self.assertLess(abs(ones / draws - p), 4 * sigma)

    def test_same_seed_same_world(self):
        a, b = RestlessWorld(self.model, 99), RestlessWorld(self.model, 99)
        self.assertEqual(a.state, b.state)
        for t in range(200):
            self.assertEqual(a.play(t % 3), b.play(t % 3))

    def test_constant_arm_always_pays_its_value(self):
        model = BanditModel.build([[1.0]], [single_state_arm(5.0)])
        world = RestlessWorld(model, 1)
        self.assertTrue(all(world.play(0).reward == 5.0 for _ in range(100)))

    def test_observation_contract(self):
        world = RestlessWorld(self.model, 4)
        for t in range(1, 2001):
            arm = t % 3
            s_cur = world.state.s_cur
            obs = world.play(arm)
            self.assertEqual(obs.t, t)
            self.assertEqual(obs.revealed_state, s_cur)
            self.assertEqual(obs.counterfactual_rewards[arm], obs.reward)
            self.assertEqual(self.model.state_of_reward(arm, obs.reward), obs.revealed_state)
            self.assertEqual(world.revealed_state, s_cur)

    def test_local_chains_are_restless(self):
        a, b = RestlessWorld(self.model, 13), RestlessWorld(self.model, 13)
        for t in range(3000):
            a.play(0)
            b.play((t * 7) % 3)
            self.assertEqual(a.state.local, b.state.local)
            self.assertEqual(a.state.s_cur, b.state.s_cur)

    def test_play_rejects_unknown_arm(self):
        with self.assertRaises(ValueError):
            RestlessWorld(self.model, 0).play(3)

    def test_long_run_averages(self):
        slots = 1_000_000 if os.environ.get("LEMP_SLOW_TESTS") == "1" else 200_000
        tolerance = 0.01 if slots == 1_000_000 else 0.02
        summary = environment.summarize(self.model)
        world = RestlessWorld(self.model, 2024)
        total = 0.0
        sums = np.zeros((self.model.n_states,))
        counts = np.zeros((self.model.n_states,))
        transitions = np.zeros((2, 2))
        previous = None
        for _ in range(slots):
            obs = world.play(1)
            total += obs.reward
            sums[obs.revealed_state] += obs.reward
            counts[obs.revealed_state] += 1
            if previous is not None:
                transitions[previous, obs.revealed_state] += 1
            previous = obs.revealed_state

        expected = float(summary.pi_global @ summary.mu[1])
        self.assertAlmostEqual(total / slots / expected, 1.0, delta=tolerance)
        np.testing.assert_allclose(sums / counts, summary.mu[1], atol=0.05)
        p_hat = transitions / transitions.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(p_hat, self.model.global_chain.rows, atol=1e-2)


if __name__ == "__main__":
    unittest.main()
