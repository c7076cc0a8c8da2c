import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acpo import policy as pol
from acpo.objectives import MAX_REWARD, StageObjective

from conftest import batch_with_estimates, random_policy, random_spec


class TestActionDist:
    def test_zero_logits_uniform(self):
        p = pol.tabular_policy(1, 4)
        assert np.allclose(pol.action_dist(p, 0).probs, 0.25, atol=1e-15)

    @pytest.mark.parametrize("level", [-40.0, -1.0, 0.0, 3.5, 40.0])
    def test_shift_invariance(self, level):
        p = pol.tabular_policy(1, 3, np.full((1, 3), level))
        assert np.allclose(pol.action_dist(p, 0).probs, 1 / 3, atol=1e-15)

    def test_two_action_closed_form(self):
        p = pol.tabular_policy(1, 2, np.array([[1.0, 2.0]]))
        e = mpmath.e
        expected = [float(1 / (1 + e)), float(e / (1 + e))]
        assert np.allclose(pol.action_dist(p, 0).probs, expected, atol=1e-15)

    @given(st.lists(st.floats(min_value=-50, max_value=50), min_size=2, max_size=6))
    def test_probs_sum_to_one(self, logits):
        p = pol.tabular_policy(1, len(logits), np.array([logits]))
        assert abs(pol.action_dist(p, 0).probs.sum() - 1.0) <= 1e-12

    def test_nonfinite_logits_rejected(self):
        with pytest.raises(pol.PolicyNumericsError):
            pol.tabular_policy(1, 2, np.array([[np.inf, 0.0]]))


class TestKL:
    def test_identical_is_exactly_zero(self, rng):
        p = pol.tabular_policy(3, 2, rng.normal(size=(3, 2)))
        w = np.array([0.2, 0.5, 0.3])
        assert pol.kl_divergence(p, p, w) == 0.0

    def test_hand_computed_value(self):
        p = pol.tabular_policy(1, 2)  # uniform
        q = pol.tabular_policy(1, 2, np.array([[math.log(3.0), 0.0]]))
        expected = 0.5 * math.log(0.5 / 0.75) + 0.5 * math.log(0.5 / 0.25)
        assert pol.kl_divergence(p, q, np.array([1.0])) == pytest.approx(expected, abs=1e-12)

    def test_nonnegative_on_random_pairs(self):
        gen = np.random.default_rng(11)
        for _ in range(1000):
            p = pol.tabular_policy(2, 3, gen.normal(scale=2.0, size=(2, 3)))
            q = pol.tabular_policy(2, 3, gen.normal(scale=2.0, size=(2, 3)))
            w = gen.dirichlet(np.ones(2))
            assert pol.kl_divergence(p, q, w) >= 0.0

    def test_weights_must_normalize(self, rng):
        p = random_policy(rng, random_spec(rng))
        with pytest.raises(ValueError):
            pol.kl_divergence(p, p, np.array([0.5, 0.5, 0.5, 0.5]))


class TestLinearPolicies:
    def test_one_hot_features_match_tabular(self, rng):
        spec = random_spec(rng, num_states=4, num_actions=3)
        logits = rng.normal(size=(4, 3))
        tab = pol.tabular_policy(4, 3, logits)
        lin = pol.linear_policy(np.eye(4), 4, 3, weights=logits)
        assert np.allclose(pol.probs_table(tab), pol.probs_table(lin), atol=1e-15)

    def test_callable_feature_map(self):
        lin = pol.linear_policy(lambda s: np.array([1.0, float(s)]), 3, 2)
        assert lin.features.shape == (3, 2)
        assert pol.action_dist(lin, 2).probs.shape == (2,)


class TestSurrogateGradient:
    def test_zero_at_sampling_policy_with_zero_advantages(self, rng):
        spec = random_spec(rng, num_states=3, num_actions=2)
        params = random_policy(rng, spec)
        batch, estimate = batch_with_estimates(spec, params, num_transitions=32, seed=1)
        estimate.adv_reward = np.zeros(batch.batch_size)
        obj = StageObjective(kind=MAX_REWARD, cost_budget=np.array([10.0]), barrier_enabled=False)
        grad = pol.surrogate_gradient(params, (batch, estimate), obj)
        assert np.allclose(grad, 0.0, atol=1e-12)

    def test_moves_toward_positive_advantage_action(self):
        from acpo.estimation import TrajectoryBatch, EstimateSet

        batch = TrajectoryBatch(
            states=np.array([0]),
            actions=np.array([0]),
            next_states=np.array([0]),
            rewards=np.array([1.0]),
            costs=np.zeros((1, 1)),
            old_log_probs=np.array([math.log(0.5)]),
            episode_ids=np.array([0]),
            step_indices=np.array([0]),
            dones=np.array([True]),
        )
        estimate = EstimateSet(
            adv_reward=np.array([1.0]),
            adv_reward_raw=np.array([1.0]),
            adv_cost=np.zeros((1, 1)),
            value_targets_reward=np.array([1.0]),
            value_targets_cost=np.zeros((1, 1)),
            episode_reward_return=1.0,
            episode_cost_returns=np.array([0.0]),
            gamma=0.9,
            num_complete_episodes=1,
        )
        params = pol.tabular_policy(1, 2)
        obj = StageObjective(kind=MAX_REWARD, cost_budget=np.array([10.0]), barrier_enabled=False)
        grad = pol.surrogate_gradient(params, (batch, estimate), obj)
        assert grad[0, 0] > 0
        assert grad[0, 1] < 0


class TestCheckpointIO:
    def test_round_trip_tabular(self, rng):
        p = pol.tabular_policy(3, 4, rng.normal(size=(3, 4)))
        q = pol.from_json(pol.to_json(p))
        assert q.parameterization == p.parameterization
        assert np.array_equal(q.weights, p.weights)

    def test_linear_requires_features(self, rng):
        lin = pol.linear_policy(rng.normal(size=(3, 2)), 3, 2)
        text = pol.to_json(lin)
        with pytest.raises(ValueError):
            pol.from_json(text)
        again = pol.from_json(text, features=lin.features)
        assert np.array_equal(again.weights, lin.weights)
