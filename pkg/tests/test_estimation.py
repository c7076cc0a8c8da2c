import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acpo.cmdp import CmdpSpec
from acpo.estimation import (
    EstimatorConfig,
    TrajectoryBatch,
    ValueTables,
    collect,
    exact_eval,
    fit_linear_values,
    fit_value_table,
    fit_values,
    gae,
    make_estimates,
    update_queues,
)
from acpo.policy import tabular_policy
from acpo.scheduler import BudgetState

from conftest import random_policy, random_spec


def _degenerate_spec(horizon=4):
    return CmdpSpec(1, 1, np.ones((1, 1, 1)), np.ones((1, 1)), (np.zeros((1, 1)),), np.array([1.0]), 0.9, horizon)


class TestCollect:
    def test_degenerate_cmdp(self):
        batch = collect(_degenerate_spec(), tabular_policy(1, 1), 10, seed=0)
        assert np.all(batch.states == 0)
        assert np.all(batch.old_log_probs == 0.0)
        assert batch.batch_size == 10

    def test_deterministic_given_seed(self, rng):
        spec = random_spec(rng, num_states=5, num_actions=3)
        params = random_policy(rng, spec)
        a = collect(spec, params, 200, seed=9)
        b = collect(spec, params, 200, seed=9)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.rewards, b.rewards)

    def test_uniform_action_frequency(self):
        spec = CmdpSpec(
            1, 2, np.ones((1, 2, 1)), np.zeros((1, 2)), (np.zeros((1, 2)),), np.array([1.0]), 0.9, 1000
        )
        batch = collect(spec, tabular_policy(1, 2), 10**5, seed=123)
        freq = np.mean(batch.actions == 0)
        assert 0.497 <= freq <= 0.503

    def test_episode_bookkeeping(self, rng):
        spec = random_spec(rng, num_states=3, num_actions=2, horizon=5)
        batch = collect(spec, tabular_policy(3, 2), 17, seed=4)
        # 3 complete episodes of length 5 plus a 2-step cut episode
        assert list(np.unique(batch.episode_ids)) == [0, 1, 2, 3]
        assert batch.dones.sum() == 3
        assert np.all(batch.step_indices[batch.dones] == 4)
        assert not batch.dones[-1]


def _manual_batch(rewards, episode_len, costs=None):
    n = len(rewards)
    m = 1 if costs is None else costs.shape[0]
    return TrajectoryBatch(
        states=np.zeros(n, dtype=int),
        actions=np.zeros(n, dtype=int),
        next_states=np.zeros(n, dtype=int),
        rewards=np.asarray(rewards, dtype=float),
        costs=np.zeros((m, n)) if costs is None else costs,
        old_log_probs=np.zeros(n),
        episode_ids=np.array([i // episode_len for i in range(n)]),
        step_indices=np.array([i % episode_len for i in range(n)]),
        dones=np.array([(i + 1) % episode_len == 0 for i in range(n)]),
    )


class TestGae:
    def test_lambda_zero_is_one_step_td(self, rng):
        spec = random_spec(rng, num_states=4, num_actions=2, horizon=6)
        batch = collect(spec, tabular_policy(4, 2), 30, seed=2)
        values = rng.normal(size=4)
        adv = gae(batch, values, gamma=0.9, lam=0.0, signal="reward")
        not_done = 1.0 - batch.dones.astype(float)
        deltas = batch.rewards + 0.9 * values[batch.next_states] * not_done - values[batch.states]
        assert np.allclose(adv, deltas, atol=1e-14)

    def test_undiscounted_telescoped_sum(self):
        batch = _manual_batch([1.0, 1.0], episode_len=2)
        adv = gae(batch, np.zeros(1), gamma=1.0 - 1e-12, lam=1.0, signal="reward")
        assert np.allclose(adv, [2.0, 1.0], atol=1e-9)

    def test_matches_truncated_double_sum(self, rng):
        # direct evaluation of A_t = sum_l (gamma lam)^l delta_{t+l} on one episode
        gamma, lam = 0.9, 0.95
        rewards = rng.normal(size=5)
        batch = _manual_batch(rewards, episode_len=5)
        values = np.array([0.3])
        adv = gae(batch, values, gamma, lam, signal="reward")
        deltas = np.empty(5)
        for t in range(5):
            v_next = values[0] if t < 4 else 0.0
            deltas[t] = rewards[t] + gamma * v_next - values[0]
        expected = np.zeros(5)
        for t in range(5):
            expected[t] = sum((gamma * lam) ** l * deltas[t + l] for l in range(5 - t))
        assert np.allclose(adv, expected, atol=1e-12)

    def test_no_bootstrap_across_reset(self):
        batch = _manual_batch([0.0, 1.0, 0.0, 1.0], episode_len=2)
        values = np.array([5.0])
        adv = gae(batch, values, gamma=0.9, lam=0.9, signal="reward")
        # episodes are identical so their advantage profiles must match
        assert np.allclose(adv[:2], adv[2:], atol=1e-14)


class TestFitValues:
    def test_constant_targets(self):
        fitted = fit_value_table(np.array([2, 2, 2]), np.array([3.0, 3.0, 3.0]), np.zeros(4))
        assert fitted[2] == 3.0

    def test_mean_of_two(self):
        fitted = fit_value_table(np.array([0, 0]), np.array([1.0, 3.0]), np.zeros(1))
        assert fitted[0] == 2.0

    def test_unvisited_state_keeps_previous(self):
        prev = np.array([7.0, -1.0])
        fitted = fit_value_table(np.array([0]), np.array([2.0]), prev)
        assert fitted[1] == -1.0

    def test_linear_realizable_target(self, rng):
        feats = rng.normal(size=(6, 3))
        w_true = np.array([0.5, -1.0, 2.0])
        states = rng.integers(0, 6, size=200)
        targets = feats[states] @ w_true
        w = fit_linear_values(feats, states, targets, epochs=4000, learning_rate=0.05)
        resid = feats[states] @ w - targets
        assert np.max(np.abs(resid)) <= 1e-6

    def test_fit_values_all_signals(self, rng):
        spec = random_spec(rng, num_states=3, num_actions=2, num_costs=2, horizon=4)
        params = tabular_policy(3, 2)
        batch = collect(spec, params, 40, seed=0)
        config = EstimatorConfig(gamma=spec.discount)
        tables = ValueTables.zeros(3, 2)
        estimate = make_estimates(batch, tables, config)
        fitted = fit_values(batch, estimate, config, tables)
        assert fitted.reward.shape == (3,)
        assert fitted.cost.shape == (2, 3)


class TestExactEval:
    def test_geometric_series(self):
        spec = _degenerate_spec()
        ev = exact_eval(spec, tabular_policy(1, 1))
        assert ev.v_reward[0] == pytest.approx(10.0, abs=1e-10)
        assert np.allclose(ev.visitation, [1.0])
        assert ev.j_reward == pytest.approx(10.0, abs=1e-10)

    def test_two_state_chain_visitation(self):
        transition = np.zeros((2, 1, 2))
        transition[0, 0, 1] = 1.0
        transition[1, 0, 1] = 1.0
        spec = CmdpSpec(2, 1, transition, np.zeros((2, 1)), (np.zeros((2, 1)),), np.array([1.0, 0.0]), 0.5, 10)
        ev = exact_eval(spec, tabular_policy(2, 1))
        assert np.allclose(ev.visitation, [0.5, 0.5], atol=1e-12)

    def test_matches_vectorized_monte_carlo(self, rng):
        spec = random_spec(rng, num_states=6, num_actions=2, gamma=0.9)
        params = random_policy(rng, spec)
        ev = exact_eval(spec, params)
        # vectorized Monte Carlo over 1e5 episodes, horizon long enough that
        # the discounted tail is far below the standard error
        n, horizon = 10**5, 160
        gen = np.random.default_rng(77)
        from acpo.policy import probs_table

        action_cdf = np.cumsum(probs_table(params), axis=1)
        trans_cdf = np.cumsum(spec.transition, axis=2)
        states = gen.choice(spec.num_states, size=n, p=spec.initial_dist)
        returns = np.zeros(n)
        disc = 1.0
        for _ in range(horizon):
            u = gen.random(n)
            acts = (action_cdf[states] < u[:, None]).sum(axis=1)
            returns += disc * spec.reward[states, acts]
            u2 = gen.random(n)
            states = (trans_cdf[states, acts] < u2[:, None]).sum(axis=1)
            disc *= spec.discount
        se = returns.std() / np.sqrt(n)
        assert abs(ev.j_reward - returns.mean()) <= 3 * se

    def test_bellman_residual_property(self, rng):
        for _ in range(20):
            spec = random_spec(rng, num_states=int(rng.integers(2, 7)), num_actions=int(rng.integers(2, 4)))
            params = random_policy(rng, spec)
            ev = exact_eval(spec, params)
            from acpo.policy import probs_table

            pi = probs_table(params)
            p_pi = np.einsum("sap,sa->sp", spec.transition, pi)
            r_pi = (pi * spec.reward).sum(axis=1)
            residual = ev.v_reward - (r_pi + spec.discount * p_pi @ ev.v_reward)
            assert np.max(np.abs(residual)) <= 1e-10

    def test_visitation_flow_identity(self, rng):
        for _ in range(20):
            spec = random_spec(rng, num_states=5, num_actions=3)
            params = random_policy(rng, spec)
            ev = exact_eval(spec, params)
            assert np.all(ev.visitation >= -1e-12)
            assert abs(ev.visitation.sum() - 1.0) <= 1e-10
            from acpo.policy import probs_table

            pi = probs_table(params)
            p_pi = np.einsum("sap,sa->sp", spec.transition, pi)
            flow = (1 - spec.discount) * spec.initial_dist + spec.discount * p_pi.T @ ev.visitation
            assert np.max(np.abs(ev.visitation - flow)) <= 1e-10


class TestQueues:
    def test_ring_buffer_eviction(self):
        state = BudgetState.fresh(num_costs=1, d0=np.array([1.0]), d_des=np.array([1.0]), capacity=3)

        class E:
            episode_reward_return = 0.0
            episode_cost_returns = np.array([0.0])

        for v in [1.0, 2.0, 3.0, 4.0]:
            e = E()
            e.episode_reward_return = v
            e.episode_cost_returns = np.array([v])
            update_queues(state, e)
        assert list(state.queue_reward) == [2.0, 3.0, 4.0]
        assert list(state.queue_cost[0]) == [2.0, 3.0, 4.0]

    def test_constant_pushes_statistics(self):
        state = BudgetState.fresh(num_costs=1, d0=np.array([1.0]), d_des=np.array([1.0]), capacity=5)

        class E:
            episode_reward_return = 2.5
            episode_cost_returns = np.array([2.5])

        for _ in range(5):
            update_queues(state, E())
        assert np.mean(state.queue_reward) == 2.5
        assert np.std(state.queue_reward) == 0.0
