import numpy as np
import pytest

from acpo.ascent import ascend
from acpo.baselines import (
    CurriculumSchedule,
    LagrangeState,
    crpo_step,
    curriculum_budget,
    ipo_step,
    ppo_lag_step,
    run_baseline,
)
from acpo.cmdp import build_gridworld
from acpo.estimation import EstimatorConfig
from acpo.objectives import MAX_REWARD, StageObjective
from acpo.scheduler import OptimizerConfig, StageConfig

from conftest import batch_with_estimates, random_policy, random_spec


class TestIpoStep:
    def test_bitwise_equal_to_shared_stage_update(self, rng):
        spec = random_spec(rng, num_states=4, num_actions=3)
        params = random_policy(rng, spec)
        batch, estimate = batch_with_estimates(spec, params, num_transitions=64, seed=2)
        opt = OptimizerConfig(epochs=3, minibatch_size=16, learning_rate=1e-3)
        budget = np.array([1.5])
        out_a, _ = ipo_step(
            params, batch, estimate, budget, opt, barrier_t=25.0, barrier_cap=25.0, kl_stop=0.02,
            rng=np.random.default_rng(7),
        )
        obj = StageObjective(kind=MAX_REWARD, cost_budget=budget, barrier_t=25.0, barrier_cap=25.0, clip_ratio=opt.clip_ratio)
        out_b, _ = ascend(
            params, batch, estimate, obj, epochs=3, minibatch=16, lr=1e-3, kl_stop=0.02,
            rng=np.random.default_rng(7),
        )
        assert np.array_equal(out_a.weights, out_b.weights)


class TestPpoLag:
    def _setup(self, rng, jc=1.0, d=1.0):
        spec = random_spec(rng, num_states=3, num_actions=2)
        params = random_policy(rng, spec)
        batch, estimate = batch_with_estimates(spec, params, num_transitions=48, seed=1)
        estimate.episode_cost_returns = np.array([jc])
        return spec, params, batch, estimate

    def test_multiplier_unchanged_at_budget(self, rng):
        spec, params, batch, estimate = self._setup(rng, jc=1.0, d=1.0)
        lag = LagrangeState.fresh(1, init=0.5)
        _, new_lag, _ = ppo_lag_step(params, lag, batch, estimate, np.array([1.0]), OptimizerConfig(epochs=1, minibatch_size=48))
        assert new_lag.multipliers[0] == pytest.approx(0.5)

    def test_multiplier_grows_under_violation_until_clamp(self, rng):
        spec, params, batch, estimate = self._setup(rng, jc=5.0, d=1.0)
        lag = LagrangeState.fresh(1, init=0.0, lr=0.1, upper_bound=1.1)
        opt = OptimizerConfig(epochs=1, minibatch_size=48)
        history = []
        for _ in range(5):
            params, lag, _ = ppo_lag_step(params, lag, batch, estimate, np.array([1.0]), opt, rng=np.random.default_rng(0))
            history.append(lag.multipliers[0])
        assert history[0] < history[1]
        assert history[-1] == pytest.approx(1.1)  # clamped at the upper bound

    def test_zero_multiplier_matches_unconstrained_gradient_step(self, rng):
        spec, params, batch, estimate = self._setup(rng)
        lag = LagrangeState.fresh(1, init=0.0)
        opt = OptimizerConfig(epochs=2, minibatch_size=16, learning_rate=1e-3)
        out_a, _, _ = ppo_lag_step(params, lag, batch, estimate, np.array([50.0]), opt, rng=np.random.default_rng(3))
        from dataclasses import replace

        plain_estimate = replace(estimate, adv_reward=estimate.adv_reward_raw)
        obj = StageObjective(kind=MAX_REWARD, cost_budget=np.array([50.0]), clip_ratio=opt.clip_ratio, barrier_enabled=False)
        out_b, _ = ascend(params, batch, plain_estimate, obj, epochs=2, minibatch=16, lr=1e-3, kl_stop=0.02, rng=np.random.default_rng(3))
        assert np.allclose(out_a.weights, out_b.weights, atol=1e-12)

    def test_multipliers_stay_in_bounds(self, rng):
        spec, params, batch, estimate = self._setup(rng)
        lag = LagrangeState.fresh(1, init=0.5, lr=2.0, upper_bound=3.0)
        opt = OptimizerConfig(epochs=1, minibatch_size=48)
        gen = np.random.default_rng(5)
        for _ in range(30):
            estimate.episode_cost_returns = np.array([gen.uniform(-5, 5)])
            params, lag, _ = ppo_lag_step(params, lag, batch, estimate, np.array([0.0]), opt, rng=gen)
            assert 0.0 <= lag.multipliers[0] <= 3.0


class TestCrpo:
    def test_reward_step_when_satisfied(self, rng):
        spec = random_spec(rng, num_states=3, num_actions=2, num_costs=2)
        params = random_policy(rng, spec)
        batch, estimate = batch_with_estimates(spec, params, num_transitions=32, seed=0)
        estimate.episode_cost_returns = np.array([0.1, 0.1])
        _, _, mode = crpo_step(params, batch, estimate, np.array([1.0, 1.0]), 0.0, OptimizerConfig(epochs=1, minibatch_size=32))
        assert mode == "reward"

    def test_lowest_violating_index_selected(self, rng):
        spec = random_spec(rng, num_states=3, num_actions=2, num_costs=3)
        params = random_policy(rng, spec)
        batch, estimate = batch_with_estimates(spec, params, num_transitions=32, seed=0)
        estimate.episode_cost_returns = np.array([0.5, 9.0, 9.0])
        _, _, mode = crpo_step(params, batch, estimate, np.array([1.0, 1.0, 1.0]), 0.0, OptimizerConfig(epochs=1, minibatch_size=32))
        assert mode == "cost_1"

    def test_tolerance_shifts_the_trigger(self, rng):
        spec = random_spec(rng, num_states=3, num_actions=2)
        params = random_policy(rng, spec)
        batch, estimate = batch_with_estimates(spec, params, num_transitions=32, seed=0)
        estimate.episode_cost_returns = np.array([1.4])
        _, _, mode = crpo_step(params, batch, estimate, np.array([1.0]), 0.5, OptimizerConfig(epochs=1, minibatch_size=32))
        assert mode == "reward"
        with pytest.raises(ValueError):
            crpo_step(params, batch, estimate, np.array([1.0]), -0.1, OptimizerConfig())


class TestCurriculum:
    def test_endpoints(self):
        sched = CurriculumSchedule(d_init=np.array([4.0]), d_final=np.array([1.0]), decay_iters=10)
        assert curriculum_budget(sched, 0)[0] == pytest.approx(4.0)
        assert curriculum_budget(sched, 10)[0] == pytest.approx(1.0)
        assert curriculum_budget(sched, 50)[0] == pytest.approx(1.0)

    def test_linear_midpoint(self):
        sched = CurriculumSchedule(d_init=np.array([4.0]), d_final=np.array([1.0]), decay_iters=10)
        assert curriculum_budget(sched, 5)[0] == pytest.approx(2.5)

    def test_monotone_non_increasing(self):
        for shape in ("linear", "exponential"):
            sched = CurriculumSchedule(d_init=np.array([4.0]), d_final=np.array([0.5]), decay_iters=25, shape=shape)
            values = [curriculum_budget(sched, k)[0] for k in range(40)]
            assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
            assert values[-1] == pytest.approx(0.5)

    def test_invalid_schedules_rejected(self):
        with pytest.raises(ValueError):
            CurriculumSchedule(d_init=np.array([1.0]), d_final=np.array([2.0]), decay_iters=5)
        with pytest.raises(ValueError):
            CurriculumSchedule(d_init=np.array([2.0]), d_final=np.array([1.0]), decay_iters=0)


class TestRunBaseline:
    def test_all_algorithms_produce_traces(self):
        spec = build_gridworld("hazard-goal", 3, horizon=12)
        cfg = StageConfig(d0=np.array([3.0]), d_des=np.array([1.0]), converge_window=5)
        est = EstimatorConfig(gamma=spec.discount)
        opt = OptimizerConfig(epochs=2, minibatch_size=64)
        for algo in ("ipo", "ipo-c", "ppo-lag", "crpo"):
            result = run_baseline(spec, algo, cfg, est, opt, seed=0, num_iterations=6, batch_size=120)
            assert result.iterations == 6
            assert len(result.metrics) == 6
            assert not result.terminated

    def test_ipo_c_budget_trace_monotone(self):
        spec = build_gridworld("hazard-goal", 3, horizon=12)
        cfg = StageConfig(d0=np.array([3.0]), d_des=np.array([1.0]), converge_window=5)
        result = run_baseline(
            spec,
            "ipo-c",
            cfg,
            EstimatorConfig(gamma=spec.discount),
            OptimizerConfig(epochs=2, minibatch_size=64),
            seed=0,
            num_iterations=8,
            batch_size=120,
        )
        budgets = [row["d"][0] for row in result.budget_history]
        assert all(b <= a + 1e-12 for a, b in zip(budgets, budgets[1:]))
        assert budgets[0] == pytest.approx(3.0)

    def test_unknown_algorithm_rejected(self):
        spec = build_gridworld("hazard-goal", 3, horizon=12)
        cfg = StageConfig(d0=np.array([3.0]), d_des=np.array([1.0]))
        with pytest.raises(ValueError):
            run_baseline(spec, "sarsa", cfg, EstimatorConfig(), OptimizerConfig(), seed=0)
