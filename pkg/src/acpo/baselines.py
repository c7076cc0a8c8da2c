"""Fixed-budget and curriculum comparators sharing the training stack.

ipo:     interior-point updates with a permanently fixed budget (the
         max-reward stage objective, never alternated).
ipo-c:   the same with a scheduled budget decaying from a loose initial
         value to the desired one.
ppo-lag: clipped surrogate of the Lagrangian advantage combination with a
         projected-gradient multiplier update per constraint.
crpo:    alternates unconstrained reward ascent with unconstrained descent
         on the most violating cost signal.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .ascent import AscendInfo, ascend
from .cmdp import CmdpSpec
from .estimation import (
    EstimateSet,
    EstimatorConfig,
    TrajectoryBatch,
    ValueTables,
    collect_chunked,
    fit_values,
    make_estimates,
    update_queues,
)
from .objectives import MAX_REWARD, MIN_COST, StageObjective
from .policy import PolicyParams, tabular_policy
from .scheduler import BudgetState, OptimizerConfig, RunResult, StageConfig


@dataclass
class LagrangeState:
    """Per-constraint multipliers with projected-gradient updates."""

    multipliers: np.ndarray
    lr: float = 0.035
    upper_bound: float = 1000.0

    def __post_init__(self):
        object.__setattr__(self, "multipliers", np.atleast_1d(np.asarray(self.multipliers, dtype=float)))
        if np.any(self.multipliers < 0) or np.any(self.multipliers > self.upper_bound):
            raise ValueError("multipliers must start inside [0, upper_bound]")

    @classmethod
    def fresh(cls, num_costs: int, init: float = 1e-3, lr: float = 0.035, upper_bound: float = 1000.0):
        return cls(multipliers=np.full(num_costs, init), lr=lr, upper_bound=upper_bound)


@dataclass(frozen=True)
class CurriculumSchedule:
    """Budget decay from a loose initial vector to the desired one."""

    d_init: np.ndarray
    d_final: np.ndarray
    decay_iters: int
    shape: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "d_init", np.atleast_1d(np.asarray(self.d_init, dtype=float)))
        object.__setattr__(self, "d_final", np.atleast_1d(np.asarray(self.d_final, dtype=float)))
        if self.decay_iters < 1:
            raise ValueError("decay_iters must be >= 1")
        if np.any(self.d_final < 0) or np.any(self.d_init < self.d_final):
            raise ValueError("need d_init >= d_final >= 0")
        if self.shape not in ("linear", "exponential"):
            raise ValueError("shape must be linear or exponential")


def curriculum_budget(schedule: CurriculumSchedule, iteration: int) -> np.ndarray:
    """Budget at `iteration`: endpoint-exact, monotone toward d_final."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    frac = min(1.0, iteration / schedule.decay_iters)
    if schedule.shape == "linear":
        return schedule.d_init + (schedule.d_final - schedule.d_init) * frac
    # exponential: geometric interpolation of the gap above d_final
    gap = schedule.d_init - schedule.d_final
    return schedule.d_final + gap * np.exp(np.log(1e-2) * frac) * (frac < 1.0)


def ipo_step(
    params: PolicyParams,
    batch: TrajectoryBatch,
    estimate: EstimateSet,
    d_fixed: np.ndarray,
    opt_cfg: OptimizerConfig,
    barrier_t: float = 25.0,
    barrier_cap: float = 25.0,
    kl_stop: float = 0.02,
    rng: np.random.Generator | None = None,
) -> tuple[PolicyParams, AscendInfo]:
    """One interior-point update at a fixed budget; the max-reward stage
    objective verbatim."""
    obj = StageObjective(
        kind=MAX_REWARD,
        cost_budget=d_fixed,
        barrier_t=barrier_t,
        barrier_cap=barrier_cap,
        clip_ratio=opt_cfg.clip_ratio,
    )
    return ascend(
        params,
        batch,
        estimate,
        obj,
        epochs=opt_cfg.epochs,
        minibatch=opt_cfg.minibatch_size,
        lr=opt_cfg.learning_rate,
        kl_stop=kl_stop,
        rng=rng,
    )


def ppo_lag_step(
    params: PolicyParams,
    lag: LagrangeState,
    batch: TrajectoryBatch,
    estimate: EstimateSet,
    d_des: np.ndarray,
    opt_cfg: OptimizerConfig,
    kl_stop: float = 0.02,
    rng: np.random.Generator | None = None,
) -> tuple[PolicyParams, LagrangeState, AscendInfo]:
    """Clipped ascent on (A_R - sum_i lambda_i A_C_i) / (1 + sum lambda),
    then a projected multiplier step on the constraint violations."""
    lam = lag.multipliers
    combined = estimate.adv_reward_raw - np.tensordot(lam, estimate.adv_cost, axes=1)
    combined = combined / (1.0 + lam.sum())
    surrogate_estimate = replace(estimate, adv_reward=combined)
    obj = StageObjective(kind=MAX_REWARD, cost_budget=d_des, clip_ratio=opt_cfg.clip_ratio, barrier_enabled=False)
    new_params, info = ascend(
        params,
        batch,
        surrogate_estimate,
        obj,
        epochs=opt_cfg.epochs,
        minibatch=opt_cfg.minibatch_size,
        lr=opt_cfg.learning_rate,
        kl_stop=kl_stop,
        rng=rng,
    )
    violation = estimate.episode_cost_returns - np.asarray(d_des, dtype=float)
    new_multipliers = np.clip(lam + lag.lr * violation, 0.0, lag.upper_bound)
    return new_params, replace(lag, multipliers=new_multipliers), info


def crpo_step(
    params: PolicyParams,
    batch: TrajectoryBatch,
    estimate: EstimateSet,
    d_des: np.ndarray,
    tol_eta: float,
    opt_cfg: OptimizerConfig,
    kl_stop: float = 0.02,
    rng: np.random.Generator | None = None,
) -> tuple[PolicyParams, AscendInfo, str]:
    """Alternating update: descend the lowest-index violating cost signal if
    any exceeds its budget by more than tol_eta, otherwise ascend reward.
    No barrier terms either way."""
    if tol_eta < 0:
        raise ValueError("tol_eta must be >= 0")
    d = np.asarray(d_des, dtype=float)
    violating = [i for i in range(batch.num_costs) if estimate.episode_cost_returns[i] > d[i] + tol_eta]
    if violating:
        target = violating[0]
        obj = StageObjective(
            kind=MIN_COST,
            cost_budget=d,
            clip_ratio=opt_cfg.clip_ratio,
            active_costs=(target,),
            barrier_enabled=False,
        )
        mode = f"cost_{target}"
    else:
        obj = StageObjective(kind=MAX_REWARD, cost_budget=d, clip_ratio=opt_cfg.clip_ratio, barrier_enabled=False)
        mode = "reward"
    new_params, info = ascend(
        params,
        batch,
        estimate,
        obj,
        epochs=opt_cfg.epochs,
        minibatch=opt_cfg.minibatch_size,
        lr=opt_cfg.learning_rate,
        kl_stop=kl_stop,
        rng=rng,
    )
    return new_params, info, mode


BASELINE_ALGORITHMS = ("ipo", "ipo-c", "ppo-lag", "crpo")


def run_baseline(
    spec: CmdpSpec,
    algorithm: str,
    cfg: StageConfig,
    est_cfg: EstimatorConfig,
    opt_cfg: OptimizerConfig,
    seed: int,
    num_iterations: int = 300,
    batch_size: int = 4000,
    init_params: PolicyParams | None = None,
    curriculum: CurriculumSchedule | None = None,
    lagrange: LagrangeState | None = None,
    crpo_tol: float = 0.0,
    workers: int = 1,
) -> RunResult:
    """Train a comparator with the shared collection/estimation stack.

    The stage config supplies the desired budgets, barrier settings and the
    trust-region stop; baselines ignore its alternation fields. ipo-c uses
    `curriculum` (defaulting to a linear decay from d0 to d_des over the
    first half of the run).
    """
    if algorithm not in BASELINE_ALGORITHMS:
        raise ValueError(f"unknown baseline {algorithm!r}")
    m = spec.num_costs
    root = np.random.SeedSequence(seed)
    env_ss, mb_ss, _ = root.spawn(3)
    env_children = env_ss.spawn(num_iterations)
    mb_rng = np.random.default_rng(mb_ss)

    params = init_params or tabular_policy(spec.num_states, spec.num_actions)
    tables = ValueTables.zeros(spec.num_states, m)
    state = BudgetState.fresh(m, cfg.d0, cfg.d_des, cfg.converge_window)
    if algorithm == "ipo-c" and curriculum is None:
        curriculum = CurriculumSchedule(d_init=cfg.d0, d_final=cfg.d_des, decay_iters=max(1, num_iterations // 2))
    lag = lagrange or LagrangeState.fresh(m)
    result = RunResult(final_params=params, terminated=False, iterations=0)

    for k in range(num_iterations):
        batch = collect_chunked(spec, params, batch_size, env_children[k], workers)
        estimate = make_estimates(batch, tables, est_cfg)
        update_queues(state, estimate)

        if algorithm == "ipo":
            budget = cfg.d_des
            params, info = ipo_step(
                params, batch, estimate, budget, opt_cfg, cfg.barrier_t, cfg.barrier_cap, cfg.trust_region, mb_rng
            )
            stage = "ipo"
        elif algorithm == "ipo-c":
            budget = curriculum_budget(curriculum, k)
            params, info = ipo_step(
                params, batch, estimate, budget, opt_cfg, cfg.barrier_t, cfg.barrier_cap, cfg.trust_region, mb_rng
            )
            stage = "ipo-c"
        elif algorithm == "ppo-lag":
            budget = cfg.d_des
            params, lag, info = ppo_lag_step(params, lag, batch, estimate, budget, opt_cfg, cfg.trust_region, mb_rng)
            stage = "ppo-lag"
        else:
            budget = cfg.d_des
            params, info, mode = crpo_step(params, batch, estimate, budget, crpo_tol, opt_cfg, cfg.trust_region, mb_rng)
            stage = f"crpo-{mode}"

        state.d = np.asarray(budget, dtype=float).copy()
        tables = fit_values(batch, estimate, est_cfg, tables)
        result.stage_history.append(stage)
        result.kl_history.append(info.final_kl)
        result.checkpoints[k] = params
        result.budget_history.append({"iter": k, "flag": -1, "d": state.d.copy(), "g": state.g})
        result.metrics.append(
            {
                "iter": k,
                "stage": stage,
                "j_r_hat": estimate.episode_reward_return,
                "j_c_hat": np.array(estimate.episode_cost_returns),
                "d": state.d.copy(),
                "g": state.g,
                "kl": info.final_kl,
                "objective": info.objective_end,
            }
        )
        result.iterations = k + 1

    result.final_params = params
    result.final_state = state
    return result
