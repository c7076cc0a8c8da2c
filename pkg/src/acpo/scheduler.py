"""Outer training loop: stage alternation, budget adaptation, convergence.

The loop alternates a reward-maximizing stage and a cost-minimizing stage
under trainable budgets. Once the episode-return queues stabilize, the
budget controller either terminates (cost returns sit at the desired
budgets), projects the policy onto a tightened budget (cost too high), or
enlarges an over-conservative budget. Stage switching, budget updates and
termination all live in `update_budgets`; `run_acpo` wires it to rollout
collection, estimation and the stage optimizers.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .ascent import AscendInfo, ascend
from .cmdp import CmdpSpec
from .estimation import (
    EstimatorConfig,
    ValueTables,
    collect_chunked,
    fit_values,
    make_estimates,
    update_queues,
)
from .objectives import MAX_REWARD, MIN_COST, PROJECTION, StageObjective
from .policy import PolicyParams, tabular_policy

logger = logging.getLogger("acpo")

STAGE_FLAGS = {MAX_REWARD: 0, MIN_COST: 1, PROJECTION: 2}


@dataclass
class StageConfig:
    """Stage-alternation and budget-controller settings."""

    d0: np.ndarray
    d_des: np.ndarray
    n1: int = 10
    n2: int = 5
    n_e: int = 10
    k_p: float = 0.5
    finish_tol: float = 0.05
    converge_window: int = 10
    converge_rel_tol: float = 0.02
    trust_region: float = 0.02
    barrier_t: float = 25.0
    barrier_cap: float = 25.0

    def __post_init__(self):
        object.__setattr__(self, "d0", np.atleast_1d(np.asarray(self.d0, dtype=float)))
        object.__setattr__(self, "d_des", np.atleast_1d(np.asarray(self.d_des, dtype=float)))
        if min(self.n1, self.n2, self.n_e) < 1:
            raise ValueError("n1, n2 and n_e must be >= 1")
        if self.k_p <= 0:
            raise ValueError("k_p must be positive")
        if np.any(self.d0 < self.d_des):
            raise ValueError("initial budgets must dominate the desired budgets")
        if self.converge_window < 2:
            raise ValueError("converge_window must be >= 2")


@dataclass
class OptimizerConfig:
    """Inner gradient-ascent settings shared by all algorithms."""

    learning_rate: float = 3e-4
    epochs: int = 40
    minibatch_size: int = 256
    clip_ratio: float = 0.2

    def __post_init__(self):
        if not 0 < self.clip_ratio < 1:
            raise ValueError("clip_ratio must lie in (0, 1)")


@dataclass
class BudgetState:
    """Mutable controller state: budgets, stage flag and return queues."""

    d: np.ndarray
    g: float
    d_des: np.ndarray
    stage_flag: str
    queue_reward: deque
    queue_cost: list[deque]
    iter_in_stage: int = 0
    global_iter: int = 0

    @classmethod
    def fresh(cls, num_costs: int, d0: np.ndarray, d_des: np.ndarray, capacity: int) -> "BudgetState":
        return cls(
            d=np.array(d0, dtype=float),
            g=0.0,
            d_des=np.array(d_des, dtype=float),
            stage_flag=MAX_REWARD,
            queue_reward=deque(maxlen=capacity),
            queue_cost=[deque(maxlen=capacity) for _ in range(num_costs)],
        )

    def reset_queues(self):
        self.queue_reward.clear()
        for q in self.queue_cost:
            q.clear()
        self.iter_in_stage = 0

    def cost_means(self) -> np.ndarray:
        return np.array([np.mean(q) if len(q) else np.nan for q in self.queue_cost])


def converged(queue, window: int, rel_tol: float) -> bool:
    """Scale-aware variance test: enough entries and a small windowed std."""
    if len(queue) < window:
        return False
    recent = np.asarray(list(queue)[-window:], dtype=float)
    return bool(np.std(recent) <= rel_tol * (1.0 + abs(np.mean(recent))))


def projection_delta(d_old: float, d_des: float, k_p: float) -> float:
    """Proportional feedback step toward the desired budget."""
    if k_p <= 0:
        raise ValueError("k_p must be positive")
    return k_p * (d_des - d_old)


def update_budgets(state: BudgetState, cfg: StageConfig) -> tuple[BudgetState, bool]:
    """Advance the budget controller one tick; returns (state, terminate).

    Control flow: an exploration-only prefix pins the max-reward stage;
    while queues are unsettled the two adversarial stages alternate on their
    iteration caps (the reward budget latches on entering min-cost, the cost
    budget latches onto achieved costs on leaving it); once every queue
    converges the run terminates if all cost returns sit within the finish
    tolerance of their desired budgets, projects under a proportionally
    tightened budget if any sits above, or enlarges the budgets without
    projection if all sit strictly below. A projection stage runs until the
    cost queues converge under the new budget, then hands back to
    max-reward. Budget-changing events consume the queue evidence (queues
    reset) so a single convergence plateau cannot re-trigger them.
    """
    if state.global_iter < cfg.n_e:
        state.stage_flag = MAX_REWARD
        state.iter_in_stage = 0
        return state, False

    cost_conv = all(converged(q, cfg.converge_window, cfg.converge_rel_tol) for q in state.queue_cost)

    if state.stage_flag == PROJECTION:
        if cost_conv:
            logger.info("projection settled at cost means %s; back to max-reward", state.cost_means())
            state.stage_flag = MAX_REWARD
            state.reset_queues()
        return state, False

    reward_conv = converged(state.queue_reward, cfg.converge_window, cfg.converge_rel_tol)
    if reward_conv and cost_conv:
        means = state.cost_means()
        if np.all(np.abs(means - state.d_des) <= cfg.finish_tol):
            return state, True
        if np.any(means > state.d_des):
            violating = means > state.d_des
            new_d = state.d.copy()
            new_d[violating] += cfg.k_p * (state.d_des - means)[violating]
            state.d = np.maximum(new_d, 0.0)
            state.stage_flag = PROJECTION
            state.reset_queues()
            logger.info("converged above budget (means %s); projecting with budget %s", means, state.d)
        elif np.all(means < state.d_des - cfg.finish_tol):
            state.d = np.maximum(state.d + cfg.k_p * (state.d_des - means), 0.0)
            state.stage_flag = MAX_REWARD
            state.reset_queues()
            logger.info("over-conservative (means %s); enlarging budget to %s", means, state.d)
        # else: some costs inside tolerance, others below; no budget move
        return state, False

    if state.stage_flag == MAX_REWARD and state.iter_in_stage >= cfg.n1:
        state.stage_flag = MIN_COST
        state.g = float(np.mean(state.queue_reward))
        state.iter_in_stage = 0
    elif state.stage_flag == MIN_COST and state.iter_in_stage >= cfg.n2:
        state.stage_flag = MAX_REWARD
        state.d = state.cost_means()
        state.iter_in_stage = 0
    return state, False


@dataclass
class RunResult:
    """Everything a finished run exposes for inspection and verification."""

    final_params: PolicyParams
    terminated: bool
    iterations: int
    metrics: list[dict] = field(default_factory=list)
    budget_history: list[dict] = field(default_factory=list)
    stage_history: list[str] = field(default_factory=list)
    checkpoints: dict[int, PolicyParams] = field(default_factory=dict)
    kl_history: list[float] = field(default_factory=list)
    final_state: BudgetState | None = None


def run_acpo(
    spec: CmdpSpec,
    cfg: StageConfig,
    est_cfg: EstimatorConfig,
    opt_cfg: OptimizerConfig,
    seed: int,
    num_iterations: int = 300,
    batch_size: int = 4000,
    init_params: PolicyParams | None = None,
    reset_policy_on_projection: bool = False,
    workers: int = 1,
) -> RunResult:
    """Train with adaptive budgets; see module docstring for the loop shape.

    Deterministic given (config, seed): environment sampling and minibatch
    shuffling draw from named substreams of the single run seed. On entering
    a projection stage the current policy is frozen as the projection target
    and the tightened budget is held until the stage settles.
    """
    m = spec.num_costs
    if len(cfg.d0) != m or len(cfg.d_des) != m:
        raise ValueError("budget vectors must have one entry per cost signal")
    root = np.random.SeedSequence(seed)
    env_ss, mb_ss, init_ss = root.spawn(3)
    env_children = env_ss.spawn(num_iterations)
    mb_rng = np.random.default_rng(mb_ss)

    params = init_params or tabular_policy(spec.num_states, spec.num_actions)
    tables = ValueTables.zeros(spec.num_states, m)
    state = BudgetState.fresh(m, cfg.d0, cfg.d_des, cfg.converge_window)
    frozen: PolicyParams | None = None
    result = RunResult(final_params=params, terminated=False, iterations=0)

    for k in range(num_iterations):
        batch = collect_chunked(spec, params, batch_size, env_children[k], workers)
        estimate = make_estimates(batch, tables, est_cfg)
        update_queues(state, estimate)
        state.global_iter = k
        prev_flag = state.stage_flag
        state, terminate = update_budgets(state, cfg)
        result.budget_history.append(
            {"iter": k, "flag": STAGE_FLAGS[state.stage_flag], "d": state.d.copy(), "g": state.g}
        )
        if terminate:
            logger.info("terminated at iteration %d with cost means %s", k, state.cost_means())
            result.terminated = True
            break

        if state.stage_flag == PROJECTION and prev_flag != PROJECTION:
            frozen = params
            if reset_policy_on_projection:
                params = tabular_policy(spec.num_states, spec.num_actions)
        elif state.stage_flag != PROJECTION:
            frozen = None

        executed = state.stage_flag
        if state.stage_flag == MAX_REWARD:
            obj = StageObjective(
                kind=MAX_REWARD,
                cost_budget=state.d,
                barrier_t=cfg.barrier_t,
                barrier_cap=cfg.barrier_cap,
                clip_ratio=opt_cfg.clip_ratio,
            )
        elif state.stage_flag == MIN_COST:
            active = tuple(
                i for i in range(m) if len(state.queue_cost[i]) and np.mean(state.queue_cost[i]) > state.d_des[i]
            )
            if active:
                obj = StageObjective(
                    kind=MIN_COST,
                    cost_budget=state.d,
                    reward_budget=state.g,
                    barrier_t=cfg.barrier_t,
                    barrier_cap=cfg.barrier_cap,
                    clip_ratio=opt_cfg.clip_ratio,
                    active_costs=active,
                )
            else:
                # all cost returns inside the desired budgets: skip the
                # min-cost update and keep maximizing reward
                executed = "min-cost-skipped"
                obj = StageObjective(
                    kind=MAX_REWARD,
                    cost_budget=state.d,
                    barrier_t=cfg.barrier_t,
                    barrier_cap=cfg.barrier_cap,
                    clip_ratio=opt_cfg.clip_ratio,
                )
        else:
            obj = StageObjective(
                kind=PROJECTION,
                cost_budget=state.d,
                barrier_t=cfg.barrier_t,
                barrier_cap=cfg.barrier_cap,
                clip_ratio=opt_cfg.clip_ratio,
                frozen=frozen,
            )

        params, info = ascend(
            params,
            batch,
            estimate,
            obj,
            epochs=opt_cfg.epochs,
            minibatch=opt_cfg.minibatch_size,
            lr=opt_cfg.learning_rate,
            kl_stop=cfg.trust_region,
            rng=mb_rng,
        )
        if info.aborted:
            logger.warning("iteration %d: non-finite gradient, update skipped", k)
        state.iter_in_stage += 1
        tables = fit_values(batch, estimate, est_cfg, tables)

        result.stage_history.append(executed)
        result.kl_history.append(info.final_kl)
        result.checkpoints[k] = params
        result.metrics.append(
            {
                "iter": k,
                "stage": executed,
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
