"""Rollout collection, advantage estimation, value fitting, exact evaluation.

Sampled quantities (episode returns, GAE advantages) drive training and the
budget queues; `exact_eval` solves the same policy's values, visitation and
returns in closed form for oracles and verification. Episode returns pushed
to queues are undiscounted sums, matching how runs are reported, while
advantages and exact returns use the discount factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .cmdp import CmdpSpec
from .policy import PolicyParams, log_probs_table, probs_table

if TYPE_CHECKING:  # only for annotations; the scheduler imports this module
    from .scheduler import BudgetState


@dataclass
class TrajectoryBatch:
    """Flat per-transition arrays for one collection round.

    Episodes are contiguous; `done` marks horizon resets. The final episode
    may be cut by the transition budget, in which case its last `done` entry
    is False and advantage estimation bootstraps from the recorded
    next_state.
    """

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray  # shape (m, B)
    old_log_probs: np.ndarray
    episode_ids: np.ndarray
    step_indices: np.ndarray
    dones: np.ndarray

    def __post_init__(self):
        n = len(self.states)
        for name in ("actions", "next_states", "rewards", "old_log_probs", "episode_ids", "step_indices", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length != {n}")
        if self.costs.shape[1] != n:
            raise ValueError("costs second dimension must match batch size")
        if not np.all(np.isfinite(self.old_log_probs)):
            raise ValueError("old_log_probs must be finite")

    @property
    def batch_size(self) -> int:
        return len(self.states)

    @property
    def num_costs(self) -> int:
        return self.costs.shape[0]


@dataclass
class EstimatorConfig:
    gamma: float = 0.99
    gae_lambda_reward: float = 0.95
    gae_lambda_cost: float = 0.95
    value_fit_epochs: int = 80
    value_learning_rate: float = 0.05
    normalize_reward_advantages: bool = True

    def __post_init__(self):
        for lam in (self.gae_lambda_reward, self.gae_lambda_cost):
            if not 0.0 <= lam <= 1.0:
                raise ValueError("gae lambda must lie in [0, 1]")


@dataclass
class ValueTables:
    """Per-state value estimates for the reward and each cost signal."""

    reward: np.ndarray
    cost: np.ndarray  # shape (m, S)

    @classmethod
    def zeros(cls, num_states: int, num_costs: int) -> "ValueTables":
        return cls(reward=np.zeros(num_states), cost=np.zeros((num_costs, num_states)))


@dataclass
class EstimateSet:
    """Advantages, value targets and episode-return estimates for a batch.

    adv_reward is batch-normalized when the config asks for it; the raw
    (unnormalized) reward advantages are kept alongside because reward
    surrogates inside barrier arguments need absolute scale. Cost advantages
    are never normalized for the same reason.
    """

    adv_reward: np.ndarray
    adv_reward_raw: np.ndarray
    adv_cost: np.ndarray  # (m, B), raw
    value_targets_reward: np.ndarray
    value_targets_cost: np.ndarray  # (m, B)
    episode_reward_return: float
    episode_cost_returns: np.ndarray  # (m,)
    gamma: float
    num_complete_episodes: int


def collect(spec: CmdpSpec, params: PolicyParams, num_transitions: int, seed) -> TrajectoryBatch:
    """Sample `num_transitions` transitions, resetting episodes at the horizon.

    Deterministic given the seed (an int or numpy SeedSequence/Generator).
    Log-probabilities are recorded under the acting policy.
    """
    if num_transitions < 1:
        raise ValueError("num_transitions must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    probs = probs_table(params)
    logp = log_probs_table(params)
    action_cdf = np.cumsum(probs, axis=1)
    trans_cdf = np.cumsum(spec.transition, axis=2)
    init_cdf = np.cumsum(spec.initial_dist)

    states = np.empty(num_transitions, dtype=int)
    actions = np.empty(num_transitions, dtype=int)
    next_states = np.empty(num_transitions, dtype=int)
    rewards = np.empty(num_transitions)
    costs = np.empty((spec.num_costs, num_transitions))
    old_log_probs = np.empty(num_transitions)
    episode_ids = np.empty(num_transitions, dtype=int)
    step_indices = np.empty(num_transitions, dtype=int)
    dones = np.zeros(num_transitions, dtype=bool)

    u = rng.random(2 * num_transitions + num_transitions // spec.horizon + 2)
    ui = 0
    episode = -1
    t = spec.horizon  # force an initial reset
    s = 0
    for i in range(num_transitions):
        if t >= spec.horizon:
            s = int(np.searchsorted(init_cdf, u[ui], side="right"))
            ui += 1
            episode += 1
            t = 0
        a = int(np.searchsorted(action_cdf[s], u[ui], side="right"))
        ui += 1
        s2 = int(np.searchsorted(trans_cdf[s, a], u[ui], side="right"))
        ui += 1
        states[i] = s
        actions[i] = a
        next_states[i] = s2
        rewards[i] = spec.reward[s, a]
        for k in range(spec.num_costs):
            costs[k, i] = spec.costs[k][s, a]
        old_log_probs[i] = logp[s, a]
        episode_ids[i] = episode
        step_indices[i] = t
        t += 1
        dones[i] = t >= spec.horizon
        s = s2

    return TrajectoryBatch(
        states=states,
        actions=actions,
        next_states=next_states,
        rewards=rewards,
        costs=costs,
        old_log_probs=old_log_probs,
        episode_ids=episode_ids,
        step_indices=step_indices,
        dones=dones,
    )


def collect_chunked(
    spec: CmdpSpec,
    params: PolicyParams,
    num_transitions: int,
    seed_seq: np.random.SeedSequence,
    workers: int = 1,
) -> TrajectoryBatch:
    """Collect in `workers` independent chunks, merged by worker index.

    Each chunk runs its own episode stream from a spawned substream, so the
    merge is order-deterministic regardless of how chunks are scheduled.
    """
    if workers <= 1:
        return collect(spec, params, num_transitions, np.random.default_rng(seed_seq))
    children = seed_seq.spawn(workers)
    sizes = [num_transitions // workers] * workers
    for i in range(num_transitions % workers):
        sizes[i] += 1
    chunks = [collect(spec, params, size, np.random.default_rng(child)) for size, child in zip(sizes, children)]
    offset = 0
    episode_ids = []
    for chunk in chunks:
        episode_ids.append(chunk.episode_ids + offset)
        offset += chunk.episode_ids.max() + 1
    return TrajectoryBatch(
        states=np.concatenate([c.states for c in chunks]),
        actions=np.concatenate([c.actions for c in chunks]),
        next_states=np.concatenate([c.next_states for c in chunks]),
        rewards=np.concatenate([c.rewards for c in chunks]),
        costs=np.concatenate([c.costs for c in chunks], axis=1),
        old_log_probs=np.concatenate([c.old_log_probs for c in chunks]),
        episode_ids=np.concatenate(episode_ids),
        step_indices=np.concatenate([c.step_indices for c in chunks]),
        dones=np.concatenate([c.dones for c in chunks]),
    )


def gae(batch: TrajectoryBatch, values: np.ndarray, gamma: float, lam: float, signal: str | int = "reward") -> np.ndarray:
    """Generalized advantage estimates for the reward or one cost signal.

    Standard truncated exponentially-weighted sum of TD residuals: the
    accumulator resets across episode boundaries, horizon resets bootstrap
    with 0 and a mid-episode batch cutoff bootstraps with the value of the
    recorded next state.
    """
    x = batch.rewards if signal == "reward" else batch.costs[int(signal)]
    n = batch.batch_size
    adv = np.empty(n)
    values = np.asarray(values, dtype=float)
    not_done = 1.0 - batch.dones.astype(float)
    next_values = values[batch.next_states] * not_done
    deltas = x + gamma * next_values - values[batch.states]
    acc = 0.0
    last_episode = -1
    for i in range(n - 1, -1, -1):
        if batch.episode_ids[i] != last_episode:
            # entering a new (later-collected) episode from the right: the
            # cut episode at the batch end keeps its bootstrap via deltas
            acc = 0.0
            last_episode = batch.episode_ids[i]
        acc = deltas[i] + gamma * lam * not_done[i] * acc
        adv[i] = acc
    return adv


def fit_value_table(states: np.ndarray, targets: np.ndarray, previous: np.ndarray) -> np.ndarray:
    """Tabular least-squares fit: per-state mean of targets.

    States absent from the batch keep their previous value.
    """
    if not np.all(np.isfinite(targets)):
        raise ValueError("value targets must be finite")
    fitted = np.array(previous, dtype=float)
    sums = np.zeros_like(fitted)
    counts = np.zeros_like(fitted)
    np.add.at(sums, states, targets)
    np.add.at(counts, states, 1.0)
    visited = counts > 0
    fitted[visited] = sums[visited] / counts[visited]
    return fitted


def fit_values(batch: TrajectoryBatch, estimate: "EstimateSet", config: EstimatorConfig, tables: ValueTables) -> ValueTables:
    """Fit the reward and every cost value table to the batch's targets."""
    reward = fit_value_table(batch.states, estimate.value_targets_reward, tables.reward)
    cost = np.stack(
        [fit_value_table(batch.states, estimate.value_targets_cost[k], tables.cost[k]) for k in range(batch.num_costs)]
    )
    return ValueTables(reward=reward, cost=cost)


def fit_linear_values(
    features: np.ndarray,
    states: np.ndarray,
    targets: np.ndarray,
    epochs: int,
    learning_rate: float,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient descent on squared error for a linear value function.

    Returns the weight vector; full-batch steps with adaptive moments so a
    realizable target is driven to small residual within the epoch budget.
    """
    x = features[states]
    w = np.zeros(features.shape[1]) if weights is None else np.array(weights, dtype=float)
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    for step in range(1, epochs + 1):
        resid = x @ w - targets
        grad = 2.0 * (x.T @ resid) / len(targets)
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad * grad
        mhat = m / (1 - 0.9**step)
        vhat = v / (1 - 0.999**step)
        w -= learning_rate * mhat / (np.sqrt(vhat) + 1e-8)
    return w


def make_estimates(batch: TrajectoryBatch, tables: ValueTables, config: EstimatorConfig) -> EstimateSet:
    """GAE advantages, value targets and episode-return estimates for a batch."""
    adv_r = gae(batch, tables.reward, config.gamma, config.gae_lambda_reward, "reward")
    targets_r = adv_r + tables.reward[batch.states]
    m = batch.num_costs
    adv_c = np.empty((m, batch.batch_size))
    targets_c = np.empty((m, batch.batch_size))
    for k in range(m):
        adv_c[k] = gae(batch, tables.cost[k], config.gamma, config.gae_lambda_cost, k)
        targets_c[k] = adv_c[k] + tables.cost[k][batch.states]

    if config.normalize_reward_advantages and adv_r.std() > 1e-12:
        adv_r_norm = (adv_r - adv_r.mean()) / adv_r.std()
    else:
        adv_r_norm = adv_r - adv_r.mean() if config.normalize_reward_advantages else adv_r

    complete_ids = np.unique(batch.episode_ids[batch.dones]) if batch.dones.any() else np.array([], dtype=int)
    if len(complete_ids) > 0:
        mask = np.isin(batch.episode_ids, complete_ids)
        n_ep = len(complete_ids)
    else:
        # no complete episode in the batch: fall back to the partial one
        mask = np.ones(batch.batch_size, dtype=bool)
        n_ep = len(np.unique(batch.episode_ids))
    j_r = float(batch.rewards[mask].sum() / n_ep)
    j_c = batch.costs[:, mask].sum(axis=1) / n_ep

    return EstimateSet(
        adv_reward=adv_r_norm,
        adv_reward_raw=adv_r,
        adv_cost=adv_c,
        value_targets_reward=targets_r,
        value_targets_cost=targets_c,
        episode_reward_return=j_r,
        episode_cost_returns=j_c,
        gamma=config.gamma,
        num_complete_episodes=int(n_ep),
    )


def update_queues(queues: "BudgetState", estimate: EstimateSet) -> "BudgetState":
    """Push the batch's episode-return estimates into the bounded queues."""
    queues.queue_reward.append(estimate.episode_reward_return)
    for k, q in enumerate(queues.queue_cost):
        q.append(float(estimate.episode_cost_returns[k]))
    return queues


@dataclass
class ExactEval:
    """Closed-form evaluation of a policy on a finite CMDP (infinite horizon)."""

    v_reward: np.ndarray
    v_cost: np.ndarray  # (m, S)
    q_reward: np.ndarray
    q_cost: np.ndarray  # (m, S, A)
    adv_reward: np.ndarray
    adv_cost: np.ndarray  # (m, S, A)
    visitation: np.ndarray
    j_reward: float
    j_cost: np.ndarray  # (m,)


def exact_eval(spec: CmdpSpec, params: PolicyParams | np.ndarray) -> ExactEval:
    """Solve values, state visitation and returns exactly via linear systems.

    V solves (I - gamma P_pi) V = r_pi; the discounted visitation solves
    d = (1 - gamma) rho0 + gamma P_pi^T d; J = rho0 . V. Ignores the
    sampling horizon. `params` may be policy parameters or a dense (S, A)
    action-probability table.
    """
    pi = params if isinstance(params, np.ndarray) else probs_table(params)
    gamma = spec.discount
    s = spec.num_states
    p_pi = np.einsum("sap,sa->sp", spec.transition, pi)
    eye = np.eye(s)

    def solve_values(table: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        r_pi = (pi * table).sum(axis=1)
        v = np.linalg.solve(eye - gamma * p_pi, r_pi)
        q = table + gamma * np.einsum("sap,p->sa", spec.transition, v)
        return v, q

    v_r, q_r = solve_values(spec.reward)
    m = spec.num_costs
    v_c = np.empty((m, s))
    q_c = np.empty((m, s, spec.num_actions))
    for k in range(m):
        v_c[k], q_c[k] = solve_values(spec.costs[k])

    d = np.linalg.solve(eye - gamma * p_pi.T, (1 - gamma) * spec.initial_dist)
    j_r = float(spec.initial_dist @ v_r)
    j_c = v_c @ spec.initial_dist
    return ExactEval(
        v_reward=v_r,
        v_cost=v_c,
        q_reward=q_r,
        q_cost=q_c,
        adv_reward=q_r - v_r[:, None],
        adv_cost=q_c - v_c[:, :, None],
        visitation=d,
        j_reward=j_r,
        j_cost=j_c,
    )
