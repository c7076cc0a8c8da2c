"""Stage objectives: clipped importance-weighted surrogates plus log barriers.

Three stage kinds share one evaluation/gradient engine:

  max-reward:  maximize the clipped reward surrogate subject to every cost
               constraint, each folded in as a log-barrier term.
  min-cost:    minimize the violating cost surrogates while a barrier keeps
               the reward surrogate above the reward budget.
  projection:  minimize the batch KL to a frozen policy while barriers hold
               the cost surrogates under a tightened budget.

Barrier terms use phi(x) = log(-x) / t for feasible arguments (x < 0) and
saturate at -cap once the argument reaches the domain edge, which keeps the
objective total and its gradient bounded; a saturated term contributes no
gradient. Surrogate constraint arguments are built from the sampling
policy's episode-return estimate plus the importance-weighted advantage
correction, so only the ratio term carries gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .estimation import EstimateSet, TrajectoryBatch
from .policy import (
    PolicyParams,
    accumulate_logit_grad,
    chain_to_params,
    kl_table,
    log_probs_table,
    logp_grad_coeffs,
    probs_table,
)

MAX_REWARD = "max-reward"
MIN_COST = "min-cost"
PROJECTION = "projection"

# Arguments this close to (or past) zero count as domain breaches and take
# the saturated penalty; log(-x) is still finite there but no longer a
# meaningful constraint signal.
DOMAIN_GUARD = 1e-8


@dataclass(frozen=True)
class StageObjective:
    """Configuration of one stage's surrogate objective."""

    kind: str
    cost_budget: np.ndarray
    reward_budget: float = 0.0
    barrier_t: float = 25.0
    barrier_cap: float = 25.0
    clip_ratio: float = 0.2
    active_costs: tuple[int, ...] = ()
    frozen: PolicyParams | None = None
    barrier_enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "cost_budget", np.atleast_1d(np.asarray(self.cost_budget, dtype=float)))
        if self.kind not in (MAX_REWARD, MIN_COST, PROJECTION):
            raise ValueError(f"unknown stage kind {self.kind!r}")
        if self.barrier_t <= 0:
            raise ValueError("barrier_t must be positive")
        if not 0 < self.clip_ratio:
            raise ValueError("clip_ratio must be positive")


@dataclass
class SurrogateValue:
    """A stage objective evaluated at one parameter point."""

    objective: float
    barrier_argument: float  # the worst (largest) barrier argument
    domain_ok: bool
    barrier_arguments: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        assert self.domain_ok == (self.barrier_argument < 0), "domain_ok must mirror the argument sign"


def barrier_phi(x: float, t: float, cap: float) -> float:
    """log(-x)/t for feasible x, saturating to -cap at and past the domain edge."""
    if t <= 0:
        raise ValueError("t must be positive")
    if x >= -DOMAIN_GUARD:
        return -cap
    return min(math.log(-x) / t, cap)


def barrier_phi_grad(x: float, t: float, cap: float) -> float:
    """Derivative of barrier_phi where it is differentiable, 0 on saturated branches."""
    if x >= -DOMAIN_GUARD:
        return 0.0
    if math.log(-x) / t >= cap:
        return 0.0
    return 1.0 / (t * x)


def importance_ratios(params: PolicyParams, batch: TrajectoryBatch) -> np.ndarray:
    lp = log_probs_table(params)[batch.states, batch.actions]
    return np.exp(lp - batch.old_log_probs)


def surrogate_cost_constraint(
    batch: TrajectoryBatch,
    estimate: EstimateSet,
    params: PolicyParams,
    budget: float,
    index: int,
    ratios: np.ndarray | None = None,
    idx: np.ndarray | None = None,
) -> float:
    """Estimated constraint slack: J_C + (1/(1-gamma)) E[ratio * A_C] - budget.

    Negative values mean the constraint is estimated satisfied at the
    evaluated policy.
    """
    r = importance_ratios(params, batch) if ratios is None else ratios
    adv = estimate.adv_cost[index]
    if idx is not None:
        r, adv = r[idx], adv[idx]
    correction = float(np.mean(r * adv)) / (1.0 - estimate.gamma)
    return float(estimate.episode_cost_returns[index]) + correction - float(budget)


def _clipped_term(ratios: np.ndarray, adv: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    """Pessimistically clipped surrogate mean and per-transition gradient coeffs.

    Returns (mean_i min(r_i a_i, clip(r_i) a_i), coeffs) where coeffs[i] is
    d(term)/d(log pi_i); the gradient flows only where the min selects the
    unclipped branch.
    """
    unclipped = ratios * adv
    clipped = np.clip(ratios, 1.0 - eps, 1.0 + eps) * adv
    vals = np.minimum(unclipped, clipped)
    active = unclipped <= clipped
    coeffs = np.where(active, unclipped, 0.0) / len(adv)
    return float(vals.mean()), coeffs


def _subset(arr: np.ndarray, idx: np.ndarray | None) -> np.ndarray:
    return arr if idx is None else arr[idx]


def objective_value_and_grad(
    params: PolicyParams,
    batch: TrajectoryBatch,
    estimate: EstimateSet,
    obj: StageObjective,
    idx: np.ndarray | None = None,
) -> tuple[SurrogateValue, np.ndarray, dict]:
    """Evaluate a stage objective and its exact gradient on (a subset of) a batch.

    Returns (value, gradient shaped like params.weights, info). Episode-return
    estimates inside barrier arguments are batch constants; gradient flows
    through the importance ratios (and the KL term for projection stages).
    """
    states = _subset(batch.states, idx)
    actions = _subset(batch.actions, idx)
    old_lp = _subset(batch.old_log_probs, idx)
    full_probs = probs_table(params)
    full_logp = log_probs_table(params)
    probs_b = full_probs[states]
    lp_b = full_logp[states, actions]
    ratios = np.exp(lp_b - old_lp)
    glog = logp_grad_coeffs(probs_b, actions)  # (B, A)
    n = len(states)
    coeffs = np.zeros(n)
    grad_extra = None
    one_minus_gamma = 1.0 - estimate.gamma
    barrier_args = []

    if obj.kind == MAX_REWARD:
        total, coeffs_clip = _clipped_term(ratios, _subset(estimate.adv_reward, idx), obj.clip_ratio)
        coeffs = coeffs + coeffs_clip
        if obj.barrier_enabled:
            for i in range(batch.num_costs):
                adv_c = _subset(estimate.adv_cost[i], idx)
                x = float(estimate.episode_cost_returns[i]) + float(np.mean(ratios * adv_c)) / one_minus_gamma - float(obj.cost_budget[i])
                barrier_args.append(x)
                total += barrier_phi(x, obj.barrier_t, obj.barrier_cap)
                dphi = barrier_phi_grad(x, obj.barrier_t, obj.barrier_cap)
                if dphi != 0.0:
                    coeffs = coeffs + dphi * (ratios * adv_c) / (n * one_minus_gamma)

    elif obj.kind == MIN_COST:
        if not obj.active_costs:
            raise ValueError("min-cost stage requires a non-empty active constraint set")
        total = 0.0
        for i in obj.active_costs:
            term, coeffs_clip = _clipped_term(ratios, -_subset(estimate.adv_cost[i], idx), obj.clip_ratio)
            total += term
            coeffs = coeffs + coeffs_clip
        if obj.barrier_enabled:
            adv_r = _subset(estimate.adv_reward_raw, idx)
            x = -float(estimate.episode_reward_return) - float(np.mean(ratios * adv_r)) / one_minus_gamma + float(obj.reward_budget)
            barrier_args.append(x)
            total += barrier_phi(x, obj.barrier_t, obj.barrier_cap)
            dphi = barrier_phi_grad(x, obj.barrier_t, obj.barrier_cap)
            if dphi != 0.0:
                coeffs = coeffs - dphi * (ratios * adv_r) / (n * one_minus_gamma)

    elif obj.kind == PROJECTION:
        if obj.frozen is None:
            raise ValueError("projection stage requires a frozen reference policy")
        frozen_logp = log_probs_table(obj.frozen)
        per_state_kl = kl_table(full_probs, full_logp, frozen_logp)
        total = -float(per_state_kl[states].mean())
        # d/dz_b KL(p||q) at state s: p_b ((log p_b - log q_b) - KL_s)
        diff = full_logp[states] - frozen_logp[states]
        kl_rows = probs_b * (diff - per_state_kl[states][:, None])
        grad_extra = -kl_rows / n
        if obj.barrier_enabled:
            for i in range(batch.num_costs):
                adv_c = _subset(estimate.adv_cost[i], idx)
                x = float(estimate.episode_cost_returns[i]) + float(np.mean(ratios * adv_c)) / one_minus_gamma - float(obj.cost_budget[i])
                barrier_args.append(x)
                total += barrier_phi(x, obj.barrier_t, obj.barrier_cap)
                dphi = barrier_phi_grad(x, obj.barrier_t, obj.barrier_cap)
                if dphi != 0.0:
                    coeffs = coeffs + dphi * (ratios * adv_c) / (n * one_minus_gamma)
    else:  # pragma: no cover - guarded by StageObjective
        raise ValueError(obj.kind)

    rows = coeffs[:, None] * glog
    if grad_extra is not None:
        rows = rows + grad_extra
    grad_z = accumulate_logit_grad(params.num_states, params.num_actions, states, rows)
    grad = chain_to_params(params, grad_z)

    worst = max(barrier_args) if barrier_args else -1.0
    value = SurrogateValue(
        objective=float(total),
        barrier_argument=float(worst),
        domain_ok=bool(worst < 0),
        barrier_arguments=np.asarray(barrier_args),
    )
    info = {"mean_ratio": float(ratios.mean())}
    return value, grad, info


def _evaluate(params, batch, estimate, obj) -> SurrogateValue:
    value, _, _ = objective_value_and_grad(params, batch, estimate, obj)
    return value


def max_reward_objective(batch: TrajectoryBatch, estimate: EstimateSet, params: PolicyParams, obj: StageObjective) -> SurrogateValue:
    """Clipped reward surrogate plus one barrier term per cost constraint."""
    if obj.kind != MAX_REWARD:
        raise ValueError("objective kind must be max-reward")
    return _evaluate(params, batch, estimate, obj)


def min_cost_objective(batch: TrajectoryBatch, estimate: EstimateSet, params: PolicyParams, obj: StageObjective) -> SurrogateValue:
    """Negated clipped cost surrogates (violating constraints only) plus the
    reward-floor barrier."""
    if obj.kind != MIN_COST:
        raise ValueError("objective kind must be min-cost")
    return _evaluate(params, batch, estimate, obj)


def projection_objective(batch: TrajectoryBatch, params: PolicyParams, frozen: PolicyParams, obj: StageObjective, estimate: EstimateSet) -> SurrogateValue:
    """Negated batch KL to the frozen policy plus cost barriers at the
    projected budget."""
    if obj.kind != PROJECTION:
        raise ValueError("objective kind must be projection")
    if obj.frozen is None:
        obj = replace(obj, frozen=frozen)
    return _evaluate(params, batch, estimate, obj)
