"""Ground truth and bound verification for finite CMDPs.

`lp_solve` computes the exact constrained optimum through the occupancy-
measure linear program: variables mu(s, a) >= 0 with flow conservation
rows sum_a mu(s, a) = (1 - gamma) rho0(s) + gamma sum_{s', a'} P(s', a', s)
mu(s', a'), cost rows mu . c_i <= (1 - gamma) d_i and objective mu . r.
The remaining operations check, numerically and with exact quantities, the
inequalities the training loop is supposed to respect: the two-sided policy
performance difference bound, the worst-case budget/return movement across
alternating stages, and the 1/t optimality gap of the log-barrier
relaxation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .cmdp import CmdpSpec
from .estimation import ExactEval, exact_eval
from .policy import PolicyParams, probs_table
from .simplex import LpResult, linprog_dense

if TYPE_CHECKING:
    from .scheduler import RunResult, StageConfig

PASS_TOL = 1e-8


@dataclass
class BoundReport:
    """One checked inequality: lhs <= rhs up to relative slack tolerance."""

    name: str
    lhs: float
    rhs: float
    eps_r: float = 0.0
    eps_c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    context: dict = field(default_factory=dict)
    skipped: bool = False
    reason: str = ""

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        if self.skipped:
            return True
        return self.slack >= -PASS_TOL * (1.0 + abs(self.rhs))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "eps_r": self.eps_r,
            "eps_c": np.asarray(self.eps_c).tolist(),
            "passed": self.passed,
            "skipped": self.skipped,
            "reason": self.reason,
            "context": {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.context.items()},
        }


@dataclass
class LpSolution:
    feasible: bool
    j_reward: float | None = None
    policy: np.ndarray | None = None  # dense (S, A) action probabilities
    j_cost: np.ndarray | None = None
    occupancy: np.ndarray | None = None


def occupancy_constraints(spec: CmdpSpec) -> tuple[np.ndarray, np.ndarray]:
    """Flow-conservation rows over flattened mu(s, a) variables."""
    s, a = spec.num_states, spec.num_actions
    n = s * a
    a_eq = np.zeros((s, n))
    for state in range(s):
        a_eq[state, state * a : (state + 1) * a] += 1.0
    # inflow: gamma * P(s', a', s) on column (s', a')
    inflow = spec.discount * spec.transition.transpose(2, 0, 1).reshape(s, n)
    a_eq -= inflow
    b_eq = (1.0 - spec.discount) * spec.initial_dist
    return a_eq, b_eq


def lp_solve(spec: CmdpSpec, d: np.ndarray) -> LpSolution:
    """Exact constrained optimum: max J_R subject to J_C_i <= d_i.

    Returns an explicit infeasibility result when the budgets cut off the
    whole occupancy polytope. The recovered stationary policy reproduces
    (j_reward, j_cost) under exact evaluation.
    """
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if len(d) != spec.num_costs:
        raise ValueError("one budget per cost signal required")
    s, a = spec.num_states, spec.num_actions
    a_eq, b_eq = occupancy_constraints(spec)
    a_ub = np.stack([c.ravel() for c in spec.costs])
    b_ub = (1.0 - spec.discount) * d
    res: LpResult = linprog_dense(spec.reward.ravel(), a_eq, b_eq, a_ub, b_ub)
    if res.status == "infeasible":
        return LpSolution(feasible=False)
    if res.status != "optimal":  # pragma: no cover - bounded by mu sum = 1
        raise RuntimeError(f"occupancy program ended {res.status}")
    mu = res.x.reshape(s, a)
    mu = np.maximum(mu, 0.0)
    scale = 1.0 / (1.0 - spec.discount)
    marginals = mu.sum(axis=1)
    policy = np.full((s, a), 1.0 / a)
    visited = marginals > 1e-12
    policy[visited] = mu[visited] / marginals[visited, None]
    policy /= policy.sum(axis=1, keepdims=True)
    j_cost = np.array([float((c.ravel() @ mu.ravel()) * scale) for c in spec.costs])
    return LpSolution(
        feasible=True,
        j_reward=float(res.objective * scale),
        policy=policy,
        j_cost=j_cost,
        occupancy=mu,
    )


def pareto_front(spec: CmdpSpec, d_grid: list) -> list[tuple[np.ndarray, float | None]]:
    """Per-budget constrained optima; None marks infeasible budgets.

    `d_grid` must be sorted ascending (componentwise for vector budgets) so
    the returned optimal values are non-decreasing.
    """
    front = []
    previous = None
    for d in d_grid:
        d = np.atleast_1d(np.asarray(d, dtype=float))
        if previous is not None and np.any(d < previous):
            raise ValueError("d_grid must be sorted ascending")
        previous = d
        sol = lp_solve(spec, d)
        front.append((d, sol.j_reward if sol.feasible else None))
    return front


def epsilons(spec: CmdpSpec, pi_prev: PolicyParams | np.ndarray, pi_next: PolicyParams | np.ndarray) -> tuple[float, np.ndarray]:
    """Worst-state expected advantage of the next policy under the previous one.

    eps_R = max_s |sum_a pi_next(a|s) A_R^{prev}(s, a)|, and likewise per
    cost signal. Zero when the two policies coincide.
    """
    ev = exact_eval(spec, pi_prev)
    nxt = pi_next if isinstance(pi_next, np.ndarray) else probs_table(pi_next)
    eps_r = float(np.max(np.abs((nxt * ev.adv_reward).sum(axis=1))))
    eps_c = np.array([float(np.max(np.abs((nxt * ev.adv_cost[k]).sum(axis=1)))) for k in range(spec.num_costs)])
    return eps_r, eps_c


def _per_state_kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) - np.log(q)), 0.0)
    return terms.sum(axis=1)


def check_performance_bound(spec: CmdpSpec, pi_old: PolicyParams | np.ndarray, pi_new: PolicyParams | np.ndarray) -> list[BoundReport]:
    """Two-sided surrogate bounds on the exact return difference.

    For each signal, J(new) - J(old) must lie within
    surrogate +- sqrt(2) gamma eps / (1-gamma)^2 * sqrt(mean KL), where the
    surrogate is the visitation-weighted expected advantage over (1-gamma),
    eps the worst-state expected advantage, and the KL is averaged under
    the old policy's visitation.
    """
    ev_old = exact_eval(spec, pi_old)
    ev_new = exact_eval(spec, pi_new)
    p_new = pi_new if isinstance(pi_new, np.ndarray) else probs_table(pi_new)
    p_old = pi_old if isinstance(pi_old, np.ndarray) else probs_table(pi_old)
    gamma = spec.discount
    klbar = float(ev_old.visitation @ _per_state_kl(p_new, p_old))
    penalty_scale = math.sqrt(2.0) * gamma / (1.0 - gamma) ** 2 * math.sqrt(max(klbar, 0.0))

    reports = []
    signals = [("reward", ev_old.adv_reward, ev_old.j_reward, ev_new.j_reward)]
    for k in range(spec.num_costs):
        signals.append((f"cost_{k}", ev_old.adv_cost[k], float(ev_old.j_cost[k]), float(ev_new.j_cost[k])))
    for name, adv, j_old, j_new in signals:
        expected_adv = (p_new * adv).sum(axis=1)
        surrogate = float(ev_old.visitation @ expected_adv) / (1.0 - gamma)
        eps = float(np.max(np.abs(expected_adv)))
        gap = j_new - j_old
        penalty = penalty_scale * eps
        context = {"signal": name, "kl_bar": klbar, "surrogate": surrogate, "eps": eps}
        reports.append(BoundReport(name=f"performance-lower-{name}", lhs=surrogate - penalty, rhs=gap, eps_r=eps, context=context))
        reports.append(BoundReport(name=f"performance-upper-{name}", lhs=gap, rhs=surrogate + penalty, eps_r=eps, context=context))
    return reports


def _stage_completions(budget_history: list[dict]) -> dict[str, list[int]]:
    """Iterations at which a stage finished, keyed by the stage's flag value."""
    out = {"max": [], "min": [], "proj": []}
    flags = [row["flag"] for row in budget_history]
    for i in range(len(flags) - 1):
        if flags[i] == 0 and flags[i + 1] == 1:
            out["max"].append(i)
        elif flags[i] == 1 and flags[i + 1] != 1:
            out["min"].append(i)
        elif flags[i] == 2 and flags[i + 1] != 2:
            out["proj"].append(i)
    return out


def check_theorem_budget_bounds(result: "RunResult", spec: CmdpSpec, cfg: "StageConfig") -> list[BoundReport]:
    """Worst-case movement bounds for the alternating-stage budget sequences.

    Between consecutive max-reward completions the exact reward budget may
    fall by at most n1/((1-gamma) t) + sqrt(2 delta) gamma (n1+n2) eps_R
    / (1-gamma)^2, with delta the largest measured per-update KL in the
    window and eps_R the window's worst per-update expected advantage; the
    cost analogue bounds the rise between min-cost completions. Windows
    interrupted by a projection stage are not stage pairs and are skipped.
    """
    if not result.checkpoints:
        return [BoundReport(name="budget-bounds", lhs=0.0, rhs=0.0, skipped=True, reason="no checkpoints recorded")]
    gamma = spec.discount
    flags = [row["flag"] for row in result.budget_history]
    completions = _stage_completions(result.budget_history)
    reports: list[BoundReport] = []

    def window_stats(lo: int, hi: int) -> tuple[float, float, np.ndarray] | None:
        """(delta, eps_r, eps_c) over updates in iterations (lo, hi]."""
        if any(flags[i] == 2 for i in range(lo, hi + 1)):
            return None
        delta = 0.0
        eps_r = 0.0
        eps_c = np.zeros(spec.num_costs)
        for i in range(lo + 1, hi + 1):
            prev = result.checkpoints.get(i - 1)
            cur = result.checkpoints.get(i)
            if prev is None or cur is None:
                return None
            er, ec = epsilons(spec, prev, cur)
            eps_r = max(eps_r, er)
            eps_c = np.maximum(eps_c, ec)
            delta = max(delta, result.kl_history[i])
        return delta, eps_r, eps_c

    for kind, attr, sign in (("max", "j_reward", -1.0), ("min", "j_cost", 1.0)):
        points = completions[kind]
        for prev_i, cur_i in zip(points, points[1:]):
            stats = window_stats(prev_i, cur_i)
            if stats is None:
                reports.append(
                    BoundReport(
                        name=f"budget-bound-{kind}-{prev_i}-{cur_i}",
                        lhs=0.0,
                        rhs=0.0,
                        skipped=True,
                        reason="window crosses a projection stage or lacks checkpoints",
                    )
                )
                continue
            delta, eps_r, eps_c = stats
            ev_prev = exact_eval(spec, result.checkpoints[prev_i])
            ev_cur = exact_eval(spec, result.checkpoints[cur_i])
            kl_term = math.sqrt(2.0 * delta) * gamma / (1.0 - gamma) ** 2 * (cfg.n1 + cfg.n2)
            if kind == "max":
                change = ev_cur.j_reward - ev_prev.j_reward
                bound = -cfg.n1 / ((1.0 - gamma) * cfg.barrier_t) - kl_term * eps_r
                reports.append(
                    BoundReport(
                        name=f"budget-bound-max-{prev_i}-{cur_i}",
                        lhs=bound,
                        rhs=change,
                        eps_r=eps_r,
                        eps_c=eps_c,
                        context={"delta": delta, "window": [prev_i, cur_i], "change": change},
                    )
                )
            else:
                for k in range(spec.num_costs):
                    change = float(ev_cur.j_cost[k] - ev_prev.j_cost[k])
                    bound = cfg.n2 / ((1.0 - gamma) * cfg.barrier_t) + kl_term * float(eps_c[k])
                    reports.append(
                        BoundReport(
                            name=f"budget-bound-min-{k}-{prev_i}-{cur_i}",
                            lhs=change,
                            rhs=bound,
                            eps_r=eps_r,
                            eps_c=eps_c,
                            context={"delta": delta, "window": [prev_i, cur_i], "change": change, "cost": k},
                        )
                    )
    return reports


def _simplex_grid(num_actions: int, resolution: int) -> np.ndarray:
    """All probability vectors on the (num_actions-1)-simplex with the given
    per-axis resolution."""
    ticks = resolution
    combos = []
    for parts in itertools.combinations_with_replacement(range(ticks + 1), num_actions - 1):
        weights = np.diff([0, *parts, ticks])
        combos.append(weights / ticks)
    return np.array(combos)


def check_ipo_gap(
    spec: CmdpSpec,
    pi_k: PolicyParams,
    d: float,
    t: float,
    grid_resolution: int = 200,
    cost_index: int = 0,
) -> BoundReport:
    """Optimality gap of the log-barrier relaxation on an enumerable instance.

    Exact expectations under the reference policy's visitation; the
    constrained surrogate optimum and the barrier optimum are found by
    dense grid search over the per-state action simplices. The gap must lie
    in [-tau, 1/t + tau] where tau is the grid-induced tolerance; the check
    is skipped when the barrier argmax violates the constraint (the bound's
    feasibility hypothesis fails) or no grid point is feasible.
    """
    s, a = spec.num_states, spec.num_actions
    if s > 2 or a > 3:
        raise ValueError("instance too large for dense simplex grid search")
    ev = exact_eval(spec, pi_k)
    gamma = spec.discount
    w_r = ev.visitation[:, None] * ev.adv_reward  # surrogate coefficients
    w_c = ev.visitation[:, None] * ev.adv_cost[cost_index]
    const_c = float(ev.j_cost[cost_index]) - d

    grid = _simplex_grid(a, grid_resolution)  # (G, a) per state
    # per-state contributions for every grid point
    contrib_r = [grid @ w_r[state] for state in range(s)]
    contrib_c = [grid @ w_c[state] for state in range(s)]
    # outer sum over states (s <= 2)
    if s == 1:
        surr_r = contrib_r[0]
        surr_c = contrib_c[0]
    else:
        surr_r = contrib_r[0][:, None] + contrib_r[1][None, :]
        surr_c = contrib_c[0][:, None] + contrib_c[1][None, :]
    constraint = const_c + surr_c / (1.0 - gamma)

    feasible = constraint <= 0.0
    if not feasible.any():
        return BoundReport(
            name="barrier-gap",
            lhs=0.0,
            rhs=0.0,
            skipped=True,
            reason="no feasible grid point under the budget",
            context={"d": d, "t": t},
        )
    constrained_best = float(surr_r[feasible].max())

    with np.errstate(divide="ignore", invalid="ignore"):
        log_term = np.where(constraint < 0, np.log(np.where(constraint < 0, -constraint, 1.0)) / t, -np.inf)
    barrier_objective = np.where(constraint < 0, surr_r + log_term, -np.inf)
    flat_idx = int(np.argmax(barrier_objective))
    ipo_value = float(surr_r.ravel()[flat_idx])
    ipo_constraint = float(constraint.ravel()[flat_idx])

    spread = (ev.adv_reward.max(axis=1) - ev.adv_reward.min(axis=1)) * ev.visitation
    tau = float(spread.sum()) / grid_resolution

    if ipo_constraint > 0:
        return BoundReport(
            name="barrier-gap",
            lhs=0.0,
            rhs=0.0,
            skipped=True,
            reason="barrier optimum violates the surrogate constraint",
            context={"d": d, "t": t},
        )
    gap = constrained_best - ipo_value
    # one report carrying both sides: -tau <= gap <= 1/t + tau
    report = BoundReport(
        name="barrier-gap",
        lhs=gap,
        rhs=1.0 / t + tau,
        context={"d": d, "t": t, "tau": tau, "gap": gap, "lower_ok": bool(gap >= -tau)},
    )
    return report
