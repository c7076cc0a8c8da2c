"""Verification suites: batch runs of the oracle bound checks.

Each suite returns a list of BoundReports; a run passes when every report
passes. These back the `verify` CLI subcommand and the acceptance tests.
"""

from __future__ import annotations

import numpy as np

from .cmdp import CmdpSpec, build_gridworld
from .estimation import EstimatorConfig, exact_eval
from .oracle import BoundReport, check_ipo_gap, check_performance_bound, check_theorem_budget_bounds
from .policy import tabular_policy
from .scheduler import OptimizerConfig, StageConfig, run_acpo


def _random_spec(rng: np.random.Generator, max_states=8, max_actions=4) -> CmdpSpec:
    s = int(rng.integers(2, max_states + 1))
    a = int(rng.integers(2, max_actions + 1))
    return CmdpSpec(
        num_states=s,
        num_actions=a,
        transition=rng.dirichlet(np.ones(s), size=(s, a)),
        reward=rng.uniform(-1, 1, size=(s, a)),
        costs=(rng.uniform(0, 1, size=(s, a)),),
        initial_dist=rng.dirichlet(np.ones(s)),
        discount=float(rng.uniform(0.7, 0.95)),
        horizon=50,
    )


def bounds_suite(num_specs: int = 20, pairs_per_spec: int = 25, seed: int = 0) -> list[BoundReport]:
    """Performance-difference bounds on random policy pairs across random specs."""
    rng = np.random.default_rng(seed)
    reports: list[BoundReport] = []
    for _ in range(num_specs):
        spec = _random_spec(rng)
        for _ in range(pairs_per_spec):
            a = tabular_policy(spec.num_states, spec.num_actions, rng.normal(scale=1.5, size=(spec.num_states, spec.num_actions)))
            b = tabular_policy(spec.num_states, spec.num_actions, rng.normal(scale=1.5, size=(spec.num_states, spec.num_actions)))
            reports.extend(check_performance_bound(spec, a, b))
    return reports


def stage_bounds_suite(seed: int = 0, num_iterations: int = 120, batch_size: int = 1536) -> list[BoundReport]:
    """Budget-movement bounds checked against a checkpointed training run."""
    spec = build_gridworld("trap", 7)
    cfg = StageConfig(
        d0=np.array([4.0]),
        d_des=np.array([0.5]),
        n1=10,
        n2=5,
        n_e=10,
        k_p=0.5,
        finish_tol=0.06,
        converge_window=10,
        converge_rel_tol=0.06,
        barrier_t=5.0,
    )
    est = EstimatorConfig(gamma=spec.discount)
    opt = OptimizerConfig()
    result = run_acpo(spec, cfg, est, opt, seed=seed, num_iterations=num_iterations, batch_size=batch_size)
    reports = check_theorem_budget_bounds(result, spec, cfg)
    checked = [r for r in reports if not r.skipped]
    if not checked:
        reports.append(
            BoundReport(
                name="stage-bounds-coverage",
                lhs=1.0,
                rhs=0.0,
                reason="run produced no completed stage pair to check",
            )
        )
    return reports


def _binding_instance(rng: np.random.Generator):
    """A 2-state/2-action instance whose surrogate constraint binds."""
    spec = CmdpSpec(
        num_states=2,
        num_actions=2,
        transition=rng.dirichlet(np.ones(2), size=(2, 2)),
        reward=rng.uniform(0, 1, size=(2, 2)),
        costs=(rng.uniform(0, 1, size=(2, 2)),),
        initial_dist=rng.dirichlet(np.ones(2)),
        discount=float(rng.uniform(0.8, 0.95)),
        horizon=50,
    )
    pi_k = tabular_policy(2, 2, rng.normal(scale=0.3, size=(2, 2)))
    ev = exact_eval(spec, pi_k)
    # unconstrained surrogate argmax: best action per state under visitation weight
    w_r = ev.visitation[:, None] * ev.adv_reward
    greedy = np.zeros((2, 2))
    greedy[np.arange(2), w_r.argmax(axis=1)] = 1.0
    greedy_cost_corr = float((ev.visitation[:, None] * ev.adv_cost[0] * greedy).sum()) / (1 - spec.discount)
    margin = float(rng.uniform(0.2, 0.7)) * max(greedy_cost_corr, 0.0)
    d = float(ev.j_cost[0]) + margin
    binding = greedy_cost_corr > margin + 1e-6
    return spec, pi_k, d, binding


def barrier_gap_suite(
    num_instances: int = 20,
    ts: tuple[float, ...] = (10.0, 25.0, 50.0),
    resolution: int = 1500,
    seed: int = 0,
) -> tuple[list[BoundReport], dict]:
    """Barrier-relaxation gap checks plus the inverse-t envelope summary.

    Returns (reports, info) where info holds the per-t upper envelope of
    measured gaps and the halving check between t and 2t whenever both are
    in `ts`.
    """
    rng = np.random.default_rng(seed)
    instances = []
    while len(instances) < num_instances:
        spec, pi_k, d, binding = _binding_instance(rng)
        if binding:
            instances.append((spec, pi_k, d))
    reports: list[BoundReport] = []
    envelope: dict[float, float] = {}
    taus: dict[float, float] = {}
    for t in ts:
        gaps = []
        for spec, pi_k, d in instances:
            report = check_ipo_gap(spec, pi_k, d, t, grid_resolution=resolution)
            report.context["t"] = t
            reports.append(report)
            if not report.skipped:
                gaps.append(report.context["gap"])
                taus[t] = max(taus.get(t, 0.0), report.context["tau"])
        envelope[t] = max(gaps) if gaps else float("nan")
    info = {"envelope": envelope, "tau": taus, "halving": {}}
    for t in ts:
        if 2 * t in envelope and np.isfinite(envelope[t]) and np.isfinite(envelope[2 * t]):
            ok = envelope[2 * t] <= 0.5 * envelope[t] + taus.get(2 * t, 0.0)
            info["halving"][f"{t}->{2 * t}"] = {"ok": bool(ok), "from": envelope[t], "to": envelope[2 * t]}
            reports.append(
                BoundReport(
                    name=f"gap-envelope-halving-{t:g}-to-{2 * t:g}",
                    lhs=envelope[2 * t],
                    rhs=0.5 * envelope[t] + taus.get(2 * t, 0.0),
                    context=info["halving"][f"{t}->{2 * t}"],
                )
            )
    return reports, info


SUITES = ("bounds", "stage-bounds", "barrier-gap")


def run_suite(name: str, seed: int = 0) -> tuple[list[BoundReport], dict]:
    if name == "bounds":
        return bounds_suite(seed=seed), {}
    if name == "stage-bounds":
        return stage_bounds_suite(seed=seed), {}
    if name == "barrier-gap":
        return barrier_gap_suite(seed=seed)
    raise ValueError(f"unknown suite {name!r}; expected one of {SUITES} or 'all'")
