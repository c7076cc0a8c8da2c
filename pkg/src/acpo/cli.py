"""Command-line interface.

Subcommands:
  run       train one algorithm per a JSON config; writes a run directory
  evaluate  exact vs sampled returns for a saved policy checkpoint
  verify    oracle bound suites; writes verdicts.json, exit 0 iff all pass
  front     constrained-optimum sweep over a budget grid
  compare   summary table across finished run directories
  plot      SVG charts of return/budget traces for a run directory

Logging level comes from ACPO_LOG_LEVEL (error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import runio
from .baselines import CurriculumSchedule, LagrangeState, run_baseline
from .cmdp import CmdpSpec
from .config import ConfigError, RunConfig, canonical_json, config_to_dict, load_config
from .estimation import collect, exact_eval
from .oracle import lp_solve, pareto_front
from .policy import from_json as policy_from_json
from .scheduler import RunResult, run_acpo
from .verify import SUITES, run_suite

logger = logging.getLogger("acpo")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    level = os.environ.get("ACPO_LOG_LEVEL", "warn").lower()
    if level not in LOG_LEVELS:
        print(f"warning: unknown ACPO_LOG_LEVEL {level!r}, using 'warn'", file=sys.stderr)
        level = "warn"
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")


def _execute(cfg: RunConfig, spec: CmdpSpec, seed: int, workers: int) -> RunResult:
    if cfg.algorithm == "acpo":
        return run_acpo(
            spec,
            cfg.stage,
            cfg.estimator,
            cfg.optimizer,
            seed=seed,
            num_iterations=cfg.num_iterations,
            batch_size=cfg.batch_size,
            reset_policy_on_projection=cfg.reset_policy_on_projection,
            workers=workers,
        )
    curriculum = None
    if cfg.algorithm == "ipo-c":
        decay = cfg.baseline.curriculum_decay_iters or max(1, cfg.num_iterations // 2)
        curriculum = CurriculumSchedule(
            d_init=cfg.stage.d0, d_final=cfg.stage.d_des, decay_iters=decay, shape=cfg.baseline.curriculum_shape
        )
    lagrange = LagrangeState.fresh(
        spec.num_costs, init=cfg.baseline.lagrange_init, lr=cfg.baseline.lagrange_lr, upper_bound=cfg.baseline.lagrange_upper
    )
    return run_baseline(
        spec,
        cfg.algorithm,
        cfg.stage,
        cfg.estimator,
        cfg.optimizer,
        seed=seed,
        num_iterations=cfg.num_iterations,
        batch_size=cfg.batch_size,
        curriculum=curriculum,
        lagrange=lagrange,
        crpo_tol=cfg.baseline.crpo_tol,
        workers=workers,
    )


def cmd_run(args) -> int:
    cfg, provenance = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    out_dir = Path(args.out or cfg.output_dir or f"runs/{cfg.algorithm}-{cfg.environment.kind}-seed{cfg.seed}")
    spec = cfg.environment.build()
    logger.info("running %s on %s for %d iterations", cfg.algorithm, spec.name, cfg.num_iterations)
    t0 = time.perf_counter()
    result = _execute(cfg, spec, cfg.seed, cfg.workers)
    wall_ms = (time.perf_counter() - t0) * 1000.0
    runio.write_run_dir(
        out_dir,
        canonical_json(config_to_dict(cfg)),
        result,
        spec.num_costs,
        checkpoint_every=cfg.checkpoint_every,
        wall_ms=wall_ms,
    )
    if provenance:
        (out_dir / "config_provenance.json").write_text(json.dumps(provenance, indent=2, sort_keys=True) + "\n")
    ev = exact_eval(spec, result.final_params)
    print(
        f"{cfg.algorithm} on {spec.name}: {result.iterations} iterations, "
        f"terminated={result.terminated}, exact J_R={ev.j_reward:.4f}, "
        f"exact J_C={np.array2string(ev.j_cost, precision=4)}"
    )
    print(f"run directory: {out_dir}")
    return 0


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run)
    cfg, _ = load_config(run_dir / "config.json")
    spec = cfg.environment.build()
    policy_path = Path(args.policy) if args.policy else run_dir / "policy.json"
    params = policy_from_json(policy_path.read_text())
    ev = exact_eval(spec, params)
    seed = args.seed if args.seed is not None else cfg.seed
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2024]))
    rollouts = args.rollouts
    disc_returns = np.zeros(rollouts)
    undisc_returns = np.zeros(rollouts)
    undisc_costs = np.zeros((spec.num_costs, rollouts))
    for i in range(rollouts):
        batch = collect(spec, params, spec.horizon, rng)
        weights = spec.discount ** np.arange(spec.horizon)
        disc_returns[i] = float(weights @ batch.rewards)
        undisc_returns[i] = float(batch.rewards.sum())
        undisc_costs[:, i] = batch.costs.sum(axis=1)
    se = disc_returns.std(ddof=1) / np.sqrt(rollouts) if rollouts > 1 else float("inf")
    consistent = abs(ev.j_reward - disc_returns.mean()) <= 3 * se
    doc = {
        "exact_j_reward": ev.j_reward,
        "exact_j_cost": ev.j_cost.tolist(),
        "sampled_discounted_reward_mean": float(disc_returns.mean()),
        "sampled_discounted_reward_se": float(se),
        "sampled_episode_reward_mean": float(undisc_returns.mean()),
        "sampled_episode_cost_mean": undisc_costs.mean(axis=1).tolist(),
        "rollouts": rollouts,
        "within_three_se": bool(consistent),
    }
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    all_reports = []
    info_blocks = {}
    for name in names:
        reports, info = run_suite(name, seed=args.seed)
        all_reports.extend(reports)
        if info:
            info_blocks[name] = info
        n_pass = sum(r.passed for r in reports)
        n_skip = sum(r.skipped for r in reports)
        print(f"suite {name}: {n_pass}/{len(reports)} passed ({n_skip} skipped)")
    out = Path(args.out or "verdicts.json")
    ok = runio.write_verdicts(out, all_reports)
    for name, info in info_blocks.items():
        for key, block in info.get("halving", {}).items():
            print(f"  {name} envelope {key}: {block['from']:.5f} -> {block['to']:.5f} ({'ok' if block['ok'] else 'FAIL'})")
    failures = [r for r in all_reports if not r.passed]
    for r in failures[:10]:
        print(f"FAIL {r.name}: lhs={r.lhs:.6g} rhs={r.rhs:.6g} slack={r.slack:.3g}")
    print(f"verdicts written to {out}; all_passed={ok}")
    return 0 if ok else 1


def _parse_budget_grid(text: str, num_costs: int) -> list[np.ndarray]:
    if ":" in text:
        lo, hi, n = text.split(":")
        values = np.linspace(float(lo), float(hi), int(n))
    else:
        values = np.array([float(v) for v in text.split(",")])
    return [np.full(num_costs, v) for v in values]


def cmd_front(args) -> int:
    cfg, _ = load_config(args.config)
    spec = cfg.environment.build()
    grid = _parse_budget_grid(args.budgets, spec.num_costs)
    front = pareto_front(spec, grid)
    out_dir = Path(args.out or "front")
    out_dir.mkdir(parents=True, exist_ok=True)
    header = [f"d_{i}" for i in range(spec.num_costs)] + ["j_star"]
    lines = [",".join(header)]
    for d, j in front:
        lines.append(",".join([repr(float(v)) for v in d] + [repr(float(j)) if j is not None else ""]))
    (out_dir / "front.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    feasible = [(float(d[0]), j) for d, j in front if j is not None]
    if feasible:
        runio.render_line_chart(
            out_dir / "front.svg",
            {"j_star": [j for _, j in feasible]},
            title=f"constrained optimum vs budget ({spec.name})",
            x_label="budget grid index",
        )
    for d, j in front:
        print(f"d={np.array2string(d, precision=4)}: " + (f"J*={j:.6f}" if j is not None else "infeasible"))
    print(f"front written to {out_dir}")
    return 0


def cmd_compare(args) -> int:
    rows = []
    for run in args.runs:
        run_dir = Path(run)
        cfg, _ = load_config(run_dir / "config.json")
        spec = cfg.environment.build()
        params = policy_from_json((run_dir / "policy.json").read_text())
        ev = exact_eval(spec, params)
        header, data = runio.read_csv(run_dir / "metrics.csv")
        last = data[-1]
        rows.append(
            {
                "run": run_dir.name,
                "algorithm": cfg.algorithm,
                "environment": spec.name,
                "seed": cfg.seed,
                "iters": len(data),
                "exact_j_r": ev.j_reward,
                "exact_j_c": ev.j_cost.tolist(),
                "final_j_r_hat": float(last[header.index("J_R_hat")]),
            }
        )
    by_algo: dict[str, list[dict]] = {}
    for row in rows:
        by_algo.setdefault(row["algorithm"], []).append(row)
    print(f"{'algorithm':10s} {'runs':>4s} {'exact J_R':>18s} {'exact J_C (first)':>18s}")
    for algo, group in sorted(by_algo.items()):
        jr = np.array([g["exact_j_r"] for g in group])
        jc = np.array([g["exact_j_c"][0] for g in group])
        print(f"{algo:10s} {len(group):4d} {jr.mean():9.4f} +- {jr.std():5.4f} {jc.mean():9.4f} +- {jc.std():5.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2) + "\n")
    return 0


def cmd_plot(args) -> int:
    made = runio.plot_run(args.run, args.out)
    for p in made:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acpo", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train per a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--workers", type=int, default=None)
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("evaluate", help="exact vs sampled returns for a checkpoint")
    p_eval.add_argument("--run", required=True)
    p_eval.add_argument("--policy", default=None)
    p_eval.add_argument("--rollouts", type=int, default=10)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=cmd_evaluate)

    p_verify = sub.add_parser("verify", help="run oracle bound suites")
    p_verify.add_argument("--suite", choices=[*SUITES, "all"], default="all")
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--out", default=None)
    p_verify.set_defaults(func=cmd_verify)

    p_front = sub.add_parser("front", help="constrained-optimum sweep over budgets")
    p_front.add_argument("--config", required=True)
    p_front.add_argument("--budgets", required=True, help="lo:hi:n or comma-separated values")
    p_front.add_argument("--out", default=None)
    p_front.set_defaults(func=cmd_front)

    p_cmp = sub.add_parser("compare", help="summary table across run directories")
    p_cmp.add_argument("--runs", nargs="+", required=True)
    p_cmp.add_argument("--out", default=None)
    p_cmp.set_defaults(func=cmd_compare)

    p_plot = sub.add_parser("plot", help="SVG charts for a run directory")
    p_plot.add_argument("--run", required=True)
    p_plot.add_argument("--out", default=None)
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
