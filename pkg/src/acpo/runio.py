"""Run-directory persistence: metrics/budget CSV streams, checkpoints, SVG plots.

metrics.csv and budgets.csv are fully determined by (config, seed); wall-
clock timings go to a separate timings.csv so re-runs stay byte-identical.
Floats are written with repr (shortest round-trip form), UTF-8, comma
separators, '.' decimal point.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .policy import PolicyParams, to_json
from .scheduler import RunResult


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def metrics_header(num_costs: int) -> list[str]:
    cols = ["iter", "stage", "J_R_hat"]
    cols += [f"J_C_hat_{i}" for i in range(num_costs)]
    cols += [f"d_{i}" for i in range(num_costs)]
    cols += ["g", "kl", "objective"]
    return cols


def metrics_rows(result: RunResult, num_costs: int):
    for row in result.metrics:
        out = [row["iter"], row["stage"], _fmt(row["j_r_hat"])]
        out += [_fmt(v) for v in row["j_c_hat"]]
        out += [_fmt(v) for v in row["d"]]
        out += [_fmt(row["g"]), _fmt(row["kl"]), _fmt(row["objective"])]
        yield out


def write_metrics_csv(path: Path, result: RunResult, num_costs: int) -> None:
    lines = [",".join(metrics_header(num_costs))]
    for row in metrics_rows(result, num_costs):
        lines.append(",".join(str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_budgets_csv(path: Path, result: RunResult, num_costs: int) -> None:
    header = ["iter", "flag"] + [f"d_{i}" for i in range(num_costs)] + ["g"]
    lines = [",".join(header)]
    for row in result.budget_history:
        cells = [str(row["iter"]), str(row["flag"])] + [_fmt(v) for v in row["d"]] + [_fmt(row["g"])]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_run_dir(
    run_dir: str | Path,
    config_text: str,
    result: RunResult,
    num_costs: int,
    checkpoint_every: int = 50,
    wall_ms: float | None = None,
) -> Path:
    """Persist a finished run: config.json, metrics.csv, budgets.csv,
    policy.json (final) plus periodic policy_NNNNN.json checkpoints."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(config_text, encoding="utf-8")
    write_metrics_csv(run_dir / "metrics.csv", result, num_costs)
    write_budgets_csv(run_dir / "budgets.csv", result, num_costs)
    (run_dir / "policy.json").write_text(to_json(result.final_params), encoding="utf-8")
    if checkpoint_every > 0:
        for k in sorted(result.checkpoints):
            if k % checkpoint_every == 0:
                (run_dir / f"policy_{k:06d}.json").write_text(to_json(result.checkpoints[k]), encoding="utf-8")
    summary = {
        "terminated": result.terminated,
        "iterations": result.iterations,
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if wall_ms is not None:
        (run_dir / "timings.csv").write_text(f"total_wall_ms\n{wall_ms:.0f}\n", encoding="utf-8")
    return run_dir


def write_verdicts(path: str | Path, reports: list) -> bool:
    """Serialize bound reports; returns True when every report passed."""
    docs = [r.to_dict() for r in reports]
    ok = all(d["passed"] for d in docs)
    Path(path).write_text(json.dumps({"all_passed": ok, "reports": docs}, indent=2) + "\n", encoding="utf-8")
    return ok


# ---------------------------------------------------------------------------
# Native SVG polyline charts (no plotting dependency)
# ---------------------------------------------------------------------------

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def render_line_chart(
    path: str | Path,
    series: dict[str, list[float]],
    title: str = "",
    width: int = 640,
    height: int = 360,
    x_label: str = "iteration",
) -> None:
    """Write a simple multi-series polyline SVG chart."""
    margin = 50
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    values = [v for vs in series.values() for v in vs if np.isfinite(v)]
    if not values:
        values = [0.0, 1.0]
    lo, hi = min(values), max(values)
    if hi - lo < 1e-12:
        hi = lo + 1.0
    max_len = max((len(v) for v in series.values()), default=1)

    def sx(i):
        return margin + plot_w * (i / max(1, max_len - 1))

    def sy(v):
        return margin + plot_h * (1.0 - (v - lo) / (hi - lo))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{margin}" y1="{margin + plot_h}" x2="{margin + plot_w}" y2="{margin + plot_h}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{margin + plot_h}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 8}" text-anchor="middle" font-size="11">{x_label}</text>',
        f'<text x="8" y="{margin - 8}" font-size="11">{hi:.3g}</text>',
        f'<text x="8" y="{margin + plot_h}" font-size="11">{lo:.3g}</text>',
    ]
    for j, (name, vals) in enumerate(series.items()):
        color = _COLORS[j % len(_COLORS)]
        pts = " ".join(f"{sx(i):.2f},{sy(v):.2f}" for i, v in enumerate(vals) if np.isfinite(v))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{margin + 6}" y="{margin + 16 + 14 * j}" font-size="11" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts), encoding="utf-8")


def plot_run(run_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Render return/budget trace charts for a persisted run directory."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir else run_dir / "plots"
    out.mkdir(parents=True, exist_ok=True)
    header, rows = read_csv(run_dir / "metrics.csv")
    made = []
    jr = [float(r[header.index("J_R_hat")]) for r in rows]
    cost_cols = [h for h in header if h.startswith("J_C_hat_")]
    budget_cols = [h for h in header if h.startswith("d_")]
    returns = {"J_R_hat": jr}
    for c in cost_cols:
        returns[c] = [float(r[header.index(c)]) for r in rows]
    p = out / "returns.svg"
    render_line_chart(p, returns, title="episode returns")
    made.append(p)
    budgets = {}
    for c in budget_cols:
        budgets[c] = [float(r[header.index(c)]) for r in rows]
    budgets["g"] = [float(r[header.index("g")]) for r in rows]
    p = out / "budgets.svg"
    render_line_chart(p, budgets, title="budgets")
    made.append(p)
    return made


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text(encoding="utf-8").strip().split("\n")
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows
