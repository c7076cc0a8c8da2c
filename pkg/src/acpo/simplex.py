"""Dense two-phase tableau simplex for small linear programs.

Maximizes c @ x subject to A_eq x = b_eq, A_ub x <= b_ub, x >= 0. Built for
desk-scale occupancy problems (hundreds of variables): no sparsity, no
presolve, plain tableau pivoting with a Bland's-rule fallback against
cycling. Right-hand sides may be negative; rows are normalized internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-9


@dataclass
class LpResult:
    status: str  # optimal | infeasible | unbounded
    x: np.ndarray | None = None
    objective: float | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _pivot(tableau: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])
    basis[row] = col


def _run_phase(tableau: np.ndarray, basis: np.ndarray, cost: np.ndarray, tol: float, max_iter: int) -> str:
    """Pivot until optimal or unbounded; Dantzig entering rule with a switch
    to Bland's rule after a burn-in to break any cycle."""
    num_rows, width = tableau.shape
    n = width - 1
    bland_after = 50 * (num_rows + n)
    for it in range(max_iter):
        reduced = cost[basis] @ tableau[:, :n] - cost
        entering = np.where(reduced < -tol)[0]
        if len(entering) == 0:
            return "optimal"
        if it < bland_after:
            col = int(entering[np.argmin(reduced[entering])])
        else:
            col = int(entering[0])
        column = tableau[:, col]
        positive = column > tol
        if not positive.any():
            return "unbounded"
        ratios = np.full(num_rows, np.inf)
        ratios[positive] = tableau[positive, n] / column[positive]
        best = ratios.min()
        tied = np.where(ratios <= best + tol)[0]
        row = int(tied[np.argmin(basis[tied])])  # lowest basis index among ties
        _pivot(tableau, basis, row, col)
    raise RuntimeError("simplex iteration limit exceeded")


def linprog_dense(
    c: np.ndarray,
    a_eq: np.ndarray | None = None,
    b_eq: np.ndarray | None = None,
    a_ub: np.ndarray | None = None,
    b_ub: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = 100000,
) -> LpResult:
    c = np.asarray(c, dtype=float)
    n = len(c)
    blocks = []
    rhs = []
    kinds = []  # "eq" or "ub"
    if a_eq is not None and len(a_eq):
        for row, b in zip(np.asarray(a_eq, dtype=float), np.asarray(b_eq, dtype=float)):
            blocks.append(row.copy())
            rhs.append(float(b))
            kinds.append("eq")
    if a_ub is not None and len(a_ub):
        for row, b in zip(np.asarray(a_ub, dtype=float), np.asarray(b_ub, dtype=float)):
            blocks.append(row.copy())
            rhs.append(float(b))
            kinds.append("ub")
    m = len(blocks)
    if m == 0:
        raise ValueError("no constraints given")

    a = np.stack(blocks)
    b = np.asarray(rhs)

    # slack/surplus columns for inequality rows
    num_slack = sum(1 for k in kinds if k == "ub")
    slack = np.zeros((m, num_slack))
    j = 0
    for i, kind in enumerate(kinds):
        if kind == "ub":
            slack[i, j] = 1.0
            j += 1

    full = np.hstack([a, slack])
    # normalize negative right-hand sides (flips slack into surplus)
    for i in range(m):
        if b[i] < 0:
            full[i] *= -1.0
            b[i] *= -1.0

    # artificial variables wherever the slack column cannot seed the basis
    width = full.shape[1]
    basis = np.empty(m, dtype=int)
    art_cols = []
    for i in range(m):
        slack_col = None
        if kinds[i] == "ub":
            col = n + sum(1 for k in kinds[:i] if k == "ub")
            if full[i, col] > 0:
                slack_col = col
        if slack_col is not None:
            basis[i] = slack_col
        else:
            art_cols.append(i)
            basis[i] = width + len(art_cols) - 1
    art = np.zeros((m, len(art_cols)))
    for j, i in enumerate(art_cols):
        art[i, j] = 1.0
    tableau = np.hstack([full, art, b[:, None]])

    total = width + len(art_cols)
    if art_cols:
        phase1_cost = np.zeros(total)
        phase1_cost[width:] = -1.0
        status = _run_phase(tableau, basis, phase1_cost, tol, max_iter)
        if status != "optimal":
            return LpResult(status="infeasible")
        if -(phase1_cost[basis] @ tableau[:, -1]) > 1e-7:
            return LpResult(status="infeasible")
        # drive leftover artificials out of the basis; drop redundant rows
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if basis[i] >= width:
                pivot_col = next((jj for jj in range(width) if abs(tableau[i, jj]) > tol), None)
                if pivot_col is None:
                    keep[i] = False
                else:
                    _pivot(tableau, basis, i, pivot_col)
        tableau = tableau[keep]
        basis = basis[keep]
        tableau = np.hstack([tableau[:, :width], tableau[:, -1:]])

    phase2_cost = np.concatenate([c, np.zeros(width - n)])
    status = _run_phase(tableau, basis, phase2_cost, tol, max_iter)
    if status != "optimal":
        return LpResult(status=status)
    x = np.zeros(width)
    x[basis] = tableau[:, -1]
    x = x[:n]
    return LpResult(status="optimal", x=x, objective=float(c @ x))
