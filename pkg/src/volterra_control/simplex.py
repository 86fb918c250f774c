"""Dense primal simplex solver for small verification LPs.

Implements the textbook two-phase primal simplex method with Bland's
anti-cycling rule on a dense tableau. Intended for the desk-scale linear
programs that arise in multiplier estimation and qualification checking
(a few hundred rows and columns); a hard cap rejects anything larger.

Standard form solved by ``solve_standard``:

    min c . x   s.t.  A x = b,  x >= 0.

``linear_program`` is a convenience wrapper accepting inequality rows,
free variables, and finite bounds, reducing to standard form internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

__all__ = ["LPResult", "solve_standard", "linear_program", "MAX_VARIABLES"]

MAX_VARIABLES = 5000


@dataclass
class LPResult:
    """Outcome of a linear program.

    Attributes:
        status: "optimal", "infeasible", or "unbounded".
        x: Primal solution (None unless optimal).
        objective: Optimal value (None unless optimal).
        duals: Multipliers of the equality rows (None unless optimal);
            sign convention: objective = duals . b at the optimum for
            standard-form problems.
        n_pivots: Total simplex pivots across both phases.
        basis: Final basic column indices (standard-form numbering).
    """

    status: str
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    duals: Optional[np.ndarray] = None
    n_pivots: int = 0
    basis: Optional[np.ndarray] = None


def _pivot(tableau: np.ndarray, row: int, col: int) -> None:
    """In-place Gauss-Jordan pivot on tableau[row, col]."""
    tableau[row] /= tableau[row, col]
    piv = tableau[row].copy()
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, piv)
    tableau[row] = piv
    # force the entering column to an exact unit vector: this removes one
    # source of round-off creep over long pivot sequences
    tableau[:, col] = 0.0
    tableau[row, col] = 1.0


def _simplex_phase(tableau: np.ndarray, basis: np.ndarray, n_cols: int,
                   tol: float, max_pivots: int) -> Tuple[str, int]:
    """Run primal simplex with Bland's rule on a reduced tableau.

    The tableau layout is rows 0..m-1 = constraints (rhs in the last
    column), row m = objective (reduced costs, objective value negated in
    the corner). Returns (status, pivots).

    Unboundedness is declared only when NO improving column admits a finite
    ratio. Skipping improving columns whose tableau entries are all below
    the pivot tolerance keeps round-off noise in a near-zero column from
    masquerading as an unbounded ray; in exact arithmetic the first
    improving column always decides, so the scan preserves Bland's rule
    whenever it matters.
    """
    m = tableau.shape[0] - 1
    pivots = 0
    while pivots < max_pivots:
        cost_row = tableau[m, :n_cols]
        improving = np.flatnonzero(cost_row < -tol)
        if improving.size == 0:
            return "optimal", pivots
        rhs = tableau[:m, -1]
        pivoted = False
        for entering in improving:  # Bland: smallest admissible index
            col = tableau[:m, entering]
            mask = col > tol
            if not mask.any():
                continue
            ratios = np.full(m, np.inf)
            ratios[mask] = rhs[mask] / col[mask]
            best = float(np.min(ratios))
            ties = np.flatnonzero(ratios <= best + 1e-12)
            leaving = int(ties[np.argmin(basis[ties])])
            _pivot(tableau, leaving, int(entering))
            basis[leaving] = int(entering)
            pivots += 1
            pivoted = True
            break
        if not pivoted:
            return "unbounded", pivots
    raise RuntimeError(f"simplex exceeded {max_pivots} pivots")


def solve_standard(c: np.ndarray, a_mat: np.ndarray, b: np.ndarray,
                   tol: float = 1e-9,
                   max_pivots: Optional[int] = None) -> LPResult:
    """Solve min c.x s.t. A x = b, x >= 0 by two-phase primal simplex.

    Args:
        c: Cost vector, shape (n,).
        a_mat: Constraint matrix, shape (m, n).
        b: Right-hand side, shape (m,).
        tol: Optimality / ratio tolerance (scaled by problem magnitude).
        max_pivots: Pivot cap per phase; default 50 * (m + n).

    Returns:
        LPResult. ``duals`` solves B^T y = c_B for the final basis.
    """
    c = np.asarray(c, dtype=float)
    a_orig = np.asarray(a_mat, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    m, n = a_orig.shape
    if n > MAX_VARIABLES:
        raise ValueError(f"problem has {n} variables, cap is {MAX_VARIABLES}")
    if c.shape != (n,) or b.shape != (m,):
        raise ValueError("inconsistent LP dimensions")
    if max_pivots is None:
        max_pivots = 50 * (m + n)

    a_work = a_orig.copy()
    neg = b < 0
    a_work[neg] *= -1.0
    b[neg] *= -1.0
    scale = max(1.0, float(np.max(np.abs(a_work))) if a_work.size else 1.0,
                float(np.max(np.abs(b))) if b.size else 1.0)
    # tableau round-off grows with the pivot count, which scales with the
    # row count; widen the optimality/pivot tolerance accordingly
    tol_eff = tol * scale * math.sqrt(max(1.0, m))

    # ---- phase 1: minimize sum of artificials ----
    n_total = n + m
    tableau = np.zeros((m + 1, n_total + 1))
    tableau[:m, :n] = a_work
    tableau[:m, n : n + m] = np.eye(m)
    tableau[:m, -1] = b
    tableau[m, n : n + m] = 1.0
    basis = np.arange(n, n + m)
    # price out the artificial basis
    tableau[m] -= tableau[:m].sum(axis=0)
    status, p1 = _simplex_phase(tableau, basis, n_total, tol_eff, max_pivots)
    pivots = p1
    # the corner holds the negated phase-1 objective. That objective is
    # bounded below by zero, so an "unbounded" report here can only be
    # tableau round-off: judge feasibility by the achieved value either way.
    if -tableau[m, -1] > tol_eff * max(1.0, math.sqrt(m)):
        return LPResult(status="infeasible", n_pivots=pivots)

    # drive artificials out of the basis where possible
    for i in range(m):
        if basis[i] >= n:
            row = tableau[i, :n]
            j = -1
            for jj in range(n):
                if abs(row[jj]) > tol_eff:
                    j = jj
                    break
            if j >= 0:
                _pivot(tableau, i, j)
                basis[i] = j
                pivots += 1
            # else: redundant row; artificial stays basic at zero

    # ---- phase 2 ----
    tableau2 = np.zeros((m + 1, n + 1))
    tableau2[:m, :n] = tableau[:m, :n]
    tableau2[:m, -1] = tableau[:m, -1]
    tableau2[m, :n] = c
    for i in range(m):
        if basis[i] < n and tableau2[m, basis[i]] != 0.0:
            tableau2[m] -= tableau2[m, basis[i]] * tableau2[i]
    # columns of artificials still basic (redundant rows) are fixed at zero;
    # mask them by forbidding entry (they are out of range n already).
    status, p2 = _simplex_phase(tableau2, basis, n, tol_eff, max_pivots)
    pivots += p2
    if status == "unbounded":
        return LPResult(status="unbounded", n_pivots=pivots)

    x = np.zeros(n)
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = tableau2[i, -1]
    # duals from the final basis: solve B^T y = c_B on the original rows
    rows_keep = [i for i in range(m) if basis[i] < n]
    y = np.zeros(m)
    if rows_keep:
        cols = [int(basis[i]) for i in rows_keep]
        b_t = a_orig[:, cols].T  # rows of B^T are basic columns of A
        y, *_ = np.linalg.lstsq(b_t, c[cols], rcond=None)
    obj = float(c @ x)
    return LPResult(status="optimal", x=x, objective=obj, duals=y,
                    n_pivots=pivots, basis=basis.copy())


def linear_program(c: np.ndarray,
                   a_ub: Optional[np.ndarray] = None,
                   b_ub: Optional[np.ndarray] = None,
                   a_eq: Optional[np.ndarray] = None,
                   b_eq: Optional[np.ndarray] = None,
                   bounds: Optional[Sequence] = None,
                   tol: float = 1e-9) -> LPResult:
    """General-form wrapper: min c.x s.t. A_ub x <= b_ub, A_eq x = b_eq.

    Args:
        bounds: Per-variable (lo, hi) pairs; None entries mean unbounded on
            that side. Default (0, None) for every variable, matching the
            standard-form convention.

    Returns:
        LPResult with ``x`` in the original variable space. ``duals`` are
        the standard-form equality multipliers: first the inequality rows
        (slack form), then the equality rows.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    a_ub = np.zeros((0, n)) if a_ub is None else np.asarray(a_ub, dtype=float)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    a_eq = np.zeros((0, n)) if a_eq is None else np.asarray(a_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    if bounds is None:
        bounds = [(0.0, None)] * n
    if len(bounds) != n:
        raise ValueError("bounds length mismatch")

    # variable transform: x_j = base_j + sum of nonnegative pieces
    offsets = np.zeros(n)
    pieces = []  # per variable: list of (column sign multipliers)
    col_map = []  # (var index, sign)
    extra_ub_rows = []
    extra_ub_rhs = []
    for j, (lo, hi) in enumerate(bounds):
        if lo is None and hi is None:
            col_map.append((j, 1.0))
            col_map.append((j, -1.0))
        elif lo is None:
            # x <= hi  ->  x = hi - w, w >= 0
            offsets[j] = hi
            col_map.append((j, -1.0))
        else:
            offsets[j] = lo
            col_map.append((j, 1.0))
            if hi is not None:
                row = np.zeros(n)
                row[j] = 1.0
                extra_ub_rows.append(row)
                extra_ub_rhs.append(hi)
    if extra_ub_rows:
        a_ub = np.vstack([a_ub, np.array(extra_ub_rows)])
        b_ub = np.concatenate([b_ub, np.array(extra_ub_rhs)])

    n_cols = len(col_map)
    m_ub, m_eq = a_ub.shape[0], a_eq.shape[0]
    a_std = np.zeros((m_ub + m_eq, n_cols + m_ub))
    c_std = np.zeros(n_cols + m_ub)
    for idx, (j, sgn) in enumerate(col_map):
        a_std[:m_ub, idx] = sgn * a_ub[:, j]
        a_std[m_ub:, idx] = sgn * a_eq[:, j]
        c_std[idx] = sgn * c[j]
    a_std[:m_ub, n_cols:] = np.eye(m_ub)
    b_std = np.concatenate([b_ub - a_ub @ offsets, b_eq - a_eq @ offsets])

    res = solve_standard(c_std, a_std, b_std, tol=tol)
    if res.status != "optimal":
        return res
    x = offsets.copy()
    for idx, (j, sgn) in enumerate(col_map):
        x[j] += sgn * res.x[idx]
    return LPResult(status="optimal", x=x, objective=float(c @ x),
                    duals=res.duals, n_pivots=res.n_pivots, basis=res.basis)
