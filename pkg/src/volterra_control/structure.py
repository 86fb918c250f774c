"""Constraint-activity geometry of a trajectory.

Given a solved trajectory, this module locates where each state bound
g_i(y_t) <= 0 is active: maximal contact intervals (boundary arcs), isolated
touch points of higher-order constraints, junction times, the
epsilon-extensions used by the synthesis machinery, and the interval
decomposition J_0..J_kappa on which the extended active set is constant. It
also checks the standing structural assumptions:

  A1  finitely many junction times,
  A2  availability of the derivative chains (orders q_i known),
  A3  uniform full row rank of the active-constraint control derivatives,
  A4  the trajectory starts inactive and does not enter a bound exactly at T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grids import Path, TimeGrid
from .problems import ChainContext, DerivativeChain, ProblemSpec
from .dynamics import Trajectory

__all__ = [
    "NodeInterval",
    "TouchPoint",
    "ConstraintStructure",
    "Arc",
    "Window",
    "A4Verdict",
    "ReducibilityCheck",
    "StructureReport",
    "detect_structure",
    "check_reducible",
    "verify_A3",
    "verify_A4",
]


@dataclass(frozen=True)
class NodeInterval:
    """A closed node-aligned interval [t_start, t_end], by node indices."""

    start: int
    end: int

    @property
    def n_cells(self) -> int:
        return self.end - self.start

    def times(self, grid: TimeGrid) -> tuple:
        return float(grid.nodes[self.start]), float(grid.nodes[self.end])

    def contains_node(self, k: int) -> bool:
        return self.start <= k <= self.end


@dataclass
class TouchPoint:
    """An isolated contact instant of a higher-order constraint.

    Attributes:
        constraint: Constraint component index.
        node: Grid node index of the touch.
        time: Touch time.
        reducible: Set by check_reducible; None until evaluated.
        g2: Value of the second total derivative at the touch, if evaluated.
    """

    constraint: int
    node: int
    time: float
    reducible: Optional[bool] = None
    g2: Optional[float] = None


@dataclass
class ConstraintStructure:
    """Contact geometry of one constraint component.

    Attributes:
        index: Constraint component.
        order: Declared order q_i (1 when no chain is given).
        contact: Maximal contact intervals (touch points of order > 1
            excised; order-1 isolated contacts kept).
        touches: Touch points (empty for order-1 constraints).
        contact_eps: eps-extension of the contact intervals, merged.
        contact_eps0: eps0-extension of the contact intervals, merged.
    """

    index: int
    order: int
    contact: list
    touches: list
    contact_eps: list = field(default_factory=list)
    contact_eps0: list = field(default_factory=list)


@dataclass(frozen=True)
class Arc:
    """A maximal open interval between junction times with constant activity."""

    start: float
    end: float
    active: tuple


@dataclass(frozen=True)
class Window:
    """One interval J_l of the decomposition, as an inclusive node range."""

    start_node: int
    end_node: int
    active: tuple


@dataclass
class A4Verdict:
    """Initial/terminal activity check.

    Attributes:
        ok: Both parts hold.
        initial_ok: g(y_0) strictly inactive componentwise.
        terminal_ok: No constraint enters its bound exactly at T.
        detail: Human-readable diagnostic.
    """

    ok: bool
    initial_ok: bool
    terminal_ok: bool
    detail: str = ""


@dataclass
class ReducibilityCheck:
    """Outcome of the touch-point reducibility test.

    Attributes:
        reducible: Second total derivative is continuous and < 0 at the touch.
        value: g^(2) at the touch node.
        continuity_gap: Max deviation of the neighbor evaluations.
    """

    reducible: bool
    value: float
    continuity_gap: float


@dataclass
class StructureReport:
    """Full activity geometry of a trajectory.

    Attributes:
        grid: The trajectory grid.
        tol_active: Activity threshold used (g >= -tol_active counts active).
        eps: Extension width for the contact sets.
        eps0: Larger extension width defining the decomposition.
        constraints: Per-component ConstraintStructure.
        junction_times: Sorted activity-change times.
        arcs: Maximal intervals of constant exact active set.
        windows: Decomposition J_0..J_kappa (constant eps0-extended active
            set), non-overlapping inclusive node ranges covering [0, T].
        a1_ok: Junction count below the finiteness cap.
        a4: Initial/terminal verdict.
        gamma: Smallest singular value from verify_A3 (None until computed).
    """

    grid: TimeGrid
    tol_active: float
    eps: float
    eps0: float
    constraints: list
    junction_times: list
    arcs: list
    windows: list
    a1_ok: bool
    a4: A4Verdict
    gamma: Optional[float] = None

    @property
    def n_touch_total(self) -> int:
        return sum(len(c.touches) for c in self.constraints)

    def contact_mask(self, i: int) -> np.ndarray:
        """Boolean node mask of the contact set of constraint i."""
        mask = np.zeros(self.grid.n_nodes, dtype=bool)
        for iv in self.constraints[i].contact:
            mask[iv.start : iv.end + 1] = True
        return mask

    def eps_mask(self, i: int) -> np.ndarray:
        mask = np.zeros(self.grid.n_nodes, dtype=bool)
        for iv in self.constraints[i].contact_eps:
            mask[iv.start : iv.end + 1] = True
        return mask

    def eps0_mask(self, i: int) -> np.ndarray:
        mask = np.zeros(self.grid.n_nodes, dtype=bool)
        for iv in self.constraints[i].contact_eps0:
            mask[iv.start : iv.end + 1] = True
        return mask

    def touch_nodes(self, i: int) -> list:
        return [tp.node for tp in self.constraints[i].touches]

    def all_touches(self) -> list:
        """All touch points across constraints, in (constraint, time) order."""
        out = []
        for c in self.constraints:
            out.extend(c.touches)
        return out

    def to_dict(self) -> dict:
        nodes = self.grid.nodes
        return {
            "tol_active": self.tol_active,
            "eps": self.eps,
            "eps0": self.eps0,
            "gamma": self.gamma,
            "a1_ok": self.a1_ok,
            "a4": {
                "ok": self.a4.ok,
                "initial_ok": self.a4.initial_ok,
                "terminal_ok": self.a4.terminal_ok,
                "detail": self.a4.detail,
            },
            "junction_times": list(map(float, self.junction_times)),
            "constraints": [
                {
                    "index": c.index,
                    "order": c.order,
                    "contact": [list(iv.times(self.grid)) for iv in c.contact],
                    "contact_eps": [list(iv.times(self.grid))
                                    for iv in c.contact_eps],
                    "contact_eps0": [list(iv.times(self.grid))
                                     for iv in c.contact_eps0],
                    "touches": [
                        {"time": tp.time, "node": tp.node,
                         "reducible": tp.reducible, "g2": tp.g2}
                        for tp in c.touches
                    ],
                }
                for c in self.constraints
            ],
            "arcs": [
                {"start": a.start, "end": a.end, "active": list(a.active)}
                for a in self.arcs
            ],
            "windows": [
                {"start": float(nodes[w.start_node]),
                 "end": float(nodes[w.end_node]),
                 "start_node": w.start_node, "end_node": w.end_node,
                 "active": list(w.active)}
                for w in self.windows
            ],
        }


def _active_runs(mask: np.ndarray) -> list:
    """Maximal runs of True in a boolean vector, as (first, last) inclusive."""
    runs = []
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return runs
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [idx.size - 1]])
    for a, b in zip(starts, ends):
        runs.append((int(idx[a]), int(idx[b])))
    return runs


def _extend_intervals(intervals: Sequence[NodeInterval], grid: TimeGrid,
                      width: float) -> list:
    """Extend node intervals by ``width`` in time, clip to [0, T], merge."""
    if not intervals:
        return []
    nodes = grid.nodes
    spans = []
    for iv in intervals:
        lo = nodes[iv.start] - width
        hi = nodes[iv.end] + width
        a = int(np.searchsorted(nodes, lo - 1e-12 * grid.horizon, side="left"))
        b = int(np.searchsorted(nodes, hi + 1e-12 * grid.horizon,
                                side="right")) - 1
        spans.append((max(a, 0), min(b, grid.n_nodes - 1)))
    spans.sort()
    merged = [spans[0]]
    for a, b in spans[1:]:
        if a <= merged[-1][1] + 1:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return [NodeInterval(a, b) for a, b in merged]


def detect_structure(spec: ProblemSpec, traj: Trajectory,
                     chains: Optional[Sequence[DerivativeChain]] = None,
                     tol_active: Optional[float] = None,
                     eps: Optional[float] = None,
                     eps0: Optional[float] = None,
                     junction_cap: int = 64) -> StructureReport:
    """Locate contact sets, touch points, junctions, and the decomposition.

    Args:
        spec: Problem data.
        traj: Solved trajectory.
        chains: Derivative chains per constraint (supplies the orders q_i);
            omit to treat every constraint as order 1.
        tol_active: Activity threshold; default 1e-6 * (1 + sup|g|).
        eps: Contact extension width; default 2 * max grid spacing.
        eps0: Decomposition extension width; default min(4 eps, gap / 3)
            where gap is the smallest spacing among junction times and the
            horizon endpoints.
        junction_cap: Finiteness cap enforcing A1.

    Returns:
        StructureReport (gamma left unset; call verify_A3 to fill it).

    Raises:
        ValueError: If the requested (eps, eps0) violate the spacing
            constraints eps < eps0 < gap / 2.
    """
    grid = traj.grid
    gvals = np.asarray(spec.eval_g(traj.y.values), dtype=float)
    r = gvals.shape[1]
    if tol_active is None:
        g_sup = float(np.max(np.abs(gvals))) if r else 0.0
        tol_active = 1e-6 * (1.0 + g_sup)

    orders = [1] * r
    if chains is not None:
        for ch in chains:
            orders[ch.constraint_index] = ch.order

    nodes = grid.nodes
    constraints = []
    junctions = set()
    exact_masks = np.zeros((r, grid.n_nodes), dtype=bool)
    for i in range(r):
        mask = gvals[:, i] >= -tol_active
        exact_masks[i] = mask
        contact, touches = [], []
        for a, b in _active_runs(mask):
            if orders[i] > 1 and b - a <= 1:
                k_touch = a + int(np.argmax(gvals[a : b + 1, i]))
                touches.append(TouchPoint(constraint=i, node=k_touch,
                                          time=float(nodes[k_touch])))
                junctions.add(float(nodes[k_touch]))
            else:
                contact.append(NodeInterval(a, b))
                if a > 0:
                    junctions.add(float(nodes[a]))
                if b < grid.n_nodes - 1:
                    junctions.add(float(nodes[b]))
        constraints.append(ConstraintStructure(
            index=i, order=orders[i], contact=contact, touches=touches))

    junction_times = sorted(junctions)
    a1_ok = len(junction_times) <= junction_cap

    marks = np.unique(np.concatenate([[0.0, grid.horizon],
                                      np.asarray(junction_times)]))
    gap = float(np.min(np.diff(marks))) if marks.size > 1 else grid.horizon

    if eps is None:
        eps = 2.0 * grid.max_spacing
    if eps0 is None:
        eps0 = min(4.0 * eps, gap / 3.0)
    if not (eps < eps0 < gap / 2.0):
        raise ValueError(
            f"invalid configuration: need eps < eps0 < gap/2, got eps={eps}, "
            f"eps0={eps0}, gap={gap} (junction times too close, or widths "
            "too large for this grid)")

    # touch points stay excised here: only the arc intervals are widened, so
    # touch neighborhoods enter the analysis through the local-max reduction
    # alone, never through the extended contact sets.
    for c in constraints:
        c.contact_eps = _extend_intervals(c.contact, grid, eps)
        c.contact_eps0 = _extend_intervals(c.contact, grid, eps0)

    # arcs: maximal runs of constant exact active set (touches are junctions)
    touch_mask = np.zeros((r, grid.n_nodes), dtype=bool)
    for c in constraints:
        for tp in c.touches:
            touch_mask[c.index, tp.node] = True
    arcs = []
    boundary = sorted(set([0.0, grid.horizon]) | set(junction_times))
    for lo, hi in zip(boundary[:-1], boundary[1:]):
        mid_nodes = np.flatnonzero((nodes > lo + 1e-14) & (nodes < hi - 1e-14))
        if mid_nodes.size:
            counts = exact_masks[:, mid_nodes].sum(axis=1)
            active = tuple(int(i) for i in range(r)
                           if counts[i] > mid_nodes.size / 2)
        else:
            active = tuple()
        arcs.append(Arc(start=float(lo), end=float(hi), active=active))

    # windows: runs of constant eps0-extended active set
    eps0_sets = np.zeros((r, grid.n_nodes), dtype=bool)
    for c in constraints:
        for iv in c.contact_eps0:
            eps0_sets[c.index, iv.start : iv.end + 1] = True
    windows = []
    start = 0
    for k in range(1, grid.n_nodes):
        if not np.array_equal(eps0_sets[:, k], eps0_sets[:, start]):
            windows.append(Window(
                start_node=start, end_node=k - 1,
                active=tuple(int(i) for i in np.flatnonzero(
                    eps0_sets[:, start]))))
            start = k
    windows.append(Window(
        start_node=start, end_node=grid.n_nodes - 1,
        active=tuple(int(i) for i in np.flatnonzero(eps0_sets[:, start]))))

    a4 = _a4_verdict(gvals, exact_masks, tol_active)

    return StructureReport(
        grid=grid, tol_active=tol_active, eps=eps, eps0=eps0,
        constraints=constraints, junction_times=junction_times, arcs=arcs,
        windows=windows, a1_ok=a1_ok, a4=a4)


def _a4_verdict(gvals: np.ndarray, exact_masks: np.ndarray,
                tol_active: float) -> A4Verdict:
    r = gvals.shape[1]
    initial_ok = bool(np.all(gvals[0] < -tol_active)) if r else True
    terminal_ok = True
    detail = []
    if not initial_ok:
        bad = [i for i in range(r) if gvals[0, i] >= -tol_active]
        detail.append(f"initial state active for constraints {bad}")
    n_last = gvals.shape[0] - 1
    for i in range(r):
        if exact_masks[i, n_last] and not exact_masks[i, n_last - 1]:
            terminal_ok = False
            detail.append(f"constraint {i} enters its bound exactly at T "
                          "(entry point at the horizon)")
    return A4Verdict(ok=initial_ok and terminal_ok, initial_ok=initial_ok,
                     terminal_ok=terminal_ok, detail="; ".join(detail))


def verify_A4(spec: ProblemSpec, traj: Trajectory,
              report: StructureReport) -> A4Verdict:
    """Re-evaluate the initial/terminal activity check and update the report."""
    gvals = np.asarray(spec.eval_g(traj.y.values), dtype=float)
    r = gvals.shape[1]
    exact_masks = np.zeros((r, traj.grid.n_nodes), dtype=bool)
    for i in range(r):
        exact_masks[i] = gvals[:, i] >= -report.tol_active
    verdict = _a4_verdict(gvals, exact_masks, report.tol_active)
    report.a4 = verdict
    return verdict


def check_reducible(spec: ProblemSpec, traj: Trajectory,
                    chain: DerivativeChain, touch: TouchPoint,
                    tol: float = 1e-6) -> ReducibilityCheck:
    """Evaluate g^(2) at a touch point and decide reducibility.

    Reducible means the second total derivative of the constraint along the
    trajectory is continuous at the touch time and strictly negative there.
    Continuity is probed by comparing the evaluations at the two neighboring
    nodes against the touch-node value.

    Raises:
        ValueError: For order-1 constraints (no reduction applies).
    """
    if chain.order < 2:
        raise ValueError("not applicable: reducibility concerns constraints "
                         "of order > 1")
    grid = traj.grid
    ctx = ChainContext(grid, traj.u.values, traj.y.values)
    el = chain.elements[2]
    k = touch.node
    val = float(el.value(ctx, k, ctx.u[k], ctx.y[k]))
    gap = 0.0
    for kk in (k - 1, k + 1):
        if 0 <= kk < grid.n_nodes:
            gap = max(gap, abs(
                float(el.value(ctx, kk, ctx.u[kk], ctx.y[kk])) - val))
    cont_tol = max(tol, 10.0 * grid.max_spacing * (1.0 + abs(val)))
    reducible = (val < -tol) and (gap <= cont_tol)
    touch.reducible = reducible
    touch.g2 = val
    return ReducibilityCheck(reducible=reducible, value=val,
                             continuity_gap=gap)


def verify_A3(spec: ProblemSpec, traj: Trajectory,
              chains: Sequence[DerivativeChain], report: StructureReport,
              probes: Optional[int] = None) -> float:
    """Smallest singular value of the active-constraint control derivatives.

    For every grid node whose eps0-extended active set is nonempty, stack the
    control-derivative rows D_u g_i^(q_i) of the active constraints and take
    the smallest singular value; gamma is the minimum over nodes. Returns
    +inf when no node has an active extended set (vacuous A3).

    Args:
        probes: Optional cap on the number of nodes checked (evenly
            subsampled); default checks all eligible nodes.
    """
    grid = traj.grid
    ctx = ChainContext(grid, traj.u.values, traj.y.values)
    by_index = {ch.constraint_index: ch for ch in chains}
    r = spec.n_state_bounds
    eps0_sets = np.zeros((r, grid.n_nodes), dtype=bool)
    for c in report.constraints:
        for iv in c.contact_eps0:
            eps0_sets[c.index, iv.start : iv.end + 1] = True
    eligible = np.flatnonzero(eps0_sets.any(axis=0))
    if eligible.size == 0:
        report.gamma = math.inf
        return math.inf
    if probes is not None and probes < eligible.size:
        sel = np.unique(np.linspace(0, eligible.size - 1, probes).astype(int))
        eligible = eligible[sel]
    gamma = math.inf
    for k in eligible:
        rows = []
        for i in np.flatnonzero(eps0_sets[:, k]):
            ch = by_index.get(int(i))
            if ch is None:
                raise ValueError(f"constraint {i} is active but has no "
                                 "derivative chain")
            rows.append(ch.elements[ch.order].eval_du(
                ctx, int(k), ctx.u[k], ctx.y[k]))
        m_mat = np.vstack(rows)
        sv = np.linalg.svd(m_mat, compute_uv=False)
        gamma = min(gamma, float(sv[-1]) if sv.size else math.inf)
    report.gamma = gamma
    return gamma
