"""Constructive synthesis of feasible directions and controls.

This module builds control directions with prescribed linearized behaviour
along the state constraints. It is organised in four layers:

* **Jets and connections.** :func:`connect` produces, on a short time span,
  the minimum-norm q-th derivative profile whose iterated integrals carry a
  prescribed derivative jet on the left endpoint into a prescribed jet on the
  right endpoint. The profile is the solution of a small Gram system; the
  discrete Gram matrix converges to the analytic one returned by
  :func:`connection_gram`.

* **Shaping primitives.** :func:`truncate` clamps a direction pointwise in
  norm (preserving any pointwise kernel conditions exactly), and
  :func:`vanish_extension` flattens a derivative stack to zero on a collar
  next to a boundary whose jet already vanishes.

* **Pointwise tracking and window synthesis.** :func:`track` solves, by a
  damped fixed-point sweep, for a control direction whose top-order
  constraint derivatives match prescribed samples on one window of the
  trajectory decomposition, splitting the control at every node into the
  minimum-norm particular part and a free kernel part.
  :func:`synthesize_control` assembles per-window targets from a
  :class:`TargetProfile` — prescribed values on the extended contact sets,
  jet connections across the gaps — and tracks them window by window.

* **Direction generation.** :func:`approximate_strict_direction` realises a
  given critical direction as a ladder of bounded directions whose
  constraint variation vanishes on shrinking collars around the contact
  arcs, and :func:`sample_critical_directions` draws random directions lying
  exactly (to round-off) in the strict critical cone by combining batched
  linearized solves in the null space of the active-value functionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .grids import Path, TimeGrid, running_weight_matrix, trapezoid_weights
from .problems import ChainContext, DerivativeChain, ProblemSpec
from .dynamics import (Trajectory, solve_linearized, _diag_jacobians,
                       _forward_substitution, _kernel_rows)
from .structure import StructureReport

__all__ = [
    "Jet",
    "ConnectionResult",
    "connection_gram",
    "connect",
    "truncate",
    "vanish_extension",
    "TargetProfile",
    "TrackResult",
    "track",
    "SynthesisResult",
    "synthesize_control",
    "LadderStep",
    "approximate_strict_direction",
    "sample_critical_directions",
    "direction_stack",
]


# ---------------------------------------------------------------------------
# jets and connections
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Jet:
    """A one-sided derivative jet: values of orders 0..q-1 at a time point.

    Attributes:
        t: The time the jet is attached to.
        values: Array of length q with the derivative values in increasing
            order (value, first derivative, ...).
    """

    t: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("a jet needs a 1-d, nonempty value array")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "t", float(self.t))

    @property
    def order(self) -> int:
        return self.values.size


@dataclass
class ConnectionResult:
    """Outcome of a two-point jet connection.

    Attributes:
        path: Derivative-stack path on the connection span; column j holds
            the j-th derivative samples (j = 0..order), column ``order``
            being the synthesised top-order profile. Its grid is span-local
            (starts at zero); ``t_start`` holds the true left time.
        order: The jet order q.
        gram: The discrete q x q Gram matrix of the endpoint functionals.
        gram_cond: Its condition number.
        jets_residual: Largest defect of the right-endpoint jet values.
        multipliers: The Gram-system multipliers of the correction.
    """

    path: Path
    order: int
    gram: np.ndarray
    gram_cond: float
    jets_residual: float
    multipliers: np.ndarray
    t_start: float = 0.0


def connection_gram(q: int) -> np.ndarray:
    """Analytic Gram matrix of the unit-span jet-connection problem.

    For the minimum-L2-norm profile u on [0, 1] subject to the q endpoint
    functionals R_j u = int_0^1 (1-s)^(q-1-j) / (q-1-j)! u(s) ds, the Gram
    matrix is G[i, j] = 1 / ((q-1-i)! (q-1-j)! (2q-1-i-j)).
    """
    if q < 1:
        raise ValueError("jet order must be >= 1")
    g = np.empty((q, q))
    for i in range(q):
        for j in range(q):
            g[i, j] = 1.0 / (math.factorial(q - 1 - i)
                             * math.factorial(q - 1 - j) * (2 * q - 1 - i - j))
    return g


_MAX_CONNECT_ORDER = 6


def connect(left: Jet, right: Jet, n_cells: int = 64,
            nodes: Optional[np.ndarray] = None,
            base: Union[None, np.ndarray, Callable] = None,
            pin_left: Optional[float] = None,
            pin_right: Optional[float] = None) -> ConnectionResult:
    """Carry a left derivative jet into a right one with minimal effort.

    Finds the top-order profile u on [left.t, right.t] minimising the
    (weighted) discrete L2 distance to ``base`` subject to the q linear
    endpoint conditions that the iterated trapezoid integrals of u, started
    from the left jet, reproduce the right jet. The functionals are the exact
    discrete ones, so the returned stack meets the right jet to solver
    precision in the same discrete calculus.

    Args:
        left: Jet at the left endpoint (length q).
        right: Jet at the right endpoint (same length).
        n_cells: Number of uniform cells when ``nodes`` is not given.
        nodes: Optional explicit node array spanning [left.t, right.t].
        base: Optional default profile (array of node samples or callable
            of time); the correction to it is minimised. Defaults to zero.
        pin_left: Optional prescribed profile sample at the first node; a
            pinned sample is held fixed and excluded from the correction
            (used when the boundary value is owned by neighbouring data).
        pin_right: Same for the last node.

    Returns:
        A ConnectionResult whose path stacks derivatives 0..q.

    Raises:
        ValueError: Mismatched jet lengths, order above the supported cap,
            a span too short for the requested order, or bad nodes.
    """
    q = left.order
    if right.order != q:
        raise ValueError(f"jet orders differ: left {q}, right {right.order}")
    if q > _MAX_CONNECT_ORDER:
        cond = float(np.linalg.cond(connection_gram(q)))
        raise ValueError(
            f"connection order {q} exceeds the supported maximum "
            f"{_MAX_CONNECT_ORDER}: the order-{q} Gram system has condition "
            f"number {cond:.3e} and the profile would be numerically "
            "meaningless; lower the constraint order or widen the span")
    span = right.t - left.t
    if not span > 0.0:
        raise ValueError("the connection span must have positive length")
    if nodes is None:
        nodes = np.linspace(left.t, right.t, int(n_cells) + 1)
    else:
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("nodes must be a 1-d array with >= 2 entries")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        tol = 1e-9 * (1.0 + abs(span))
        if abs(nodes[0] - left.t) > tol or abs(nodes[-1] - right.t) > tol:
            raise ValueError("nodes must span exactly [left.t, right.t]")
    n_nodes = nodes.size
    n_free = n_nodes - (pin_left is not None) - (pin_right is not None)
    if n_free < q:
        raise ValueError(
            f"the span holds {n_free} free nodes but connecting order-{q} "
            f"jets needs at least {q}")

    # the machinery only sees spacings; the returned path lives on a
    # span-local grid starting at zero, with the true start in t_start
    grid = TimeGrid(nodes - nodes[0])
    cumulative = running_weight_matrix(grid)

    # endpoint functionals of the top profile: last rows of the iterated
    # cumulative-integration matrix, highest derivative first
    rows = np.empty((q, n_nodes))
    row = cumulative[-1].copy()
    rows[q - 1] = row
    for j in range(q - 2, -1, -1):
        row = row @ cumulative
        rows[j] = row

    weights = trapezoid_weights(nodes)
    if base is None:
        base_samples = np.zeros(n_nodes)
    elif callable(base):
        base_samples = np.asarray([float(base(t)) for t in nodes])
    else:
        base_samples = np.array(base, dtype=float)
        if base_samples.shape != (n_nodes,):
            raise ValueError("base profile must have one sample per node")
    inv_weights = 1.0 / weights
    if pin_left is not None:
        base_samples[0] = float(pin_left)
        inv_weights[0] = 0.0
    if pin_right is not None:
        base_samples[-1] = float(pin_right)
        inv_weights[-1] = 0.0

    # free flight of the left jet, and the gap the correction must close
    taylor = np.empty(q)
    for j in range(q):
        taylor[j] = sum(left.values[l] * span ** (l - j) / math.factorial(l - j)
                        for l in range(j, q))
    gap = right.values - taylor - rows @ base_samples

    scaled_rows = rows * inv_weights[None, :]
    gram = scaled_rows @ rows.T
    try:
        multipliers = np.linalg.solve(gram, gap)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            f"connection Gram system is singular on this span "
            f"({n_nodes - 1} cells for order {q}); widen the span") from exc
    profile = base_samples + scaled_rows.T @ multipliers

    stack = np.empty((n_nodes, q + 1))
    stack[:, q] = profile
    for j in range(q - 1, -1, -1):
        stack[:, j] = left.values[j] + cumulative @ stack[:, j + 1]
    jets_residual = float(np.max(np.abs(stack[-1, :q] - right.values)))

    return ConnectionResult(
        path=Path(grid, stack, kind="state"),
        order=q,
        gram=gram,
        gram_cond=float(np.linalg.cond(gram)),
        jets_residual=jets_residual,
        multipliers=multipliers,
        t_start=float(nodes[0]),
    )


# ---------------------------------------------------------------------------
# shaping primitives
# ---------------------------------------------------------------------------


def truncate(direction: Path, level: float) -> Path:
    """Clamp a direction pointwise to a norm level.

    Nodes whose sample norm exceeds ``level`` are scaled radially onto the
    level; all others are untouched. Scaling each node sample by a
    nonnegative factor preserves every pointwise linear kernel condition
    (M_k v_k = 0 stays exact), and ``level = 0`` returns the zero path.
    """
    if level < 0:
        raise ValueError("truncation level must be nonnegative")
    values = np.array(direction.values, dtype=float)
    norms = np.linalg.norm(values, axis=1)
    factor = np.ones_like(norms)
    above = norms > level
    factor[above] = level / norms[above]
    return Path(direction.grid, values * factor[:, None], kind=direction.kind)


def vanish_extension(stack: Path, delta: float, side: str = "left",
                     jet_tol: Optional[float] = None) -> Path:
    """Flatten a derivative stack to zero on a boundary collar.

    Requires the boundary jet (derivative orders 0..q-1 at the chosen side)
    to vanish already; zeroes the top-order column on the collar of width
    ``delta`` and rebuilds the lower columns by iterated trapezoid
    integration from an exactly-zero boundary jet. The result therefore
    vanishes identically on the collar and differs from the input only by
    the mass removed there.

    Args:
        stack: Derivative-stack path (dim q+1, column j = j-th derivative).
        delta: Collar width (in time units) measured from the boundary.
        side: "left" or "right" boundary.
        jet_tol: Largest boundary-jet magnitude still accepted as zero;
            defaults to 1e-6 relative to the stack scale.

    Raises:
        ValueError: Nonzero boundary jet, bad side, or nonpositive width.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    if not delta > 0:
        raise ValueError("collar width must be positive")
    values = np.array(stack.values, dtype=float)
    q = values.shape[1] - 1
    if q < 1:
        raise ValueError("a derivative stack needs at least two columns")
    nodes = stack.grid.nodes
    boundary = 0 if side == "left" else -1
    scale = 1.0 + float(np.max(np.abs(values[:, :q]))) if values.size else 1.0
    tol = 1e-6 * scale if jet_tol is None else float(jet_tol)
    jets = np.abs(values[boundary, :q])
    if np.max(jets) > tol:
        j = int(np.argmax(jets))
        raise ValueError(
            f"invalid argument: the {side} boundary jet must vanish before "
            f"a vanishing extension (order {j} has magnitude {jets[j]:.3e}, "
            f"tolerance {tol:.1e})")

    profile = values[:, q].copy()
    collar = np.abs(nodes - nodes[boundary]) <= delta * (1.0 + 1e-12)
    profile[collar] = 0.0

    out = np.empty_like(values)
    out[:, q] = profile
    if side == "left":
        cumulative = running_weight_matrix(stack.grid)
        for j in range(q - 1, -1, -1):
            out[:, j] = cumulative @ out[:, j + 1]
    else:
        # integrate from the right: mirror time, integrate, mirror back
        mirrored = TimeGrid(nodes[-1] - nodes[::-1])
        cumulative = running_weight_matrix(mirrored)
        col = profile[::-1]
        for j in range(q - 1, -1, -1):
            col = -(cumulative @ col)
            out[:, j] = col[::-1]
    return Path(stack.grid, out, kind=stack.kind)


# ---------------------------------------------------------------------------
# target profiles
# ---------------------------------------------------------------------------


@dataclass
class TargetProfile:
    """Prescribed constraint-variation profiles, one stack per constraint.

    Attributes:
        profiles: Maps a constraint index to a derivative-stack path on the
            full trajectory grid (dim q_i + 1); only the values on the
            extended contact set of that constraint are consumed.
    """

    profiles: Dict[int, Path]

    @classmethod
    def zero(cls, traj: Trajectory,
             chains: Sequence[DerivativeChain]) -> "TargetProfile":
        """The all-zero profile for every chained constraint."""
        grid = traj.grid
        profiles = {ch.constraint_index: Path.zeros(grid, ch.order + 1,
                                                    kind="state")
                    for ch in chains}
        return cls(profiles)

    def fd_defect(self) -> float:
        """Largest centred-difference inconsistency between stack columns.

        A valid profile has column j+1 equal to the time derivative of
        column j up to O(max spacing); this reports the worst defect for
        diagnostic use.
        """
        worst = 0.0
        for path in self.profiles.values():
            nodes = path.grid.nodes
            vals = path.values
            if nodes.size < 3:
                continue
            span = nodes[2:] - nodes[:-2]
            for j in range(vals.shape[1] - 1):
                fd = (vals[2:, j] - vals[:-2, j]) / span
                worst = max(worst, float(np.max(np.abs(fd - vals[1:-1, j + 1]))))
        return worst


# ---------------------------------------------------------------------------
# pointwise tracking on one window
# ---------------------------------------------------------------------------


@dataclass
class TrackResult:
    """Outcome of a top-order tracking sweep on one window.

    Attributes:
        v: Full-grid control direction; nodes outside the window keep the
            initial values exactly.
        residual: Final sup defect of the top-order values against the
            targets over the window.
        n_sweeps: Fixed-point sweeps performed.
        min_singular: Smallest singular value of the stacked control-
            derivative rows over the window.
        kernel_defect: Largest violation of the kernel condition by the
            supplied free part before projection.
        damped: Whether the 0.5-damped update was activated.
    """

    v: Path
    residual: float
    n_sweeps: int
    min_singular: float
    kernel_defect: float
    damped: bool


def _window_nodes(window) -> Tuple[int, int]:
    if hasattr(window, "start_node"):
        return int(window.start_node), int(window.end_node)
    a, b = window
    return int(a), int(b)


def _window_active(window, active) -> Tuple[int, ...]:
    if active is not None:
        return tuple(int(i) for i in active)
    if hasattr(window, "active"):
        return tuple(int(i) for i in window.active)
    raise ValueError("no active set: pass `active` or a structure window")


def track(spec: ProblemSpec, traj: Trajectory,
          chains: Sequence[DerivativeChain], window, active=None,
          targets=None, kernel_part=None, v_init=None, z0=None,
          tol: Optional[float] = None, max_iter: int = 120) -> TrackResult:
    """Match prescribed top-order constraint derivatives on one window.

    At every window node the stacked control-derivative rows M_k of the
    active constraints split the control update into the minimum-norm
    particular solution of M_k v_k = targets_k - (lagged remainder) and a
    projected free kernel part. The remainder (the path- and state-dependent
    part of the top-order variation) is lagged, giving a fixed-point sweep
    that inherits the Volterra structure: each sweep gains one order of the
    iterated running integral, so convergence is superlinear in practice. A
    0.5-damped update is switched on permanently the first time an undamped
    sweep increases the residual.

    Args:
        spec: Problem data.
        traj: Base trajectory.
        chains: Derivative chains (must cover the active constraints).
        window: Structure window or (start_node, end_node) pair, inclusive.
        active: Active constraint indices; defaults to the window's.
        targets: Top-order samples, shape (window length, #active) — or a
            full-grid (N+1, #active) array, which is sliced. Zero if omitted.
        kernel_part: Free control component per window node, shape (window
            length, m); its pointwise kernel projection is kept.
        v_init: Initial full-grid direction (Path or array); the prefix
            before the window is treated as fixed data, and values outside
            the window are preserved exactly.
        z0: Initial-state direction (defaults to zero).
        tol: Residual target; defaults to 1e-9 relative to the target scale.
        max_iter: Sweep budget.

    Returns:
        A TrackResult with the synthesised direction.

    Raises:
        ValueError: Missing chains, rank-deficient derivative rows, or a
            diverging/non-converging sweep.
    """
    grid = traj.grid
    n_nodes = grid.n_nodes
    m = spec.control_dim
    a, b = _window_nodes(window)
    if not (0 <= a <= b < n_nodes):
        raise ValueError(f"window nodes ({a}, {b}) outside the grid")
    act = _window_active(window, active)
    if not act:
        raise ValueError("tracking needs at least one active constraint")
    by_index = {ch.constraint_index: ch for ch in chains}
    for i in act:
        if i not in by_index:
            raise ValueError(f"incomplete problem: constraint {i} is active "
                             "but has no derivative chain")
    chain_list = [by_index[i] for i in act]
    win = np.arange(a, b + 1)
    win_len = win.size
    na = len(act)

    if targets is None:
        h = np.zeros((win_len, na))
    else:
        h = np.asarray(targets, dtype=float)
        if h.ndim == 1:
            h = h[:, None]
        if h.shape == (n_nodes, na) and n_nodes != win_len:
            h = h[a:b + 1]
        if h.shape != (win_len, na):
            raise ValueError(f"targets must have shape ({win_len}, {na})")

    if v_init is None:
        v = np.zeros((n_nodes, m))
    else:
        v = np.array(v_init.values if isinstance(v_init, Path) else v_init,
                     dtype=float)
        if v.shape != (n_nodes, m):
            raise ValueError(f"v_init must have shape ({n_nodes}, {m})")
    z0 = np.zeros(spec.state_dim) if z0 is None else \
        np.atleast_1d(np.asarray(z0, dtype=float))

    ctx = ChainContext(grid, traj.u.values, traj.y.values)

    # control-derivative rows and their pseudo-inverses, once per node
    m_rows = np.empty((win_len, na, m))
    for idx, k in enumerate(win):
        for c, ch in enumerate(chain_list):
            m_rows[idx, c] = ch.elements[ch.order].eval_du(
                ctx, int(k), ctx.u[k], ctx.y[k])
    svals = np.linalg.svd(m_rows, compute_uv=False)
    min_singular = float(np.min(svals[:, -1]))
    row_scale = 1.0 + float(np.max(svals))
    if min_singular <= 1e-10 * row_scale:
        worst = int(win[int(np.argmin(svals[:, -1]))])
        raise ValueError(
            "tracking needs uniformly independent control-derivative rows "
            f"on the window; they are rank-deficient at t = "
            f"{grid.nodes[worst]:.6g} (smallest singular value "
            f"{min_singular:.3e})")
    pinv = np.empty((win_len, m, na))
    for idx in range(win_len):
        mk = m_rows[idx]
        pinv[idx] = np.linalg.solve(mk @ mk.T, mk).T

    if kernel_part is None:
        free = np.zeros((win_len, m))
        kernel_defect = 0.0
    else:
        free = np.array(kernel_part, dtype=float)
        if free.shape == (n_nodes, m) and n_nodes != win_len:
            free = free[a:b + 1]
        if free.shape != (win_len, m):
            raise ValueError(f"kernel_part must have shape ({win_len}, {m})")
        raw = np.einsum("kim,km->ki", m_rows, free)
        kernel_defect = float(np.max(np.abs(raw))) if raw.size else 0.0
        free = free - np.einsum("kmi,ki->km", pinv, raw)

    scale = 1.0 + float(np.max(np.abs(h)))
    tol_eff = 1e-9 * scale if tol is None else float(tol)

    damped = False
    res_prev = math.inf
    res_best = math.inf
    res = math.inf
    sweeps = 0
    for sweeps in range(1, max_iter + 1):
        z = solve_linearized(spec, traj, Path(grid, v, kind="control"), z0)
        zv = z.values
        lagged = np.empty((win_len, na))
        for idx, k in enumerate(win):
            ki = int(k)
            for c, ch in enumerate(chain_list):
                lagged[idx, c] = ch.elements[ch.order].eval_dhat(
                    ctx, ki, ctx.u[ki], ctx.y[ki], zv[ki], v, zv)
        achieved = np.einsum("kim,km->ki", m_rows, v[a:b + 1]) + lagged
        res = float(np.max(np.abs(achieved - h)))
        if res <= tol_eff:
            break
        if not math.isfinite(res) or res > 1e8 * scale:
            raise ValueError(f"tracking diverged (residual {res:.3e} after "
                             f"{sweeps} sweeps)")
        if res > res_prev * (1.0 + 1e-12) and not damped:
            damped = True
        update = np.einsum("kmi,ki->km", pinv, h - lagged) + free
        if damped:
            v[a:b + 1] = 0.5 * (v[a:b + 1] + update)
        else:
            v[a:b + 1] = update
        res_prev = res
        res_best = min(res_best, res)
    else:
        raise ValueError(
            f"tracking did not converge in {max_iter} sweeps "
            f"(final residual {res:.3e}, target {tol_eff:.3e})")

    return TrackResult(v=Path(grid, v, kind="control"), residual=res,
                       n_sweeps=sweeps, min_singular=min_singular,
                       kernel_defect=kernel_defect, damped=damped)


# ---------------------------------------------------------------------------
# window-by-window control synthesis
# ---------------------------------------------------------------------------


@dataclass
class SynthesisResult:
    """Outcome of a full control synthesis.

    Attributes:
        v: Synthesised control direction on the trajectory grid.
        z: The linearized state it generates.
        residual: Largest defect of the achieved constraint variation
            against the prescribed values over all extended contact sets.
        per_constraint: Maps constraint index to its own sup defect.
        window_reports: One summary dict per tracked window.
        detail: Human-readable notes (e.g. nothing to synthesise).
    """

    v: Path
    z: Path
    residual: float
    per_constraint: Dict[int, float]
    window_reports: List[dict]
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "per_constraint": {str(k): float(val)
                               for k, val in self.per_constraint.items()},
            "windows": self.window_reports,
            "detail": self.detail,
        }


def _mask_runs(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Inclusive (start, end) node runs of a boolean mask."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    cuts = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([0], cuts + 1))
    ends = np.concatenate((cuts, [idx.size - 1]))
    return [(int(idx[s]), int(idx[e])) for s, e in zip(starts, ends)]


def _achieved_jets(ctx: ChainContext, chain: DerivativeChain, k: int,
                   v: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Directional values of chain levels 0..q-1 at node k."""
    out = np.empty(chain.order)
    for j in range(chain.order):
        out[j] = chain.elements[j].eval_dhat(
            ctx, k, ctx.u[k], ctx.y[k], z[k], v, z)
    return out


def direction_stack(spec: ProblemSpec, traj: Trajectory,
                    chain: DerivativeChain, v: np.ndarray,
                    z: np.ndarray) -> np.ndarray:
    """Directional values of all chain levels along the whole grid.

    Returns an (N+1, q+1) array: column j < q is the variation of the j-th
    constraint derivative in the direction (v, z); column q additionally
    carries the instantaneous control term of the top level.
    """
    grid = traj.grid
    ctx = ChainContext(grid, traj.u.values, traj.y.values)
    q = chain.order
    out = np.empty((grid.n_nodes, q + 1))
    for k in range(grid.n_nodes):
        for j in range(q + 1):
            out[k, j] = chain.elements[j].eval_dhat(
                ctx, k, ctx.u[k], ctx.y[k], z[k], v, z)
        out[k, q] += chain.elements[q].eval_du(
            ctx, k, ctx.u[k], ctx.y[k]) @ v[k]
    return out


def _normalize_targets(targets, chains_by_index, grid) -> Dict[int, np.ndarray]:
    if targets is None:
        return {}
    profiles = targets.profiles if isinstance(targets, TargetProfile) \
        else dict(targets)
    out = {}
    for i, stack in profiles.items():
        vals = stack.values if isinstance(stack, Path) else \
            np.asarray(stack, dtype=float)
        ch = chains_by_index.get(int(i))
        if ch is None:
            raise ValueError(f"target given for constraint {i} but no "
                             "derivative chain")
        if vals.shape != (grid.n_nodes, ch.order + 1):
            raise ValueError(
                f"target stack for constraint {i} must have shape "
                f"({grid.n_nodes}, {ch.order + 1}), got {vals.shape}")
        out[int(i)] = vals
    return out


def synthesize_control(spec: ProblemSpec, traj: Trajectory,
                       chains: Sequence[DerivativeChain],
                       report: StructureReport, targets=None, z0=None,
                       v_init=None, tol: Optional[float] = None,
                       max_iter: int = 120) -> SynthesisResult:
    """Build a control direction realising prescribed constraint variations.

    Window by window (in the trajectory decomposition), assembles top-order
    target samples for every active constraint — the prescribed stack on the
    extended contact components, minimum-norm jet connections across the
    gaps (from the achieved jets at the window start, between components,
    and down to zero at the window end) — and tracks them pointwise. The
    kernel component of the initial direction inside each window is kept, so
    synthesis only moves the control in the directions the constraints see.

    Args:
        spec: Problem data.
        traj: Base trajectory.
        chains: Derivative chains covering all active constraints.
        report: Structure report (windows and extended contact sets).
        targets: TargetProfile, or dict mapping constraint index to a
            derivative-stack Path/array on the full grid; zero if omitted.
        z0: Initial-state direction (defaults to zero).
        v_init: Starting direction; its values survive outside the tracked
            windows and its kernel component survives inside them.
        tol: Tracking tolerance per window (see :func:`track`).
        max_iter: Sweep budget per window.

    Returns:
        A SynthesisResult with the direction and its achieved defects.

    Raises:
        ValueError: Missing chains, spans too short to connect jets, or a
            prescribed profile incompatible with the achieved jets where a
            contact component leaves no room to connect.
    """
    grid = traj.grid
    n_nodes = grid.n_nodes
    nodes = grid.nodes
    m = spec.control_dim
    by_index = {ch.constraint_index: ch for ch in chains}
    target_stacks = _normalize_targets(targets, by_index, grid)

    if v_init is None:
        v = np.zeros((n_nodes, m))
    else:
        v = np.array(v_init.values if isinstance(v_init, Path) else v_init,
                     dtype=float)
        if v.shape != (n_nodes, m):
            raise ValueError(f"v_init must have shape ({n_nodes}, {m})")
    z0 = np.zeros(spec.state_dim) if z0 is None else \
        np.atleast_1d(np.asarray(z0, dtype=float))

    ctx = ChainContext(grid, traj.u.values, traj.y.values)
    window_reports: List[dict] = []
    tracked_any = False

    for window in report.windows:
        act = tuple(window.active)
        if not act:
            continue
        tracked_any = True
        a, b = int(window.start_node), int(window.end_node)
        win_len = b - a + 1
        h = np.empty((win_len, len(act)))
        z_cur = solve_linearized(spec, traj, Path(grid, v, kind="control"),
                                 z0).values

        # the lead connection is anchored one node before the window when
        # possible: there the control is fixed data, so the jets it carries
        # cannot be perturbed by the tracking update at the window nodes
        # (at the window's first node the trapezoid half-weight couples the
        # state variation to the control sample being rewritten).
        anchor = a - 1 if a > 0 else 0

        def _top_value(ch, k):
            el = ch.elements[ch.order]
            return float(
                el.eval_du(ctx, k, ctx.u[k], ctx.y[k]) @ v[k]
                + el.eval_dhat(ctx, k, ctx.u[k], ctx.y[k], z_cur[k], v,
                               z_cur))

        for c, i in enumerate(act):
            ch = by_index.get(i)
            if ch is None:
                raise ValueError(f"incomplete problem: constraint {i} is "
                                 f"active on window [{nodes[a]:.6g}, "
                                 f"{nodes[b]:.6g}] but has no derivative "
                                 "chain")
            q = ch.order
            stack = target_stacks.get(i)
            if stack is None:
                stack = np.zeros((n_nodes, q + 1))
            comp = [(max(s, a), min(e, b))
                    for s, e in _mask_runs(report.eps_mask(i))
                    if e >= a and s <= b]
            scale_i = 1.0 + float(np.max(np.abs(stack)))
            gap0_tol = max(1e-6, 10.0 * grid.max_spacing) * scale_i
            lead_jets = _achieved_jets(ctx, ch, anchor, v, z_cur)
            lead_pin = _top_value(ch, anchor) if a > 0 else None
            if not comp:
                conn = connect(Jet(nodes[anchor], lead_jets),
                               Jet(nodes[b], np.zeros(q)),
                               nodes=nodes[anchor:b + 1], pin_left=lead_pin)
                h[:, c] = conn.path.values[a - anchor:, q]
                continue
            s0 = comp[0][0]
            if s0 > a:
                conn = connect(Jet(nodes[anchor], lead_jets),
                               Jet(nodes[s0], stack[s0, :q]),
                               nodes=nodes[anchor:s0 + 1],
                               pin_left=lead_pin, pin_right=stack[s0, q])
                h[0:s0 - a, c] = conn.path.values[a - anchor:-1, q]
            else:
                jets_at = _achieved_jets(ctx, ch, a, v, z_cur)
                jump = float(np.max(np.abs(jets_at - stack[s0, :q])))
                if jump > gap0_tol:
                    raise ValueError(
                        "invalid target: the prescribed stack at t = "
                        f"{nodes[s0]:.6g} (constraint {i}) leaves no room "
                        "to connect and differs from the achieved jet "
                        f"by {jump:.3e}")
            prev_end = None
            for (s, e) in comp:
                if prev_end is not None:
                    conn = connect(Jet(nodes[prev_end], stack[prev_end, :q]),
                                   Jet(nodes[s], stack[s, :q]),
                                   nodes=nodes[prev_end:s + 1],
                                   pin_left=stack[prev_end, q],
                                   pin_right=stack[s, q])
                    h[prev_end - a + 1:s - a, c] = conn.path.values[1:-1, q]
                h[s - a:e - a + 1, c] = stack[s:e + 1, q]
                prev_end = e
            if prev_end < b:
                conn = connect(Jet(nodes[prev_end], stack[prev_end, :q]),
                               Jet(nodes[b], np.zeros(q)),
                               nodes=nodes[prev_end:b + 1],
                               pin_left=stack[prev_end, q])
                h[prev_end - a + 1:b - a + 1, c] = conn.path.values[1:, q]

        result = track(spec, traj, chains, window, active=act, targets=h,
                       kernel_part=v[a:b + 1].copy(), v_init=v, z0=z0,
                       tol=tol, max_iter=max_iter)
        v = result.v.values
        window_reports.append({
            "start": float(nodes[a]), "end": float(nodes[b]),
            "active": list(act), "residual": result.residual,
            "sweeps": result.n_sweeps, "min_singular": result.min_singular,
            "damped": result.damped,
        })

    v_path = Path(grid, v, kind="control")
    z_path = solve_linearized(spec, traj, v_path, z0)
    per_constraint: Dict[int, float] = {}
    worst = 0.0
    if spec.n_state_bounds:
        gg = np.asarray(spec.eval_g_grad(traj.y.values), dtype=float)
        achieved = np.einsum("kin,kn->ki", gg, z_path.values)
        for i in range(spec.n_state_bounds):
            mask = report.eps_mask(i)
            if not mask.any():
                continue
            stack = target_stacks.get(i)
            want = stack[:, 0] if stack is not None else np.zeros(n_nodes)
            defect = float(np.max(np.abs(achieved[mask, i] - want[mask])))
            per_constraint[i] = defect
            worst = max(worst, defect)
    detail = "" if tracked_any else \
        "no window has an active constraint; the initial direction is " \
        "returned unchanged"
    return SynthesisResult(v=v_path, z=z_path, residual=worst,
                           per_constraint=per_constraint,
                           window_reports=window_reports, detail=detail)


# ---------------------------------------------------------------------------
# strict-direction approximation ladder
# ---------------------------------------------------------------------------


@dataclass
class LadderStep:
    """One rung of the strict-direction approximation ladder.

    Attributes:
        step: Rung index k (0-based).
        delta: Collar width the constraint variation vanishes on.
        truncation_level: Pointwise norm bound applied to the seed.
        v: The synthesised direction.
        distance: Weighted L2 distance to the seed direction.
        residual: Synthesis defect on the extended contact sets.
    """

    step: int
    delta: float
    truncation_level: float
    v: Path
    distance: float
    residual: float


def approximate_strict_direction(spec: ProblemSpec, traj: Trajectory,
                                 chains: Sequence[DerivativeChain],
                                 report: StructureReport, direction: Path,
                                 z0=None, n_steps: int = 4,
                                 tol: Optional[float] = None
                                 ) -> List[LadderStep]:
    """Approximate a critical direction by strictly-flattened ones.

    Produces a ladder of directions v^k, k = 0..n_steps-1, each obtained by
    (i) truncating the seed pointwise at a level growing geometrically from
    three times its RMS size, and (ii) re-synthesising so the constraint
    variation vanishes identically on the contact arcs and on collars of
    width delta_k = eps / 2^(k+1) around them, with minimum-norm jet bridges
    to the seed's own variation outside the collars. The collar widths
    halve, the truncation loosens, and the distance to the seed decreases
    until the collars drop below the grid resolution, after which the rungs
    stabilise.

    Args:
        spec: Problem data.
        traj: Base trajectory.
        chains: Derivative chains for all constraints with contact arcs.
        report: Structure report.
        direction: The seed control direction (full grid).
        z0: Initial-state direction of the seed (defaults to zero).
        n_steps: Number of rungs.
        tol: Tracking tolerance forwarded to the synthesis.

    Returns:
        The rungs in order, each with its collar width, truncation level,
        direction, distance to the seed, and synthesis residual.
    """
    if n_steps < 1:
        raise ValueError("the ladder needs at least one rung")
    grid = traj.grid
    nodes = grid.nodes
    n_nodes = grid.n_nodes
    z0 = np.zeros(spec.state_dim) if z0 is None else \
        np.atleast_1d(np.asarray(z0, dtype=float))
    v_bar = np.asarray(direction.values, dtype=float)
    z_bar = solve_linearized(spec, traj, direction, z0).values
    weights = trapezoid_weights(nodes)
    rms = math.sqrt(float(weights @ np.sum(v_bar ** 2, axis=1))
                    / max(nodes[-1] - nodes[0], 1e-300))
    base_level = 3.0 * rms if rms > 0 else 1.0

    by_index = {ch.constraint_index: ch for ch in chains}
    seed_stacks: Dict[int, np.ndarray] = {}
    for i in range(spec.n_state_bounds):
        if not report.contact_mask(i).any():
            continue
        ch = by_index.get(i)
        if ch is None:
            raise ValueError(f"incomplete problem: constraint {i} has "
                             "contact arcs but no derivative chain")
        seed_stacks[i] = direction_stack(spec, traj, ch, v_bar, z_bar)

    steps: List[LadderStep] = []
    for k in range(n_steps):
        delta = report.eps / 2.0 ** (k + 1)
        level = base_level * 2.0 ** k
        targets: Dict[int, np.ndarray] = {}
        for i, seed in seed_stacks.items():
            ch = by_index[i]
            q = ch.order
            stack = seed.copy()
            contact = report.contact_mask(i)
            zero_mask = contact.copy()
            for (s, e) in _mask_runs(contact):
                near = np.abs(nodes - nodes[s]) <= delta * (1 + 1e-12)
                zero_mask |= near & (nodes <= nodes[s])
                near = np.abs(nodes - nodes[e]) <= delta * (1 + 1e-12)
                zero_mask |= near & (nodes >= nodes[e])
            zero_mask &= report.eps_mask(i)
            stack[zero_mask] = 0.0
            # bridge the remaining gap segments back to the seed profile
            for (ea, eb) in _mask_runs(report.eps_mask(i)):
                segs = _mask_runs(~zero_mask[ea:eb + 1])
                for (rs, re) in segs:
                    s, e = ea + rs, ea + re
                    # widen by one node on each zeroed side to anchor jets
                    left_anchor = s - 1 if s > ea else None
                    right_anchor = e + 1 if e < eb else None
                    lo = left_anchor if left_anchor is not None else s
                    hi = right_anchor if right_anchor is not None else e
                    n_free = (hi - lo + 1) - (left_anchor is not None) \
                        - (right_anchor is not None)
                    if n_free < q:
                        stack[lo:hi + 1] = 0.0
                        continue
                    left_jet = Jet(nodes[lo], np.zeros(q)
                                   if left_anchor is not None
                                   else seed[lo, :q])
                    right_jet = Jet(nodes[hi], np.zeros(q)
                                    if right_anchor is not None
                                    else seed[hi, :q])
                    # pin the profile sample on any zeroed side so the
                    # flattened stack stays trapezoid-consistent across the
                    # seam (the neighbouring zero row carries a half-weight)
                    conn = connect(left_jet, right_jet,
                                   nodes=nodes[lo:hi + 1],
                                   base=seed[lo:hi + 1, q],
                                   pin_left=0.0 if left_anchor is not None
                                   else None,
                                   pin_right=0.0 if right_anchor is not None
                                   else None)
                    stack[lo:hi + 1] = conn.path.values
            targets[i] = stack
        seed_path = Path(grid, v_bar, kind="control")
        result = synthesize_control(
            spec, traj, chains, report, targets=targets, z0=z0,
            v_init=truncate(seed_path, level), tol=tol)
        diff = result.v.values - v_bar
        distance = math.sqrt(float(weights @ np.sum(diff ** 2, axis=1)))
        steps.append(LadderStep(step=k, delta=delta, truncation_level=level,
                                v=result.v, distance=distance,
                                residual=result.residual))
    return steps


# ---------------------------------------------------------------------------
# critical-direction sampling
# ---------------------------------------------------------------------------


def _solve_linearized_batch(spec: ProblemSpec, traj: Trajectory,
                            vv: np.ndarray, zz0: np.ndarray) -> np.ndarray:
    """Linearized states for a batch of directions, shape (B, N+1, n)."""
    grid = traj.grid
    uv, yv = traj.u.values, traj.y.values
    n = spec.state_dim
    n_nodes = grid.n_nodes
    batch = vv.shape[0]
    if not spec.has_memory_kernel:
        fu, _ = _diag_jacobians(spec, grid, uv, yv)
        drive = np.einsum("kab,Bkb->kaB", fu, vv)
        z = _forward_substitution(spec, grid, uv, yv, drive, zz0.T)
        return np.moveaxis(z, 2, 0)
    fu_rows = _kernel_rows(spec, spec.eval_f_u, grid, uv, yv, n,
                           spec.control_dim)
    w_mat = running_weight_matrix(grid)
    z = np.zeros((batch, n_nodes, n))
    z[:, 0] = zz0
    if spec.f_y is None:
        for k in range(1, n_nodes):
            z[:, k] = zz0 + np.einsum("j,jab,Bjb->Ba", w_mat[k, :k + 1],
                                      fu_rows[k, :k + 1], vv[:, :k + 1])
        return z
    fy_rows = _kernel_rows(spec, spec.eval_f_y, grid, uv, yv, n, n)
    eye = np.eye(n)
    for k in range(1, n_nodes):
        wk = w_mat[k, :k + 1]
        drive = np.einsum("j,jab,Bjb->Ba", wk, fu_rows[k, :k + 1],
                          vv[:, :k + 1])
        past = np.einsum("j,jab,Bjb->Ba", wk[:k], fy_rows[k, :k], z[:, :k])
        rhs = zz0 + past + drive
        z[:, k] = np.linalg.solve(eye - wk[k] * fy_rows[k, k], rhs.T).T
    return z


def _smooth_noise(rng: np.random.Generator, shape: Tuple[int, ...],
                  window: int) -> np.ndarray:
    """White noise mildly smoothed along axis 1 (keeps linear independence)."""
    noise = rng.standard_normal(shape)
    if window <= 1:
        return noise
    kernel = np.ones(window) / window
    pad = window // 2
    padded = np.concatenate(
        (noise[:, :1].repeat(pad, axis=1), noise,
         noise[:, -1:].repeat(pad, axis=1)), axis=1)
    out = np.empty_like(noise)
    for b in range(shape[0]):
        for c in range(shape[2]):
            out[b, :, c] = np.convolve(padded[b, :, c], kernel,
                                       mode="valid")[:shape[1]]
    return out


def sample_critical_directions(spec: ProblemSpec, traj: Trajectory,
                               report: Optional[StructureReport] = None,
                               chains: Optional[Sequence[DerivativeChain]] = None,
                               n: int = 50,
                               rng: Optional[np.random.Generator] = None,
                               oversample: int = 8,
                               smooth_window: int = 5
                               ) -> List[Tuple[Path, np.ndarray]]:
    """Draw directions lying in the strict critical cone, exactly.

    Generates a batch of smoothed random candidate directions, solves all
    their linearized states at once, and combines them in the null space of
    the active-value functionals: the constraint variation at every contact
    and touch node, every endpoint equality row, and every active endpoint
    inequality row. Because the direction-to-state map is linear, the
    combined directions annihilate those functionals to round-off, so they
    satisfy the equality form of the critical-cone conditions by
    construction (and the inactive conditions vacuously).

    Args:
        spec: Problem data.
        traj: Base trajectory.
        report: Structure report; omit for problems without state
            constraints (or with no contact).
        chains: Unused for the value functionals themselves but accepted for
            interface symmetry with the other generators.
        n: Number of directions requested.
        rng: Randomness source (seeded default for reproducibility).
        oversample: Extra candidates beyond the counting bound.
        smooth_window: Moving-average width applied to the raw noise.

    Returns:
        A list of (control direction, initial-state direction) pairs, each
        normalised so the L2 norm of the control part plus the Euclidean
        norm of the state part equals one.

    Raises:
        ValueError: When fewer than ``n`` independent null directions exist
            on this grid (the grid is too coarse for the active set).
    """
    del chains  # value functionals are evaluated directly
    rng = np.random.default_rng(0) if rng is None else rng
    grid = traj.grid
    n_nodes = grid.n_nodes
    m = spec.control_dim
    n_x = spec.state_dim
    y0, y_t = traj.y.values[0], traj.y.values[-1]

    kill_nodes: List[Tuple[int, int]] = []
    if report is not None and spec.n_state_bounds:
        for i in range(spec.n_state_bounds):
            for k in np.flatnonzero(report.contact_mask(i)):
                kill_nodes.append((i, int(k)))
            for k in report.touch_nodes(i):
                if not report.contact_mask(i)[k]:
                    kill_nodes.append((i, int(k)))
    eq_rows = spec.eval_endpoint_eq_grad(y0, y_t) if spec.n_endpoint_eq \
        else np.zeros((0, 2 * n_x))
    act_tol = report.tol_active if report is not None else 1e-8
    ineq_rows = np.zeros((0, 2 * n_x))
    if spec.n_endpoint_ineq:
        vals = np.atleast_1d(spec.eval_endpoint_ineq(y0, y_t))
        active = vals >= -act_tol
        if active.any():
            ineq_rows = np.atleast_2d(
                spec.eval_endpoint_ineq_grad(y0, y_t))[active]
    n_kill = len(kill_nodes) + eq_rows.shape[0] + ineq_rows.shape[0]

    budget = (n_nodes * m + n_x)
    n_cand = min(n + n_kill + oversample, budget)
    if n_cand - n_kill < n:
        raise ValueError(
            f"cannot draw {n} independent critical directions: the grid "
            f"supports at most {budget} candidates against {n_kill} active "
            "functionals; refine the grid or request fewer directions")

    vv = _smooth_noise(rng, (n_cand, n_nodes, m), smooth_window)
    zz0 = rng.standard_normal((n_cand, n_x))
    zz = _solve_linearized_batch(spec, traj, vv, zz0)

    images = np.zeros((n_kill, n_cand))
    row = 0
    if kill_nodes:
        gg = np.asarray(spec.eval_g_grad(traj.y.values), dtype=float)
        for (i, k) in kill_nodes:
            images[row] = zz[:, k, :] @ gg[k, i]
            row += 1
    end_stack = np.concatenate((zz0, zz[:, -1, :]), axis=1)
    for r_vec in eq_rows:
        images[row] = end_stack @ r_vec
        row += 1
    for r_vec in ineq_rows:
        images[row] = end_stack @ r_vec
        row += 1

    if n_kill == 0:
        combos = np.eye(n_cand)[:n]
    else:
        _, svals, vt = np.linalg.svd(images, full_matrices=True)
        cut = (svals[0] if svals.size else 0.0) * max(images.shape) * 1e-13
        rank = int(np.sum(svals > cut))
        combos = vt[rank:]
        if combos.shape[0] < n:
            raise ValueError(
                f"only {combos.shape[0]} independent critical directions "
                f"exist on this grid (requested {n})")
        combos = combos[:n]

    weights = trapezoid_weights(grid.nodes)
    out: List[Tuple[Path, np.ndarray]] = []
    for c_vec in combos:
        v = np.einsum("B,Bkm->km", c_vec, vv)
        z0 = c_vec @ zz0
        size = math.sqrt(float(weights @ np.sum(v ** 2, axis=1))) \
            + float(np.linalg.norm(z0))
        if size < 1e-12:
            continue
        out.append((Path(grid, v / size, kind="control"), z0 / size))
    if len(out) < n:
        raise ValueError(f"only {len(out)} usable critical directions "
                         f"survived normalisation (requested {n})")
    return out
