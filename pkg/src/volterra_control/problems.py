"""Problem data model: dynamics kernel, costs, constraints, derivative chains.

A problem instance bundles user callbacks for the memory kernel f(t, s, u, y)
of the state equation

    y_t = y_0 + int_0^t f(t, s, u_s, y_s) ds,

the running cost l(u, y), the endpoint cost phi(y_0, y_T), endpoint equality
and inequality maps, and the state constraint g(y) <= 0 (componentwise).

Callback conventions (all vectorized over a leading batch axis):
    kernel family   fn(t, s, u, y): t, s shape (...,), u (..., m), y (..., n)
                    f -> (..., n);  f_u -> (..., n, m);  f_y -> (..., n, n)
                    f_uu -> (..., n, m, m); f_uy -> (..., n, m, n);
                    f_yy -> (..., n, n, n); dtau_* variants likewise
                    (dtau = partial derivative in the first time argument)
    running cost    ell(u, y) -> (...,); ell_u -> (..., m); ell_y -> (..., n)
                    ell_uu -> (..., m, m); ell_uy -> (..., m, n);
                    ell_yy -> (..., n, n)
    endpoint        phi(y0, yT) -> float; phi_grad -> (2n,); phi_hess -> (2n, 2n)
                    endpoint_eq(y0, yT) -> (sE,); _grad -> (sE, 2n);
                    _hess -> (sE, 2n, 2n); endpoint_ineq likewise (sI rows)
    state bound     g(y) -> (..., r); g_grad -> (..., r, n); g_hess -> (..., r, n, n)

Any derivative callback may be omitted (None) when it is identically zero.

Time differentiation of constraint-like quantities along trajectories is
supplied by the user as a *derivative chain*: explicit closed-form elements
for g, its first total time derivative, and so on, up to the first level
whose element depends on the instantaneous control value. The chain order and
internal consistency are checked by finite differences, never trusted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grids import TimeGrid, running_weight_matrix, tail_weight_matrix

__all__ = [
    "ProblemSpec",
    "ChainContext",
    "ChainElement",
    "DerivativeChain",
    "OrderCheck",
    "verify_order",
    "verify_commutation",
]


@dataclass
class ProblemSpec:
    """Data of one state-constrained control problem with memory dynamics.

    Attributes:
        control_dim: Dimension m of the control values.
        state_dim: Dimension n of the state values.
        horizon: Final time T.
        n_state_bounds: Number r of state constraint components (0 if none).
        n_endpoint_eq: Number of endpoint equality rows.
        n_endpoint_ineq: Number of endpoint inequality rows.
        f: Memory kernel callback (required).
        lip_f: A Lipschitz bound of f in (u, y), used in contraction estimates.
        name: Optional human-readable label.
    """

    control_dim: int
    state_dim: int
    horizon: float
    f: Callable
    f_u: Optional[Callable] = None
    f_y: Optional[Callable] = None
    f_uu: Optional[Callable] = None
    f_uy: Optional[Callable] = None
    f_yy: Optional[Callable] = None
    dtau_f: Optional[Callable] = None
    dtau_f_u: Optional[Callable] = None
    dtau_f_y: Optional[Callable] = None
    dtau_f_uu: Optional[Callable] = None
    dtau_f_uy: Optional[Callable] = None
    dtau_f_yy: Optional[Callable] = None
    ell: Optional[Callable] = None
    ell_u: Optional[Callable] = None
    ell_y: Optional[Callable] = None
    ell_uu: Optional[Callable] = None
    ell_uy: Optional[Callable] = None
    ell_yy: Optional[Callable] = None
    phi: Optional[Callable] = None
    phi_grad: Optional[Callable] = None
    phi_hess: Optional[Callable] = None
    endpoint_eq: Optional[Callable] = None
    endpoint_eq_grad: Optional[Callable] = None
    endpoint_eq_hess: Optional[Callable] = None
    endpoint_ineq: Optional[Callable] = None
    endpoint_ineq_grad: Optional[Callable] = None
    endpoint_ineq_hess: Optional[Callable] = None
    g: Optional[Callable] = None
    g_grad: Optional[Callable] = None
    g_hess: Optional[Callable] = None
    n_state_bounds: int = 0
    n_endpoint_eq: int = 0
    n_endpoint_ineq: int = 0
    lip_f: float = 1.0
    name: str = ""

    # -- zero-filled kernel evaluation helpers ------------------------------

    def _zeros(self, t, *shape) -> np.ndarray:
        return np.zeros(np.shape(t) + shape)

    def eval_f(self, t, s, u, y):
        return self.f(t, s, u, y)

    def eval_f_u(self, t, s, u, y):
        if self.f_u is None:
            return self._zeros(t, self.state_dim, self.control_dim)
        return self.f_u(t, s, u, y)

    def eval_f_y(self, t, s, u, y):
        if self.f_y is None:
            return self._zeros(t, self.state_dim, self.state_dim)
        return self.f_y(t, s, u, y)

    def eval_f_uu(self, t, s, u, y):
        if self.f_uu is None:
            return self._zeros(t, self.state_dim, self.control_dim, self.control_dim)
        return self.f_uu(t, s, u, y)

    def eval_f_uy(self, t, s, u, y):
        if self.f_uy is None:
            return self._zeros(t, self.state_dim, self.control_dim, self.state_dim)
        return self.f_uy(t, s, u, y)

    def eval_f_yy(self, t, s, u, y):
        if self.f_yy is None:
            return self._zeros(t, self.state_dim, self.state_dim, self.state_dim)
        return self.f_yy(t, s, u, y)

    def eval_dtau_f(self, t, s, u, y):
        if self.dtau_f is None:
            return self._zeros(t, self.state_dim)
        return self.dtau_f(t, s, u, y)

    def eval_dtau_f_u(self, t, s, u, y):
        if self.dtau_f_u is None:
            return self._zeros(t, self.state_dim, self.control_dim)
        return self.dtau_f_u(t, s, u, y)

    def eval_dtau_f_y(self, t, s, u, y):
        if self.dtau_f_y is None:
            return self._zeros(t, self.state_dim, self.state_dim)
        return self.dtau_f_y(t, s, u, y)

    def eval_dtau_f_uu(self, t, s, u, y):
        if self.dtau_f_uu is None:
            return self._zeros(t, self.state_dim, self.control_dim, self.control_dim)
        return self.dtau_f_uu(t, s, u, y)

    def eval_dtau_f_uy(self, t, s, u, y):
        if self.dtau_f_uy is None:
            return self._zeros(t, self.state_dim, self.control_dim, self.state_dim)
        return self.dtau_f_uy(t, s, u, y)

    def eval_dtau_f_yy(self, t, s, u, y):
        if self.dtau_f_yy is None:
            return self._zeros(t, self.state_dim, self.state_dim, self.state_dim)
        return self.dtau_f_yy(t, s, u, y)

    @property
    def has_memory_kernel(self) -> bool:
        """True when the kernel depends on its first time argument."""
        return self.dtau_f is not None

    # -- running cost helpers ------------------------------------------------

    def eval_ell(self, u, y):
        if self.ell is None:
            return np.zeros(np.shape(u)[:-1])
        return self.ell(u, y)

    def eval_ell_u(self, u, y):
        if self.ell_u is None:
            return np.zeros(np.shape(u))
        return self.ell_u(u, y)

    def eval_ell_y(self, u, y):
        if self.ell_y is None:
            return np.zeros(np.shape(y))
        return self.ell_y(u, y)

    def eval_ell_uu(self, u, y):
        if self.ell_uu is None:
            return np.zeros(np.shape(u) + (self.control_dim,))
        return self.ell_uu(u, y)

    def eval_ell_uy(self, u, y):
        if self.ell_uy is None:
            return np.zeros(np.shape(u) + (self.state_dim,))
        return self.ell_uy(u, y)

    def eval_ell_yy(self, u, y):
        if self.ell_yy is None:
            return np.zeros(np.shape(y) + (self.state_dim,))
        return self.ell_yy(u, y)

    # -- endpoint helpers ------------------------------------------------------

    def eval_phi(self, y0, yT) -> float:
        return 0.0 if self.phi is None else float(self.phi(y0, yT))

    def eval_phi_grad(self, y0, yT) -> np.ndarray:
        if self.phi_grad is None:
            return np.zeros(2 * self.state_dim)
        return np.asarray(self.phi_grad(y0, yT), dtype=float)

    def eval_phi_hess(self, y0, yT) -> np.ndarray:
        if self.phi_hess is None:
            return np.zeros((2 * self.state_dim, 2 * self.state_dim))
        return np.asarray(self.phi_hess(y0, yT), dtype=float)

    def eval_endpoint_eq(self, y0, yT) -> np.ndarray:
        if self.endpoint_eq is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self.endpoint_eq(y0, yT), dtype=float))

    def eval_endpoint_eq_grad(self, y0, yT) -> np.ndarray:
        if self.endpoint_eq_grad is None:
            return np.zeros((self.n_endpoint_eq, 2 * self.state_dim))
        return np.asarray(self.endpoint_eq_grad(y0, yT), dtype=float)

    def eval_endpoint_eq_hess(self, y0, yT) -> np.ndarray:
        if self.endpoint_eq_hess is None:
            return np.zeros((self.n_endpoint_eq, 2 * self.state_dim, 2 * self.state_dim))
        return np.asarray(self.endpoint_eq_hess(y0, yT), dtype=float)

    def eval_endpoint_ineq(self, y0, yT) -> np.ndarray:
        if self.endpoint_ineq is None:
            return np.zeros(0)
        return np.atleast_1d(np.asarray(self.endpoint_ineq(y0, yT), dtype=float))

    def eval_endpoint_ineq_grad(self, y0, yT) -> np.ndarray:
        if self.endpoint_ineq_grad is None:
            return np.zeros((self.n_endpoint_ineq, 2 * self.state_dim))
        return np.asarray(self.endpoint_ineq_grad(y0, yT), dtype=float)

    def eval_endpoint_ineq_hess(self, y0, yT) -> np.ndarray:
        if self.endpoint_ineq_hess is None:
            return np.zeros((self.n_endpoint_ineq, 2 * self.state_dim, 2 * self.state_dim))
        return np.asarray(self.endpoint_ineq_hess(y0, yT), dtype=float)

    # -- state-constraint helpers ---------------------------------------------

    def eval_g(self, y) -> np.ndarray:
        if self.g is None:
            return np.zeros(np.shape(y)[:-1] + (0,))
        return self.g(y)

    def eval_g_grad(self, y) -> np.ndarray:
        if self.g_grad is None:
            return np.zeros(np.shape(y)[:-1] + (0, self.state_dim))
        return self.g_grad(y)

    def eval_g_hess(self, y) -> np.ndarray:
        if self.g_hess is None:
            return np.zeros(np.shape(y)[:-1] + (self.n_state_bounds,
                                                self.state_dim, self.state_dim))
        return self.g_hess(y)


@dataclass
class ChainContext:
    """Frozen trajectory data that chain-element callbacks evaluate against.

    Attributes:
        grid: The time grid.
        u: Control node samples, shape (N+1, m).
        y: State node samples, shape (N+1, n).
    """

    grid: TimeGrid
    u: np.ndarray
    y: np.ndarray
    _running: np.ndarray = field(default=None, repr=False)
    _tail: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self._running is None:
            self._running = running_weight_matrix(self.grid)
        if self._tail is None:
            self._tail = tail_weight_matrix(self.grid)

    def running_integral(self, samples: np.ndarray, k: int):
        """Trapezoid integral of node samples over [0, t_k]."""
        return np.tensordot(self._running[k], samples, axes=(0, 0))

    def tail_integral(self, samples: np.ndarray, k: int):
        """Trapezoid integral of node samples over [t_k, T]."""
        return np.tensordot(self._tail[k], samples, axes=(0, 0))


@dataclass
class ChainElement:
    """One level of a derivative chain.

    Each element evaluates a scalar h(t, u~, y~, u, y) that may depend on the
    probe point (u~, y~) and, through integrals, on the whole paths (u, y)
    held by the context. Its linearizations are supplied explicitly:

    Attributes:
        value: Callback (ctx, k, u_probe, y_probe) -> float.
        du: Callback (ctx, k, u_probe, y_probe) -> (m,), the derivative in the
            probe control u~; None when identically zero.
        dhat: Callback (ctx, k, u_probe, y_probe, z_probe, v, z) -> float, the
            derivative in (y~, u, y) applied to the direction (z~, v, z) with
            v, z full node-sample arrays; None when identically zero.
    """

    value: Callable
    du: Optional[Callable] = None
    dhat: Optional[Callable] = None

    def eval_du(self, ctx: ChainContext, k: int, u_probe, y_probe) -> np.ndarray:
        if self.du is None:
            return np.zeros(ctx.u.shape[1])
        return np.atleast_1d(np.asarray(self.du(ctx, k, u_probe, y_probe), dtype=float))

    def eval_dhat(self, ctx: ChainContext, k: int, u_probe, y_probe,
                  z_probe, v, z) -> float:
        if self.dhat is None:
            return 0.0
        return float(self.dhat(ctx, k, u_probe, y_probe, z_probe, v, z))


@dataclass
class DerivativeChain:
    """Closed-form total time derivatives of one state-constraint component.

    elements[j] evaluates the j-th total derivative of g_i along trajectories;
    elements[order] is the first level with explicit dependence on the
    instantaneous control value.

    Attributes:
        constraint_index: Which component of g the chain differentiates.
        order: The declared constraint order q_i >= 1.
        elements: Tuple of ChainElement, length order + 1 (levels 0..q_i).
    """

    constraint_index: int
    order: int
    elements: Sequence[ChainElement]

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("constraint order must be >= 1")
        if len(self.elements) != self.order + 1:
            raise ValueError("need exactly order + 1 chain elements")

    def values_along(self, ctx: ChainContext, level: int) -> np.ndarray:
        """Element ``level`` evaluated along the context trajectory, shape (N+1,)."""
        el = self.elements[level]
        return np.array([el.value(ctx, k, ctx.u[k], ctx.y[k])
                         for k in range(ctx.grid.n_nodes)])


@dataclass
class OrderCheck:
    """Outcome of a chain order/consistency verification.

    Attributes:
        ok: True when the declared order and all consistency probes pass.
        order_declared: The declared order.
        failure: None, "order-overstated", "derivative-mismatch", or
            "chain-inconsistent".
        detail: Human-readable description of the first failure.
        du_norms: Max finite-difference control sensitivity per level.
        consistency: Max time finite-difference defect per level transition.
        tol: The tolerance the probes were judged against.
    """

    ok: bool
    order_declared: int
    failure: Optional[str]
    detail: str
    du_norms: np.ndarray
    consistency: np.ndarray
    tol: float


def _fd_control_sensitivity(el: ChainElement, ctx: ChainContext, k: int,
                            u_probe, y_probe, h: float) -> float:
    """Max |d value / d u~_i| at one probe point, by central differences."""
    m = ctx.u.shape[1]
    worst = 0.0
    for i in range(m):
        up = np.array(u_probe, dtype=float)
        um = np.array(u_probe, dtype=float)
        up[i] += h
        um[i] -= h
        d = (el.value(ctx, k, up, y_probe) - el.value(ctx, k, um, y_probe)) / (2 * h)
        worst = max(worst, abs(d))
    return worst


def verify_order(chain: DerivativeChain, ctx: ChainContext,
                 n_samples: int = 8, tol: Optional[float] = None,
                 rng: Optional[np.random.Generator] = None) -> OrderCheck:
    """Check a declared derivative chain against finite differences.

    Two families of probes, both with step h = max grid spacing:
      (a) control sensitivity: every element below the declared order must not
          respond to perturbations of the probe control, and the top element
          must respond somewhere;
      (b) chain consistency: the centered time difference of element j along
          the trajectory must match element j+1 at interior nodes.

    Args:
        chain: The declared chain.
        ctx: Trajectory context to probe along.
        n_samples: Number of probe nodes.
        tol: Acceptance threshold; defaults to 10 * spacing^2 * scale where
            scale is 1 + the largest element magnitude seen.
        rng: Source of probe randomness.

    Returns:
        An OrderCheck record.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    grid = ctx.grid
    n = grid.n_nodes
    h = grid.max_spacing
    q = chain.order

    interior = np.arange(1, n - 1)
    if interior.size == 0:
        raise ValueError("grid too coarse for chain verification")
    probe_nodes = rng.choice(interior, size=min(n_samples, interior.size),
                             replace=False)

    traj_values = [chain.values_along(ctx, j) for j in range(q + 1)]
    scale = 1.0 + max(float(np.max(np.abs(vals))) for vals in traj_values)
    tol_eff = 10.0 * h * h * scale if tol is None else tol

    # (a) control sensitivity per level, at trajectory and randomized probes
    du_norms = np.zeros(q + 1)
    for j in range(q + 1):
        el = chain.elements[j]
        worst = 0.0
        for k in probe_nodes:
            u_probe = ctx.u[k]
            y_probe = ctx.y[k]
            worst = max(worst, _fd_control_sensitivity(el, ctx, k, u_probe, y_probe, h))
            u_rand = u_probe + rng.standard_normal(u_probe.shape)
            worst = max(worst, _fd_control_sensitivity(el, ctx, k, u_rand, y_probe, h))
        du_norms[j] = worst

    for j in range(q):
        if du_norms[j] > tol_eff:
            return OrderCheck(
                ok=False, order_declared=q, failure="order-overstated",
                detail=(f"level {j} already responds to the probe control "
                        f"(sensitivity {du_norms[j]:.3e} > tol {tol_eff:.3e})"),
                du_norms=du_norms, consistency=np.full(q, np.nan), tol=tol_eff)

    # declared du callbacks must match the finite differences
    for j in range(q + 1):
        el = chain.elements[j]
        for k in probe_nodes:
            declared = el.eval_du(ctx, k, ctx.u[k], ctx.y[k])
            fd = np.zeros_like(declared)
            for i in range(declared.size):
                up = ctx.u[k].copy()
                um = ctx.u[k].copy()
                up[i] += h
                um[i] -= h
                fd[i] = (el.value(ctx, k, up, ctx.y[k])
                         - el.value(ctx, k, um, ctx.y[k])) / (2 * h)
            if np.max(np.abs(declared - fd)) > tol_eff:
                return OrderCheck(
                    ok=False, order_declared=q, failure="derivative-mismatch",
                    detail=(f"declared control derivative of level {j} differs "
                            f"from finite differences at node {k}"),
                    du_norms=du_norms, consistency=np.full(q, np.nan), tol=tol_eff)

    if du_norms[q] <= tol_eff:
        return OrderCheck(
            ok=False, order_declared=q, failure="order-overstated",
            detail=(f"top level {q} never responds to the probe control; "
                    "the true order exceeds the declared one"),
            du_norms=du_norms, consistency=np.full(q, np.nan), tol=tol_eff)

    # (b) chain consistency: centered time differences along the trajectory
    consistency = np.zeros(q)
    dt2 = grid.nodes[2:] - grid.nodes[:-2]
    for j in range(q):
        fd = (traj_values[j][2:] - traj_values[j][:-2]) / dt2
        consistency[j] = float(np.max(np.abs(fd - traj_values[j + 1][1:-1])))
    bad = consistency > tol_eff
    if np.any(bad):
        j = int(np.argmax(bad))
        return OrderCheck(
            ok=False, order_declared=q, failure="chain-inconsistent",
            detail=(f"time difference of level {j} mismatches level {j + 1} "
                    f"(defect {consistency[j]:.3e} > tol {tol_eff:.3e})"),
            du_norms=du_norms, consistency=consistency, tol=tol_eff)

    return OrderCheck(ok=True, order_declared=q, failure=None, detail="",
                      du_norms=du_norms, consistency=consistency, tol=tol_eff)


def verify_commutation(chain: DerivativeChain, ctx: ChainContext,
                       v: np.ndarray, z: np.ndarray,
                       levels: Optional[Sequence[int]] = None) -> float:
    """Defect of differentiation/linearization commutation along a direction.

    For each level j below the chain order, compares the centered time
    difference of t -> Dhat[level j](z_t, v, z) with the full directional
    derivative of level j+1, namely du[j+1] . v_t + Dhat[j+1](z_t, v, z).

    Args:
        chain: A verified derivative chain.
        ctx: Trajectory context.
        v: Control direction node samples, shape (N+1, m).
        z: Linearized state node samples, shape (N+1, n).
        levels: Levels to check (default: all j < order).

    Returns:
        The maximum defect over checked levels and interior nodes.
    """
    grid = ctx.grid
    n = grid.n_nodes
    v = np.asarray(v, dtype=float)
    z = np.asarray(z, dtype=float)
    levels = range(chain.order) if levels is None else levels

    worst = 0.0
    dt2 = grid.nodes[2:] - grid.nodes[:-2]
    for j in levels:
        lo = chain.elements[j]
        hi = chain.elements[j + 1]
        dhat_along = np.array([
            lo.eval_dhat(ctx, k, ctx.u[k], ctx.y[k], z[k], v, z)
            for k in range(n)])
        fd = (dhat_along[2:] - dhat_along[:-2]) / dt2
        target = np.array([
            float(hi.eval_du(ctx, k, ctx.u[k], ctx.y[k]) @ v[k])
            + hi.eval_dhat(ctx, k, ctx.u[k], ctx.y[k], z[k], v, z)
            for k in range(1, n - 1)])
        worst = max(worst, float(np.max(np.abs(fd - target))))
    return worst
