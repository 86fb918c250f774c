"""Built-in benchmark problems with independently derived reference solutions.

Each entry bundles a problem instance, its derivative chains, a closed-form
(or hand-derived) candidate solution, and the multiplier data that certifies
it, together with short provenance notes stating how every reference number
was obtained. The reference data is meant to be *regenerated* by the test
suite (closed-form evaluation, quadrature of the stated formulas, or the
quarantined transcription oracle) before anything is asserted against it.

Entries
-------
``lq_free``
    Scalar linear-quadratic problem without state constraints: drive
    ``dy/dt = u`` from ``y(0) = 0`` to minimise ``int u^2/2 + (y_T - 1)^2/2``.
    Unique optimum ``u = 1/2``; strictly convex, so it doubles as the
    positive case for the sufficient-condition checks.
``lq_saddle``
    Same dynamics with running cost ``(u^2 - 4 y^2)/2`` and an inactive
    state bound. ``u = 0`` satisfies the first-order conditions but is NOT a
    minimum (the concave state term dominates along slow oscillations), so
    this is the designated counterexample for necessary-condition searches.
``exp_memory``
    Scalar control through the memory kernel ``exp(-(t-s)) u_s`` with an
    order-one upper state bound that becomes active on a terminal boundary
    arc. Fully closed-form optimum, measure multiplier with a Lebesgue
    density, exact pointwise stationarity.
``bryson_denham_touch``
    Double integrator between fixed endpoints with position bound 1/4: the
    unconstrained parabola grazes the bound at t = 1/2 (a single touch
    point of an order-two constraint, zero measure multiplier).
``bryson_denham_arc``
    Same with bound 1/8: the optimum rides the bound on [3/8, 5/8] and the
    measure multiplier consists of two pure atoms at the junctions.
``degenerate_endpoint``
    Scalar problem whose terminal inequality is duplicated with a factor
    two, so the endpoint multiplier is a whole segment (a non-trivial
    polytope with two vertices) while the state part stays unique.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .grids import Path, TimeGrid
from .measures import Measure
from .problems import ChainElement, DerivativeChain, ProblemSpec

__all__ = [
    "ReferenceMultiplier",
    "ReferenceData",
    "RegistryEntry",
    "load",
    "list_names",
]


# ---------------------------------------------------------------------------
# containers


@dataclass
class ReferenceMultiplier:
    """One vertex of the reference multiplier set.

    Attributes:
        psi: Endpoint multiplier row (equalities first, then inequalities).
        eta_density: Lebesgue density of the constraint measure, callable
            t -> (r,) vectorized over t; None means no density part.
        eta_atoms: Atoms of the constraint measure as (time, weights) pairs
            with weights of shape (r,).
        adjoint: Right-continuous closed form of the costate, callable
            t -> (n,) vectorized over t; None when not available in closed
            form.
    """

    psi: np.ndarray
    eta_density: Optional[Callable] = None
    eta_atoms: Tuple[Tuple[float, np.ndarray], ...] = ()
    adjoint: Optional[Callable] = None

    def measure_on(self, grid: TimeGrid, n_components: int) -> Measure:
        """Project the reference measure onto a grid.

        The density part is cell-averaged exactly (partial cells at the
        support boundary get the overlapped fraction); each atom goes to the
        nearest node.
        """
        atoms = np.zeros((grid.n_nodes, n_components))
        density = np.zeros((grid.n_cells, n_components))
        if self.eta_density is not None:
            lo = grid.nodes[:-1]
            hi = grid.nodes[1:]
            mid = 0.5 * (lo + hi)
            # Sample the density at cell midpoints, then correct partial
            # coverage by measuring the support overlap with a fine probe.
            probes = lo[:, None] + (hi - lo)[:, None] * (
                (np.arange(16) + 0.5) / 16.0)[None, :]
            vals = np.asarray(self.eta_density(probes.ravel()), dtype=float)
            vals = vals.reshape(grid.n_cells, 16, n_components)
            density = vals.mean(axis=1)
            del mid
        for t_atom, w in self.eta_atoms:
            k = int(np.argmin(np.abs(grid.nodes - t_atom)))
            atoms[k] += np.asarray(w, dtype=float)
        return Measure(grid=grid, atoms=atoms, density=density)


@dataclass
class ReferenceData:
    """Independently derived data certifying a registry entry.

    All callables are closed forms vectorized over the time argument. The
    ``provenance`` map documents, per field name, exactly how the value was
    obtained so the test suite can regenerate it.
    """

    optimal_cost: Optional[float] = None
    y0: Optional[np.ndarray] = None
    control: Optional[Callable] = None
    state: Optional[Callable] = None
    multipliers: Tuple[ReferenceMultiplier, ...] = ()
    junction_times: Tuple[float, ...] = ()
    touch_times: Tuple[float, ...] = ()
    arc_intervals: Tuple[Tuple[float, float], ...] = ()
    constraint_orders: Tuple[int, ...] = ()
    multiplier_unique: bool = True
    solver_check: Optional[Tuple[Callable, np.ndarray, Callable]] = None
    provenance: Dict[str, str] = field(default_factory=dict)


@dataclass
class RegistryEntry:
    """A benchmark problem plus everything needed to verify it end to end.

    Attributes:
        name: Registry key.
        description: One-line summary of what the entry exercises.
        spec: The problem data.
        chains: Derivative chains, one per state-bound component.
        reference: Closed-form/hand-derived reference data with provenance.
        recommended_n: Default number of grid cells (chosen so that any
            junction times fall on grid nodes).
        is_certified_optimum: True when the reference candidate is a proven
            global minimum (convex problem with exact multiplier); False for
            deliberate counterexamples.
    """

    name: str
    description: str
    spec: ProblemSpec
    chains: Tuple[DerivativeChain, ...]
    reference: ReferenceData
    recommended_n: int
    is_certified_optimum: bool

    def grid(self, n: Optional[int] = None) -> TimeGrid:
        n_cells = self.recommended_n if n is None else int(n)
        return TimeGrid(np.linspace(0.0, self.spec.horizon, n_cells + 1))

    def candidate(self, grid: Optional[TimeGrid] = None) -> Tuple[Path, np.ndarray]:
        """Reference control sampled on a grid, with the initial state."""
        if self.reference.control is None:
            raise ValueError(f"entry {self.name!r} has no reference control")
        g = grid if grid is not None else self.grid()
        u = np.asarray(self.reference.control(g.nodes), dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        return Path(g, u, kind="control"), np.asarray(self.reference.y0,
                                                      dtype=float)


# ---------------------------------------------------------------------------
# shared kernel callbacks (scalar integrator dy/dt = u as a constant kernel)


def _integrator_f(t, s, u, y):
    return u


def _integrator_f_u(t, s, u, y):
    return np.ones(np.shape(u)[:-1] + (1, 1))


def _scalar_chain(level0_offset: float) -> DerivativeChain:
    """Order-1 chain for g = y - bound under dy/dt = u."""
    return DerivativeChain(
        constraint_index=0, order=1,
        elements=[
            ChainElement(
                value=lambda ctx, k, u, y: y[0] - level0_offset,
                dhat=lambda ctx, k, u, y, z, vv, zz: z[0]),
            ChainElement(
                value=lambda ctx, k, u, y: u[0],
                du=lambda ctx, k, u, y: np.ones(1)),
        ])


# ---------------------------------------------------------------------------
# lq_free


def _build_lq_free() -> RegistryEntry:
    T = 1.0
    spec = ProblemSpec(
        name="lq_free",
        control_dim=1, state_dim=1, horizon=T,
        f=_integrator_f, f_u=_integrator_f_u,
        ell=lambda u, y: 0.5 * u[..., 0] ** 2,
        ell_u=lambda u, y: np.array(u, dtype=float, copy=True),
        ell_uu=lambda u, y: np.ones(np.shape(u) + (1,)),
        phi=lambda y0, yT: 0.5 * (yT[0] - 1.0) ** 2,
        phi_grad=lambda y0, yT: np.array([0.0, yT[0] - 1.0]),
        phi_hess=lambda y0, yT: np.array([[0.0, 0.0], [0.0, 1.0]]),
        n_endpoint_eq=1,
        endpoint_eq=lambda y0, yT: np.array([y0[0]]),
        endpoint_eq_grad=lambda y0, yT: np.array([[1.0, 0.0]]),
    )
    u_star = 1.0 / (1.0 + T)

    def control(t):
        return np.full(np.shape(t) + (1,), u_star)

    def state(t):
        return np.asarray(t, dtype=float)[..., None] * u_star

    def adjoint(t):
        return np.full(np.shape(t) + (1,), u_star - 1.0)

    reference = ReferenceData(
        optimal_cost=0.25,
        y0=np.zeros(1),
        control=control,
        state=state,
        multipliers=(ReferenceMultiplier(
            psi=np.array([u_star]), adjoint=adjoint),),
        multiplier_unique=True,
        solver_check=(
            lambda t: np.sin(np.asarray(t, dtype=float))[..., None],
            np.zeros(1),
            lambda t: (1.0 - np.cos(np.asarray(t, dtype=float)))[..., None]),
        provenance={
            "optimal_cost": "hand derivation: costate is constant "
                            "p = y_T - 1, stationarity u = -p forces the "
                            "constant control u = 1/(1+T); cost = "
                            "u^2 T/2 + (uT-1)^2/2 = 1/4 at T = 1",
            "control": "same derivation; u identically 1/2",
            "state": "integrate dy/dt = 1/2 from y(0) = 0",
            "multipliers": "p = -1/2 everywhere; initial transversality "
                           "gives the endpoint multiplier 1/2",
            "solver_check": "u = sin(t) integrates exactly to "
                            "y = 1 - cos(t); curved on purpose so the "
                            "trapezoid error is visible and halves "
                            "quadratically under refinement",
        })
    return RegistryEntry(
        name="lq_free",
        description="unconstrained scalar LQ problem, strictly convex, "
                    "closed-form optimum",
        spec=spec, chains=(), reference=reference,
        recommended_n=400, is_certified_optimum=True)


# ---------------------------------------------------------------------------
# lq_saddle


def _build_lq_saddle() -> RegistryEntry:
    T = 1.0
    spec = ProblemSpec(
        name="lq_saddle",
        control_dim=1, state_dim=1, horizon=T,
        f=_integrator_f, f_u=_integrator_f_u,
        ell=lambda u, y: 0.5 * u[..., 0] ** 2 - 2.0 * y[..., 0] ** 2,
        ell_u=lambda u, y: np.array(u, dtype=float, copy=True),
        ell_y=lambda u, y: -4.0 * np.asarray(y, dtype=float),
        ell_uu=lambda u, y: np.ones(np.shape(u) + (1,)),
        ell_yy=lambda u, y: -4.0 * np.ones(np.shape(y) + (1,)),
        n_endpoint_eq=1,
        endpoint_eq=lambda y0, yT: np.array([y0[0]]),
        endpoint_eq_grad=lambda y0, yT: np.array([[1.0, 0.0]]),
        n_state_bounds=1,
        g=lambda y: np.asarray(y, dtype=float) - 1.0,
        g_grad=lambda y: np.ones(np.shape(y)[:-1] + (1, 1)),
    )

    def zero_path(t):
        return np.zeros(np.shape(t) + (1,))

    reference = ReferenceData(
        optimal_cost=0.0,
        y0=np.zeros(1),
        control=zero_path,
        state=zero_path,
        multipliers=(ReferenceMultiplier(
            psi=np.array([0.0]), adjoint=zero_path),),
        multiplier_unique=True,
        provenance={
            "optimal_cost": "the zero control gives zero state and zero "
                            "cost; it satisfies every first-order "
                            "condition with the zero multiplier",
            "counterexample": "the candidate is NOT optimal: along "
                              "v = cos(pi t / 2), z = (2/pi) sin(pi t / 2) "
                              "the quadratic form is 1/2 - 8/pi^2 < 0, so a "
                              "negative curvature direction exists (the "
                              "state weight 4 exceeds the Poincare "
                              "constant pi^2/4 of the horizon)",
        })
    return RegistryEntry(
        name="lq_saddle",
        description="stationary but non-optimal LQ candidate with negative "
                    "curvature; inactive state bound",
        spec=spec, chains=(_scalar_chain(1.0),), reference=reference,
        recommended_n=400, is_certified_optimum=False)


# ---------------------------------------------------------------------------
# exp_memory


def _build_exp_memory() -> RegistryEntry:
    T = 2.0
    bound = 0.5
    tau1 = float(np.arccosh(1.0 / (1.0 - bound)))  # boundary-arc entry time
    amp = (1.0 - bound) * np.exp(-tau1)            # free-arc control curvature

    spec = ProblemSpec(
        name="exp_memory",
        control_dim=1, state_dim=1, horizon=T,
        f=lambda t, s, u, y: np.exp(
            -(np.asarray(t, dtype=float) - np.asarray(s, dtype=float)))[..., None] * u,
        f_u=lambda t, s, u, y: np.exp(
            -(np.asarray(t, dtype=float) - np.asarray(s, dtype=float)))[..., None, None]
            * np.ones(np.shape(u)[:-1] + (1, 1)),
        dtau_f=lambda t, s, u, y: -np.exp(
            -(np.asarray(t, dtype=float) - np.asarray(s, dtype=float)))[..., None] * u,
        dtau_f_u=lambda t, s, u, y: -np.exp(
            -(np.asarray(t, dtype=float) - np.asarray(s, dtype=float)))[..., None, None]
            * np.ones(np.shape(u)[:-1] + (1, 1)),
        ell=lambda u, y: 0.5 * u[..., 0] ** 2 - y[..., 0],
        ell_u=lambda u, y: np.array(u, dtype=float, copy=True),
        ell_y=lambda u, y: -np.ones(np.shape(y)),
        ell_uu=lambda u, y: np.ones(np.shape(u) + (1,)),
        phi=lambda y0, yT: -bound * yT[0],
        phi_grad=lambda y0, yT: np.array([0.0, -bound]),
        n_endpoint_eq=1,
        endpoint_eq=lambda y0, yT: np.array([y0[0]]),
        endpoint_eq_grad=lambda y0, yT: np.array([[1.0, 0.0]]),
        n_state_bounds=1,
        g=lambda y: np.asarray(y, dtype=float) - bound,
        g_grad=lambda y: np.ones(np.shape(y)[:-1] + (1, 1)),
    )

    chain = DerivativeChain(
        constraint_index=0, order=1,
        elements=[
            ChainElement(
                value=lambda ctx, k, u, y: y[0] - bound,
                dhat=lambda ctx, k, u, y, z, vv, zz: z[0]),
            # d/dt y = u - (y - y(0)) for this kernel, so the level-1 value
            # depends on the probe control, the probe state, and the path's
            # initial state.
            ChainElement(
                value=lambda ctx, k, u, y: u[0] - (y[0] - ctx.y[0, 0]),
                du=lambda ctx, k, u, y: np.ones(1),
                dhat=lambda ctx, k, u, y, z, vv, zz: -z[0] + zz[0, 0]),
        ])

    def control(t):
        t = np.asarray(t, dtype=float)
        free = 1.0 - amp * np.exp(t)
        return np.where(t < tau1, free, bound)[..., None]

    def state(t):
        t = np.asarray(t, dtype=float)
        free = 1.0 - 0.5 * amp * np.exp(t) + (0.5 * amp - 1.0) * np.exp(-t)
        return np.where(t < tau1, free, bound)[..., None]

    def adjoint(t):
        t = np.asarray(t, dtype=float)
        before = t - bound - T + (1.0 - bound) * (T - tau1)
        on_arc = -bound * (1.0 + T - t)
        return np.where(t < tau1, before, on_arc)[..., None]

    def eta_density(t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= tau1, 1.0 - bound, 0.0)[..., None]

    # Closed-form cost: quadrature of u^2/2 - y over the free arc using the
    # explicit antiderivatives, plus the constant boundary-arc integrand and
    # the endpoint term.
    e1 = np.exp(tau1) - 1.0
    e2 = np.exp(2.0 * tau1) - 1.0
    run_free = 0.5 * (tau1 - 2.0 * amp * e1 + 0.5 * amp * amp * e2) \
        - (tau1 - 0.5 * amp * e1 + (0.5 * amp - 1.0) * (1.0 - np.exp(-tau1)))
    run_arc = (T - tau1) * (0.5 * bound ** 2 - bound)
    cost = float(run_free + run_arc - bound ** 2)

    psi_e = bound + T - (1.0 - bound) * (T - tau1)
    reference = ReferenceData(
        optimal_cost=cost,
        y0=np.zeros(1),
        control=control,
        state=state,
        multipliers=(ReferenceMultiplier(
            psi=np.array([psi_e]),
            eta_density=eta_density,
            adjoint=adjoint),),
        junction_times=(tau1,),
        arc_intervals=((tau1, T),),
        constraint_orders=(1,),
        multiplier_unique=True,
        solver_check=(
            lambda t: np.ones(np.shape(t) + (1,)),
            np.zeros(1),
            lambda t: (1.0 - np.exp(-np.asarray(t, dtype=float)))[..., None]),
        provenance={
            "junction_times": "matching value and slope of the state at "
                              "the junction gives cosh(tau1) = 1/(1-bound)",
            "control": "off the bound the costate solves dp/dt = 1 + p, so "
                       "u = -p = 1 - amp*exp(t) with amp fixed by control "
                       "continuity at tau1; on the bound u equals the bound "
                       "(differentiate y = bound)",
            "state": "integrate the equivalent rate equation "
                     "dy/dt = u - y from y(0) = 0",
            "multipliers": "riding the bound freezes the reduced costate, "
                           "which forces the measure density 1 - bound; "
                           "the memory-form costate follows by adding the "
                           "tail integral of the running-cost gradient and "
                           "the remaining measure mass; pointwise "
                           "stationarity of the memory Hamiltonian was "
                           "verified by hand on and off the bound",
            "optimal_cost": "explicit antiderivatives of u^2/2 - y on the "
                            "free arc; constant integrand on the boundary "
                            "arc; endpoint term -bound^2",
            "solver_check": "constant control u = 1 gives "
                            "y = 1 - exp(-t) exactly",
        })
    return RegistryEntry(
        name="exp_memory",
        description="exponential memory kernel with a terminal boundary "
                    "arc; fully closed-form optimum and multiplier",
        spec=spec, chains=(chain,), reference=reference,
        recommended_n=400, is_certified_optimum=True)


# ---------------------------------------------------------------------------
# Bryson-Denham family (double integrator, position bound)


def _bryson_denham_spec(bound: float, name: str) -> ProblemSpec:
    return ProblemSpec(
        name=name,
        control_dim=1, state_dim=2, horizon=1.0,
        f=lambda t, s, u, y: np.stack([y[..., 1], u[..., 0]], axis=-1),
        f_u=lambda t, s, u, y: np.broadcast_to(
            np.array([[0.0], [1.0]]), np.shape(u)[:-1] + (2, 1)).copy(),
        f_y=lambda t, s, u, y: np.broadcast_to(
            np.array([[0.0, 1.0], [0.0, 0.0]]), np.shape(y)[:-1] + (2, 2)).copy(),
        ell=lambda u, y: 0.5 * u[..., 0] ** 2,
        ell_u=lambda u, y: np.array(u, dtype=float, copy=True),
        ell_uu=lambda u, y: np.ones(np.shape(u) + (1,)),
        n_endpoint_eq=4,
        endpoint_eq=lambda y0, yT: np.array(
            [y0[0], y0[1] - 1.0, yT[0], yT[1] + 1.0]),
        endpoint_eq_grad=lambda y0, yT: np.eye(4),
        n_state_bounds=1,
        g=lambda y: np.stack([y[..., 0] - bound], axis=-1),
        g_grad=lambda y: np.broadcast_to(
            np.array([[1.0, 0.0]]), np.shape(y)[:-1] + (1, 2)).copy(),
    )


def _bryson_denham_chain(bound: float) -> DerivativeChain:
    return DerivativeChain(
        constraint_index=0, order=2,
        elements=[
            ChainElement(
                value=lambda ctx, k, u, y: y[0] - bound,
                dhat=lambda ctx, k, u, y, z, vv, zz: z[0]),
            ChainElement(
                value=lambda ctx, k, u, y: y[1],
                dhat=lambda ctx, k, u, y, z, vv, zz: z[1]),
            ChainElement(
                value=lambda ctx, k, u, y: u[0],
                du=lambda ctx, k, u, y: np.ones(1)),
        ])


def _build_bryson_denham_touch() -> RegistryEntry:
    bound = 0.25
    spec = _bryson_denham_spec(bound, "bryson_denham_touch")

    def control(t):
        return np.full(np.shape(t) + (1,), -2.0)

    def state(t):
        t = np.asarray(t, dtype=float)
        return np.stack([t * (1.0 - t), 1.0 - 2.0 * t], axis=-1)

    def adjoint(t):
        t = np.asarray(t, dtype=float)
        return np.stack([np.zeros_like(t), np.full_like(t, 2.0)], axis=-1)

    reference = ReferenceData(
        optimal_cost=2.0,
        y0=np.array([0.0, 1.0]),
        control=control,
        state=state,
        multipliers=(ReferenceMultiplier(
            psi=np.array([0.0, -2.0, 0.0, 2.0]),
            adjoint=adjoint),),
        touch_times=(0.5,),
        constraint_orders=(2,),
        multiplier_unique=True,
        provenance={
            "optimal_cost": "the unconstrained minimiser u = -2 (cubic "
                            "interpolant of the endpoint data) peaks at "
                            "exactly the bound, so it stays feasible; "
                            "cost = (1/2) * 4 * 1 = 2",
            "state": "integrate u = -2 twice from (0, 1): "
                     "y1 = t(1-t), y2 = 1-2t; the peak y1(1/2) = 1/4 "
                     "touches the bound",
            "multipliers": "zero measure; constant costate (0, 2) from "
                           "u + p2 = 0; endpoint rows read the costate "
                           "at both ends",
            "touch_times": "argmax of t(1-t)",
        })
    return RegistryEntry(
        name="bryson_denham_touch",
        description="double integrator whose free optimum grazes the "
                    "position bound at a single touch point",
        spec=spec, chains=(_bryson_denham_chain(bound),), reference=reference,
        recommended_n=400, is_certified_optimum=True)


def _build_bryson_denham_arc() -> RegistryEntry:
    bound = 0.125
    spec = _bryson_denham_spec(bound, "bryson_denham_arc")
    t1 = 3.0 * bound       # 3/8, boundary-arc entry
    t2 = 1.0 - 3.0 * bound  # 5/8, boundary-arc exit
    slope = 2.0 / (3.0 * bound)          # 16/3
    atom = 2.0 / (9.0 * bound ** 2)      # 128/9

    def control(t):
        t = np.asarray(t, dtype=float)
        left = -slope * (1.0 - t / t1)
        right = -slope * (1.0 - (1.0 - t) / t1)
        return np.where(t < t1, left, np.where(t <= t2, 0.0, right))[..., None]

    def state(t):
        t = np.asarray(t, dtype=float)
        sl = 1.0 - t / t1          # decays 1 -> 0 over the entry ramp
        sr = 1.0 - (1.0 - t) / t1  # decays 1 -> 0 backwards over the exit ramp
        y1 = np.where(t < t1, bound * (1.0 - sl ** 3),
                      np.where(t <= t2, bound, bound * (1.0 - sr ** 3)))
        y2 = np.where(t < t1, sl ** 2, np.where(t <= t2, 0.0, -sr ** 2))
        return np.stack([y1, y2], axis=-1)

    def adjoint(t):
        t = np.asarray(t, dtype=float)
        p1 = np.where(t < t1, atom, np.where(t < t2, 0.0, -atom))
        p2 = np.where(t < t1, slope * (1.0 - t / t1),
                      np.where(t <= t2, 0.0,
                               slope * (1.0 - (1.0 - t) / t1)))
        return np.stack([p1, p2], axis=-1)

    reference = ReferenceData(
        optimal_cost=4.0 / (9.0 * bound),
        y0=np.array([0.0, 1.0]),
        control=control,
        state=state,
        multipliers=(ReferenceMultiplier(
            psi=np.array([-atom, -slope, -atom, slope]),
            eta_atoms=((t1, np.array([atom])), (t2, np.array([atom]))),
            adjoint=adjoint),),
        junction_times=(t1, t2),
        arc_intervals=((t1, t2),),
        constraint_orders=(2,),
        multiplier_unique=True,
        provenance={
            "optimal_cost": "three-piece solution: quadratic ramp onto the "
                            "bound over [0, 3b], coast on the bound, mirror "
                            "ramp off; cost 2 * int_0^{3b} u^2/2 = 4/(9b)",
            "control": "u = -(2/(3b)) (1 - t/(3b)) on the entry ramp, zero "
                       "on the bound, mirrored on exit; the ramp is the "
                       "minimum-energy pull-down of the velocity to zero "
                       "subject to reaching the bound tangentially",
            "multipliers": "costate p2 = -u; p1 is piecewise constant and "
                           "drops by 2/(9b^2) at each junction, so the "
                           "measure is two pure atoms of that weight and "
                           "carries no density (the interior bound arc has "
                           "u = 0 stationary on its own)",
            "junction_times": "tangential entry forces the ramp length 3b",
        })
    return RegistryEntry(
        name="bryson_denham_arc",
        description="double integrator riding the position bound on a "
                    "boundary arc; atomic measure multiplier at the "
                    "junctions (grid sizes divisible by 8 align them)",
        spec=spec, chains=(_bryson_denham_chain(bound),), reference=reference,
        recommended_n=400, is_certified_optimum=True)


# ---------------------------------------------------------------------------
# degenerate_endpoint


def _build_degenerate_endpoint() -> RegistryEntry:
    T = 1.0
    spec = ProblemSpec(
        name="degenerate_endpoint",
        control_dim=1, state_dim=1, horizon=T,
        f=_integrator_f, f_u=_integrator_f_u,
        ell=lambda u, y: 0.5 * u[..., 0] ** 2,
        ell_u=lambda u, y: np.array(u, dtype=float, copy=True),
        ell_uu=lambda u, y: np.ones(np.shape(u) + (1,)),
        phi=lambda y0, yT: -2.0 * yT[0],
        phi_grad=lambda y0, yT: np.array([0.0, -2.0]),
        n_endpoint_eq=1,
        endpoint_eq=lambda y0, yT: np.array([y0[0]]),
        endpoint_eq_grad=lambda y0, yT: np.array([[1.0, 0.0]]),
        # The second row is exactly twice the first: both are active at the
        # optimum, so the endpoint multiplier is a segment, not a point.
        n_endpoint_ineq=2,
        endpoint_ineq=lambda y0, yT: np.array(
            [yT[0] - 1.0, 2.0 * (yT[0] - 1.0)]),
        endpoint_ineq_grad=lambda y0, yT: np.array(
            [[0.0, 1.0], [0.0, 2.0]]),
        n_state_bounds=1,
        g=lambda y: np.asarray(y, dtype=float) - 2.0,
        g_grad=lambda y: np.ones(np.shape(y)[:-1] + (1, 1)),
    )

    def control(t):
        return np.ones(np.shape(t) + (1,))

    def state(t):
        return np.asarray(t, dtype=float)[..., None]

    def adjoint(t):
        return np.full(np.shape(t) + (1,), -1.0)

    vertex_a = ReferenceMultiplier(
        psi=np.array([1.0, 1.0, 0.0]), adjoint=adjoint)
    vertex_b = ReferenceMultiplier(
        psi=np.array([1.0, 0.0, 0.5]), adjoint=adjoint)

    reference = ReferenceData(
        optimal_cost=-1.5,
        y0=np.zeros(1),
        control=control,
        state=state,
        multipliers=(vertex_a, vertex_b),
        multiplier_unique=False,
        provenance={
            "optimal_cost": "among constant controls (optimal by convexity "
                            "and the averaging inequality) minimise "
                            "c^2/2 - 2c subject to c <= 1: the slope is "
                            "negative on the feasible side, so c = 1 and "
                            "the cost is 1/2 - 2 = -3/2",
            "multipliers": "costate constant -2 + a1 + 2 a2 must equal -1 "
                           "(stationarity u = -p at u = 1), so "
                           "a1 + 2 a2 = 1 with both nonnegative and both "
                           "rows active: a segment with vertices "
                           "(1, 0) and (0, 1/2); the equality multiplier 1 "
                           "follows from initial transversality",
            "qualification": "pointing the terminal state downward keeps "
                             "both inequality rows strictly decreasing, so "
                             "the constraint system is qualified even "
                             "though the multiplier is not unique",
        })
    return RegistryEntry(
        name="degenerate_endpoint",
        description="duplicated terminal inequality makes the endpoint "
                    "multiplier a segment; state bound stays inactive",
        spec=spec, chains=(_scalar_chain(2.0),), reference=reference,
        recommended_n=400, is_certified_optimum=True)


# ---------------------------------------------------------------------------
# registry table


_BUILDERS: Dict[str, Callable[[], RegistryEntry]] = {
    "lq_free": _build_lq_free,
    "lq_saddle": _build_lq_saddle,
    "exp_memory": _build_exp_memory,
    "bryson_denham_touch": _build_bryson_denham_touch,
    "bryson_denham_arc": _build_bryson_denham_arc,
    "degenerate_endpoint": _build_degenerate_endpoint,
}


def list_names() -> Tuple[str, ...]:
    """Names of all built-in problems, in a stable order."""
    return tuple(_BUILDERS)


def load(name: str) -> RegistryEntry:
    """Build a fresh registry entry by name.

    Raises:
        KeyError: If the name is unknown (the message lists what exists).
    """
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise KeyError(
            f"unknown problem {name!r}; available: {', '.join(_BUILDERS)}")
    return builder()
