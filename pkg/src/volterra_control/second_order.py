"""Second-order analysis of certified candidates.

Four layers, all operating on a solved trajectory and certified multipliers:

* the local-max reduction of an isolated contact: ``mu_eval`` evaluates the
  window maximum, ``mu_d1``/``mu_d2`` its first and second directional
  derivatives (the second exists only when the base path has strictly
  negative curvature at the touch — "reducible");
* the quadratic form of the Lagrangian Hessian, assembled two independent
  ways (``hessian_form``): a reduced route that splits the constraint measure
  into its arc part and touch atoms, and a full-measure route that integrates
  against the whole measure and subtracts the touch correction explicitly;
  the two agree to rounding and that agreement validates the plumbing;
* critical-cone membership (``cone_membership``): sign and complementarity
  conditions on boundary arcs, at touch points and at the endpoints, the
  strict variant (equality on every contact arc), and grid-verified
  radiality (a step size sigma keeping the linearized constraint feasible);
* the verdicts: ``necessary_verdict`` (max over multiplier vertices of the
  form is nonnegative on strict critical directions), ``sufficient_verdict``
  (uniform control-Hessian positivity plus sampled form positivity plus an
  empirical quadratic-growth probe), and ``no_gap_report`` (support of the
  constraint measure versus the active set, deciding whether the strict and
  full critical cones coincide).

The form is exactly quadratic in the direction and exactly affine in the
multiplier; both properties are inherited from the assembly, not enforced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .adjoint import hamiltonian_hessian_arrays
from .dynamics import Trajectory, objective_value, solve_linearized, solve_state
from .grids import Path
from .measures import stieltjes
from .multipliers import Multiplier, MultiplierPolytope, reduced_from_eta
from .problems import ChainContext, DerivativeChain, ProblemSpec
from .structure import StructureReport

__all__ = [
    "mu_eval",
    "mu_d1",
    "mu_d2",
    "touch_slope",
    "touch_curvature",
    "QuadraticFormValue",
    "hessian_form",
    "ConeFlags",
    "cone_membership",
    "DirectionRecord",
    "QuadraticFormReport",
    "necessary_verdict",
    "SufficientReport",
    "sufficient_verdict",
    "NoGapReport",
    "no_gap_report",
]


# ---------------------------------------------------------------------------
# local-max reduction of a touch point
# ---------------------------------------------------------------------------


def _window_nodes(path: Path, tau: float, eps: float) -> np.ndarray:
    """Indices of the grid nodes inside [tau - eps, tau + eps]."""
    nodes = path.grid.nodes
    idx = np.flatnonzero(np.abs(nodes - tau) <= eps + 1e-12)
    if idx.size == 0:
        idx = np.array([path.grid.nearest_node(tau)])
    return idx


def _scalar(path: Path, what: str) -> np.ndarray:
    if path.dim != 1:
        raise ValueError(f"{what} must be a scalar path, got dim {path.dim}")
    return path.values[:, 0]


def mu_eval(x: Path, tau: float, eps: float,
            return_location: bool = False):
    """Window maximum of a scalar path over [tau - eps, tau + eps].

    Args:
        x: Scalar path.
        tau: Window center.
        eps: Window half-width.
        return_location: When True, also return the maximizing time and
            whether it lies in the open interior of the window (the operative
            check that eps was chosen small enough for the reduction).

    Returns:
        The maximum value; or (value, t_max, interior).
    """
    vals = _scalar(x, "mu_eval argument")
    idx = _window_nodes(x, tau, eps)
    j = idx[int(np.argmax(vals[idx]))]
    value = float(vals[j])
    if not return_location:
        return value
    t_max = float(x.grid.nodes[j])
    lo = max(0.0, tau - eps)
    hi = min(x.grid.horizon, tau + eps)
    interior = bool(lo < t_max < hi) or math.isclose(lo, hi)
    return value, t_max, interior


def _argmax_node(x_base: Path, tau: float, eps: float) -> int:
    vals = _scalar(x_base, "base path")
    idx = _window_nodes(x_base, tau, eps)
    return int(idx[int(np.argmax(vals[idx]))])


def mu_d1(x_base: Path, x_dir: Path, tau: float, eps: float) -> float:
    """First derivative of the window maximum along a direction.

    Equals the direction's value at the point where the base path attains
    its window maximum.
    """
    k = _argmax_node(x_base, tau, eps)
    return float(_scalar(x_dir, "direction path")[k])


def mu_d2(x_base: Path, curvature: float, x_dir: Path, tau: float, eps: float,
          slope: Optional[float] = None) -> float:
    """Second derivative of the window maximum along a direction.

    Formula: -(d/dt of the direction at the maximizer)^2 / curvature, where
    curvature is the second time derivative of the base path at the touch
    and must be strictly negative (reducible touch).

    Args:
        x_base: Base scalar path (the constraint value along the trajectory).
        curvature: Second time derivative of the base path at the touch.
        x_dir: Direction path.
        tau: Touch time.
        eps: Reduction window half-width.
        slope: Time derivative of the direction at the touch. When the
            direction is a linearized constraint value, pass the closed-form
            chain expression (``touch_slope``); a centered finite difference
            at the maximizing node is used otherwise.

    Raises:
        ValueError: When the curvature is not strictly negative (the touch
            is not reducible and the reduction does not apply).
    """
    if not (np.isfinite(curvature) and curvature < 0):
        raise ValueError(
            f"not applicable: touch at t={tau:g} is not reducible "
            f"(second time derivative {curvature:g} must be < 0)")
    if slope is None:
        k = _argmax_node(x_base, tau, eps)
        nodes = x_dir.grid.nodes
        vals = _scalar(x_dir, "direction path")
        lo = max(0, k - 1)
        hi = min(nodes.size - 1, k + 1)
        slope = float((vals[hi] - vals[lo]) / (nodes[hi] - nodes[lo]))
    return -float(slope) * float(slope) / float(curvature)


def touch_slope(chain: DerivativeChain, ctx: ChainContext, node: int,
                v: np.ndarray, z: np.ndarray) -> float:
    """Time derivative of the linearized constraint value at a node.

    Uses the chain's level-1 linearization (the closed-form expression for
    d/dt of g'(y)z along the trajectory), avoiding finite differences at the
    very point where the base path peaks.
    """
    el = chain.elements[1]
    return el.eval_dhat(ctx, node, ctx.u[node], ctx.y[node], z[node], v, z)


def touch_curvature(chain: DerivativeChain, ctx: ChainContext,
                    node: int) -> float:
    """Second total time derivative of the constraint at a node."""
    if chain.order < 2:
        raise ValueError("not applicable: the touch reduction needs a "
                         "constraint of order > 1")
    el = chain.elements[2]
    return float(el.value(ctx, node, ctx.u[node], ctx.y[node]))


# ---------------------------------------------------------------------------
# the quadratic form
# ---------------------------------------------------------------------------


@dataclass
class QuadraticFormValue:
    """One evaluation of the Lagrangian Hessian form, both assemblies.

    Attributes:
        new: Reduced-route value (arc measure + explicit touch curvature).
        old: Full-measure-route value (whole measure + touch correction).
        integral_term: Integral of the Hamiltonian Hessian against (v, z).
        endpoint_term: Endpoint-cost/constraint Hessian against (z0, z_T).
        arc_term_new: Curvature of g against the arc part of the measure.
        touch_terms_new: Per-touch contribution, reduced route.
        arc_term_old: Curvature of g against the full measure.
        touch_terms_old: Per-touch correction, full-measure route.
    """

    new: float
    old: float
    integral_term: float
    endpoint_term: float
    arc_term_new: float
    touch_terms_new: np.ndarray
    arc_term_old: float
    touch_terms_old: np.ndarray

    @property
    def agreement(self) -> float:
        """Absolute difference between the two assemblies."""
        return abs(self.new - self.old)


def _endpoint_hessian(spec: ProblemSpec, traj: Trajectory,
                      psi: np.ndarray) -> np.ndarray:
    """Hessian of phi + psi . endpoint maps in the stacked (y0, yT) variable."""
    y0, yT = traj.y0, traj.y.values[-1]
    mat = spec.eval_phi_hess(y0, yT).copy()
    s_eq = spec.n_endpoint_eq
    if s_eq:
        mat += np.tensordot(psi[:s_eq], spec.eval_endpoint_eq_hess(y0, yT),
                            axes=(0, 0))
    if spec.n_endpoint_ineq:
        mat += np.tensordot(psi[s_eq:], spec.eval_endpoint_ineq_hess(y0, yT),
                            axes=(0, 0))
    return mat


def _chains_by_index(chains: Optional[Sequence[DerivativeChain]]) -> dict:
    return {} if chains is None else {ch.constraint_index: ch for ch in chains}


def hessian_form(spec: ProblemSpec, traj: Trajectory, lam: Multiplier,
                 v: Path, z0, report: Optional[StructureReport] = None,
                 chains: Optional[Sequence[DerivativeChain]] = None,
                 z_path: Optional[Path] = None,
                 hess_arrays: Optional[Tuple] = None) -> QuadraticFormValue:
    """Evaluate the Lagrangian Hessian form at a direction, both assemblies.

    Args:
        spec: Problem data.
        traj: Base trajectory.
        lam: Certified multiplier (provides the costate, measure, and psi).
        v: Control direction.
        z0: Initial-state direction.
        report: Structure report; required when touch points exist.
        chains: Derivative chains; required when touch points exist.
        z_path: Pre-solved linearized state for (v, z0), to share across
            multiplier vertices.
        hess_arrays: Pre-computed Hamiltonian Hessian blocks for this
            multiplier's costate, to share across directions.

    Returns:
        The form value with its term-by-term breakdown.

    Raises:
        ValueError: Missing chain for a touch-carrying constraint
            (incomplete problem), or a non-reducible touch.
    """
    grid = traj.grid
    z0v = np.atleast_1d(np.asarray(z0, dtype=float))
    if z_path is None:
        z_path = solve_linearized(spec, traj, v, z0v)
    z = z_path.values
    vv = v.values

    if hess_arrays is None:
        hess_arrays = hamiltonian_hessian_arrays(spec, traj,
                                                 lam.adjoint.p_node)
    huu, huy, hyy = hess_arrays
    integrand = np.einsum("kab,ka,kb->k", huu, vv, vv)
    integrand += 2.0 * np.einsum("kab,ka,kb->k", huy, vv, z)
    integrand += np.einsum("kab,ka,kb->k", hyy, z, z)
    integral_term = float(grid.weights @ integrand)

    dir_end = np.concatenate([z0v, z[-1]])
    endpoint_term = float(
        dir_end @ _endpoint_hessian(spec, traj, lam.psi) @ dir_end)

    r = spec.n_state_bounds
    touches = report.all_touches() if report is not None else []
    if r == 0:
        base = integral_term + endpoint_term
        empty = np.zeros(0)
        return QuadraticFormValue(
            new=base, old=base, integral_term=integral_term,
            endpoint_term=endpoint_term, arc_term_new=0.0,
            touch_terms_new=empty, arc_term_old=0.0, touch_terms_old=empty)

    gh = np.asarray(spec.eval_g_hess(traj.y.values), dtype=float)
    curv = np.einsum("kiab,ka,kb->ki", gh, z, z)

    by_index = _chains_by_index(chains)
    ctx = ChainContext(grid, traj.u.values, traj.y.values)

    # full-measure route: integrate curvature against the whole measure,
    # then correct each touch by the reduction's second derivative.
    arc_term_old = 0.0
    for i in range(r):
        arc_term_old += float(stieltjes(curv[:, i], lam.eta.component(i))[0])
    touch_terms_old = np.zeros(len(touches))
    slopes = np.zeros(len(touches))
    curvatures = np.zeros(len(touches))
    for t_idx, tp in enumerate(touches):
        chain = by_index.get(tp.constraint)
        if chain is None:
            raise ValueError(
                f"incomplete problem: constraint {tp.constraint} has a touch "
                f"point at t={tp.time:g} but no derivative chain was given")
        g2 = touch_curvature(chain, ctx, tp.node)
        if not g2 < 0:
            raise ValueError(
                f"not applicable: touch at t={tp.time:g} is not reducible "
                f"(second time derivative {g2:g} must be < 0)")
        slopes[t_idx] = touch_slope(chain, ctx, tp.node, vv, z)
        curvatures[t_idx] = g2
        atom = float(lam.eta.atoms[tp.node, tp.constraint])
        touch_terms_old[t_idx] = -atom * slopes[t_idx] ** 2 / g2
    old = integral_term + endpoint_term + arc_term_old + touch_terms_old.sum()

    # reduced route: split the measure into its arc part and touch atoms,
    # integrate curvature against the arc part only, and add each touch's
    # curvature-plus-reduction term with its atom weight.
    if report is not None:
        reduced = reduced_from_eta(lam.eta, report)
        rho, nu = reduced.rho, reduced.nu
    else:
        rho, nu = lam.eta, np.zeros(0)
    arc_term_new = 0.0
    for i in range(r):
        arc_term_new += float(stieltjes(curv[:, i], rho.component(i))[0])
    touch_terms_new = np.zeros(len(touches))
    for t_idx, tp in enumerate(touches):
        mu2 = -slopes[t_idx] ** 2 / curvatures[t_idx]
        touch_terms_new[t_idx] = nu[t_idx] * (
            curv[tp.node, tp.constraint] + mu2)
    new = integral_term + endpoint_term + arc_term_new + touch_terms_new.sum()

    return QuadraticFormValue(
        new=new, old=old, integral_term=integral_term,
        endpoint_term=endpoint_term, arc_term_new=arc_term_new,
        touch_terms_new=touch_terms_new, arc_term_old=arc_term_old,
        touch_terms_old=touch_terms_old)


# ---------------------------------------------------------------------------
# critical cones
# ---------------------------------------------------------------------------


@dataclass
class ConeFlags:
    """Membership flags and margins of one direction in the critical cones.

    Attributes:
        in_c2: Critical cone (signs, complementarities, endpoint tangency).
        in_c2_strict: Critical plus equality on every contact arc.
        radial: A positive step keeps the linearized constraint feasible on
            the extended contact sets.
        radial_sigma: Largest ladder step with feasible linearization
            (inf when nothing is active, 0.0 when not radial).
        in_radial_critical: radial and in_c2.
        violations: Located descriptions of every failed condition.
        margins: Named worst-case values per condition.
    """

    in_c2: bool
    in_c2_strict: bool
    radial: bool
    radial_sigma: float
    in_radial_critical: bool
    violations: list = field(default_factory=list)
    margins: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "in_c2": self.in_c2,
            "in_c2_strict": self.in_c2_strict,
            "radial": self.radial,
            "radial_sigma": self.radial_sigma,
            "in_radial_critical": self.in_radial_critical,
            "violations": list(self.violations),
            "margins": {k: float(v) for k, v in self.margins.items()},
        }


def cone_membership(spec: ProblemSpec, traj: Trajectory, lam: Multiplier,
                    report: Optional[StructureReport], v: Path, z0,
                    tol: float = 1e-6,
                    z_path: Optional[Path] = None) -> ConeFlags:
    """Check one direction against the critical cones.

    Args:
        spec: Problem data.
        traj: Base trajectory.
        lam: Reference multiplier (supplies the measure support and psi;
            the resulting cones do not depend on which certified multiplier
            is used).
        report: Structure report (None allowed only without state bounds).
        v: Control direction.
        z0: Initial-state direction.
        tol: Acceptance tolerance for signs and equalities.
        z_path: Pre-solved linearized state, optional.

    Returns:
        ConeFlags with located violations and margins.
    """
    grid = traj.grid
    nodes = grid.nodes
    z0v = np.atleast_1d(np.asarray(z0, dtype=float))
    if z_path is None:
        z_path = solve_linearized(spec, traj, v, z0v)
    z = z_path.values

    violations = []
    margins = {}
    r = spec.n_state_bounds
    if r and report is None:
        raise ValueError("cone membership with state bounds needs a "
                         "structure report")

    # ---- boundary-arc conditions -----------------------------------------
    sign_viol = 0.0
    supp_viol = 0.0
    strict_viol = 0.0
    if r:
        gg = np.asarray(spec.eval_g_grad(traj.y.values), dtype=float)
        gz = np.einsum("kia,ka->ki", gg, z)
        atoms = lam.eta.atoms
        dens = lam.eta.density
        mass_scale = 0.0
        if atoms.size:
            mass_scale = max(mass_scale, float(np.max(np.abs(atoms))))
        if dens.size:
            mass_scale = max(mass_scale, float(np.max(np.abs(dens))))
        support_tol = 1e-8 * (1.0 + mass_scale)
        for i in range(r):
            mask = report.contact_mask(i)
            idx = np.flatnonzero(mask)
            if idx.size:
                worst = int(idx[np.argmax(gz[idx, i])])
                val = float(gz[worst, i])
                sign_viol = max(sign_viol, val)
                if val > tol:
                    violations.append(
                        f"constraint {i}: linearized value {val:.3e} > 0 at "
                        f"t={nodes[worst]:.6g} on a contact arc")
                sv = float(np.max(np.abs(gz[idx, i])))
                strict_viol = max(strict_viol, sv)
                # equality where the measure actually sits
                sup_nodes = set(np.flatnonzero(
                    (np.abs(atoms[:, i]) > support_tol) & mask).tolist())
                cell_idx = np.flatnonzero(
                    (np.abs(dens[:, i]) > support_tol)
                    & mask[:-1] & mask[1:])
                for j in cell_idx:
                    sup_nodes.add(int(j))
                    sup_nodes.add(int(j) + 1)
                for k in sorted(sup_nodes):
                    val = abs(float(gz[k, i]))
                    supp_viol = max(supp_viol, val)
                    if val > tol:
                        violations.append(
                            f"constraint {i}: |linearized value| {val:.3e} "
                            f"> 0 at t={nodes[k]:.6g} where the measure has "
                            "mass (complementarity)")
    margins["contact_sign"] = sign_viol
    margins["support_equality"] = supp_viol
    margins["strict_equality"] = strict_viol

    # ---- touch-point conditions -------------------------------------------
    touch_sign = 0.0
    touch_compl = 0.0
    if r and report is not None:
        for tp in report.all_touches():
            val = float(gz[tp.node, tp.constraint])
            touch_sign = max(touch_sign, val)
            if val > tol:
                violations.append(
                    f"constraint {tp.constraint}: linearized value "
                    f"{val:.3e} > 0 at the touch t={tp.time:.6g}")
            atom = float(lam.eta.atoms[tp.node, tp.constraint])
            cval = abs(atom * val)
            touch_compl = max(touch_compl, cval)
            if cval > tol * (1.0 + abs(atom)):
                violations.append(
                    f"constraint {tp.constraint}: touch complementarity "
                    f"|{atom:.3e} * {val:.3e}| > 0 at t={tp.time:.6g}")
    margins["touch_sign"] = touch_sign
    margins["touch_complementarity"] = touch_compl

    # ---- endpoint conditions -----------------------------------------------
    y0, yT = traj.y0, traj.y.values[-1]
    dir_end = np.concatenate([z0v, z[-1]])
    eq_viol = 0.0
    if spec.n_endpoint_eq:
        vals = spec.eval_endpoint_eq_grad(y0, yT) @ dir_end
        eq_viol = float(np.max(np.abs(vals)))
        if eq_viol > tol:
            j = int(np.argmax(np.abs(vals)))
            violations.append(
                f"endpoint equality row {j}: derivative value "
                f"{vals[j]:.3e} != 0")
    in_viol = 0.0
    psi_pair = 0.0
    s_eq = spec.n_endpoint_eq
    active_tol = report.tol_active if report is not None else tol
    if spec.n_endpoint_ineq:
        phi_in = spec.eval_endpoint_ineq(y0, yT)
        rows = spec.eval_endpoint_ineq_grad(y0, yT)
        vals = rows @ dir_end
        for j in range(spec.n_endpoint_ineq):
            if phi_in[j] >= -active_tol:
                in_viol = max(in_viol, float(vals[j]))
                if vals[j] > tol:
                    violations.append(
                        f"endpoint inequality row {j}: active but the "
                        f"derivative value {vals[j]:.3e} > 0")
    pairing = float(lam.psi[:s_eq] @ (spec.eval_endpoint_eq_grad(y0, yT)
                                      @ dir_end)) if s_eq else 0.0
    if spec.n_endpoint_ineq:
        pairing += float(lam.psi[s_eq:] @ (
            spec.eval_endpoint_ineq_grad(y0, yT) @ dir_end))
    psi_pair = abs(pairing)
    psi_scale = 1.0 + float(np.sum(np.abs(lam.psi)))
    if psi_pair > tol * psi_scale:
        violations.append(
            f"endpoint multiplier pairing {pairing:.3e} != 0")
    margins["endpoint_equality"] = eq_viol
    margins["endpoint_tangent"] = in_viol
    margins["psi_orthogonality"] = psi_pair

    in_c2 = (sign_viol <= tol and supp_viol <= tol and touch_sign <= tol
             and touch_compl <= tol * psi_scale and eq_viol <= tol
             and in_viol <= tol and psi_pair <= tol * psi_scale)
    in_c2_strict = in_c2 and strict_viol <= tol

    # ---- radiality: geometric ladder over the step size ---------------------
    radial = False
    radial_sigma = 0.0
    radial_worst = 0.0
    if r:
        gvals = np.asarray(spec.eval_g(traj.y.values), dtype=float)
        any_ext = False
        feas = []
        for i in range(r):
            idx = np.flatnonzero(report.eps_mask(i))
            if idx.size:
                any_ext = True
                feas.append((gvals[idx, i], gz[idx, i]))
        if not any_ext:
            radial, radial_sigma = True, math.inf
        else:
            for sigma in 2.0 ** np.arange(0, -41, -1):
                worst = max(float(np.max(g + sigma * d)) for g, d in feas)
                if worst <= tol:
                    radial, radial_sigma, radial_worst = True, float(sigma), worst
                    break
            if not radial:
                radial_worst = max(float(np.max(g + (2.0 ** -40) * d))
                                   for g, d in feas)
                violations.append(
                    "not radial: no ladder step keeps the linearized "
                    f"constraint feasible (residual {radial_worst:.3e} at "
                    "sigma=2^-40)")
    else:
        radial, radial_sigma = True, math.inf
    margins["radial_residual"] = radial_worst

    return ConeFlags(
        in_c2=in_c2, in_c2_strict=in_c2_strict, radial=radial,
        radial_sigma=radial_sigma, in_radial_critical=radial and in_c2,
        violations=violations, margins=margins)


# ---------------------------------------------------------------------------
# necessary conditions
# ---------------------------------------------------------------------------


@dataclass
class DirectionRecord:
    """Evaluation of one direction against every multiplier vertex.

    Attributes:
        values: Form values per vertex (reduced-route assembly).
        values_old: Same, full-measure-route assembly.
        max_value: Maximum over vertices.
        argmax_vertex: Index of a maximizing vertex.
        ok: max_value >= -tol.
        agreement: Worst assembly disagreement across vertices.
        touch_contributions: Per-touch reduced-route term at the argmax
            vertex.
        cones: Cone-membership flags of the direction (when computed).
    """

    values: np.ndarray
    values_old: np.ndarray
    max_value: float
    argmax_vertex: int
    ok: bool
    agreement: float
    touch_contributions: np.ndarray
    cones: Optional[ConeFlags] = None

    def to_dict(self) -> dict:
        return {
            "values": [float(x) for x in self.values],
            "values_old": [float(x) for x in self.values_old],
            "max_value": float(self.max_value),
            "argmax_vertex": int(self.argmax_vertex),
            "ok": bool(self.ok),
            "agreement": float(self.agreement),
            "touch_contributions": [float(x)
                                    for x in self.touch_contributions],
            "cones": None if self.cones is None else self.cones.to_dict(),
        }


@dataclass
class QuadraticFormReport:
    """Per-direction table of the second-order necessary check.

    Attributes:
        directions: One DirectionRecord per tested direction.
        ok: Every direction passed (vacuously true when none were given).
        vacuous: No directions were supplied.
        worst_value: Smallest max-over-vertices value seen.
        worst_direction: Its index.
        agreement: Worst assembly disagreement across everything.
        tol: Acceptance tolerance.
    """

    directions: list
    ok: bool
    vacuous: bool
    worst_value: float
    worst_direction: int
    agreement: float
    tol: float

    def to_dict(self) -> dict:
        return {
            "ok": bool(self.ok),
            "vacuous": bool(self.vacuous),
            "worst_value": float(self.worst_value),
            "worst_direction": int(self.worst_direction),
            "agreement": float(self.agreement),
            "tol": float(self.tol),
            "directions": [d.to_dict() for d in self.directions],
        }


def necessary_verdict(spec: ProblemSpec, traj: Trajectory,
                      polytope: MultiplierPolytope,
                      directions: Sequence[Tuple[Path, np.ndarray]],
                      report: Optional[StructureReport] = None,
                      chains: Optional[Sequence[DerivativeChain]] = None,
                      tol: float = 1e-6,
                      check_cones: bool = False) -> QuadraticFormReport:
    """Second-order necessary check over a set of strict critical directions.

    For each direction the form is evaluated at every multiplier vertex; the
    form is affine in the multiplier, so its maximum over the whole
    multiplier set is attained at a vertex. The direction passes when that
    maximum is >= -tol.

    Args:
        spec, traj: Problem and base trajectory.
        polytope: Estimated multiplier polytope (needs >= 1 vertex).
        directions: Sequence of (v, z0) pairs, members of the strict
            critical cone.
        report, chains: Structure data, required when touch points exist.
        tol: Acceptance tolerance.
        check_cones: Also record cone membership per direction.

    Returns:
        QuadraticFormReport; vacuously ok when no directions are given.
    """
    if not polytope.vertices:
        raise ValueError("no multiplier vertices available: estimate the "
                         "polytope first (it reported infeasible?)")
    directions = list(directions)
    if not directions:
        return QuadraticFormReport(
            directions=[], ok=True, vacuous=True, worst_value=math.inf,
            worst_direction=-1, agreement=0.0, tol=tol)

    hess_cache = [
        hamiltonian_hessian_arrays(spec, traj, vx.multiplier.adjoint.p_node)
        for vx in polytope.vertices
    ]
    lam0 = polytope.vertices[0].multiplier
    records = []
    for v, z0 in directions:
        z0v = np.atleast_1d(np.asarray(z0, dtype=float))
        z_path = solve_linearized(spec, traj, v, z0v)
        vals_new, vals_old, agreements, touch_list = [], [], [], []
        for vx, ha in zip(polytope.vertices, hess_cache):
            qf = hessian_form(spec, traj, vx.multiplier, v, z0v,
                              report=report, chains=chains, z_path=z_path,
                              hess_arrays=ha)
            vals_new.append(qf.new)
            vals_old.append(qf.old)
            agreements.append(qf.agreement)
            touch_list.append(qf.touch_terms_new)
        vals_new = np.asarray(vals_new)
        vals_old = np.asarray(vals_old)
        jmax = int(np.argmax(vals_new))
        cones = None
        if check_cones:
            cones = cone_membership(spec, traj, lam0, report, v, z0v,
                                    tol=tol, z_path=z_path)
        records.append(DirectionRecord(
            values=vals_new, values_old=vals_old,
            max_value=float(vals_new[jmax]), argmax_vertex=jmax,
            ok=bool(vals_new[jmax] >= -tol),
            agreement=float(np.max(agreements)),
            touch_contributions=touch_list[jmax], cones=cones))

    worst = int(np.argmin([rec.max_value for rec in records]))
    return QuadraticFormReport(
        directions=records,
        ok=all(rec.ok for rec in records),
        vacuous=False,
        worst_value=records[worst].max_value,
        worst_direction=worst,
        agreement=max(rec.agreement for rec in records),
        tol=tol)


# ---------------------------------------------------------------------------
# sufficient conditions
# ---------------------------------------------------------------------------


def _legendre_alpha(spec: ProblemSpec, traj: Trajectory,
                    p_node: np.ndarray) -> float:
    """Smallest eigenvalue of the control Hessian of H along the grid."""
    huu, _, _ = hamiltonian_hessian_arrays(spec, traj, p_node)
    sym = 0.5 * (huu + np.swapaxes(huu, 1, 2))
    return float(np.min(np.linalg.eigvalsh(sym)))


@dataclass
class SufficientReport:
    """Outcome of the sufficient-conditions check.

    Attributes:
        holds: Uniform control-Hessian positivity and sampled positivity of
            the form both hold.
        legendre_alpha: Best uniform lower eigenvalue bound over vertices.
        legendre_vertex: Vertex attaining it.
        min_form_value: Smallest form value over the sampled normalized
            critical directions (at the Legendre vertex).
        min_form_direction: Its index; -1 when no directions were available.
        n_directions: Number of directions tested.
        growth_beta: Empirical quadratic-growth constant (2 dJ / sigma^2
            minimized over accepted feasible perturbations); nan when none
            were accepted.
        growth_checked: Number of accepted feasible perturbations.
        growth_skipped: Perturbations discarded as infeasible.
        detail: Diagnostics.
    """

    holds: bool
    legendre_alpha: float
    legendre_vertex: int
    min_form_value: float
    min_form_direction: int
    n_directions: int
    growth_beta: float
    growth_checked: int
    growth_skipped: int
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "holds": bool(self.holds),
            "legendre_alpha": float(self.legendre_alpha),
            "legendre_vertex": int(self.legendre_vertex),
            "min_form_value": float(self.min_form_value),
            "min_form_direction": int(self.min_form_direction),
            "n_directions": int(self.n_directions),
            "growth_beta": float(self.growth_beta),
            "growth_checked": int(self.growth_checked),
            "growth_skipped": int(self.growth_skipped),
            "detail": self.detail,
        }


def _perturbation_feasible(spec: ProblemSpec, traj_p: Trajectory,
                           feas_tol: float) -> bool:
    if spec.n_state_bounds:
        g = np.asarray(spec.eval_g(traj_p.y.values), dtype=float)
        if float(np.max(g)) > feas_tol:
            return False
    y0, yT = traj_p.y0, traj_p.y.values[-1]
    if spec.n_endpoint_eq:
        if float(np.max(np.abs(spec.eval_endpoint_eq(y0, yT)))) > feas_tol:
            return False
    if spec.n_endpoint_ineq:
        if float(np.max(spec.eval_endpoint_ineq(y0, yT))) > feas_tol:
            return False
    return True


def sufficient_verdict(spec: ProblemSpec, traj: Trajectory,
                       polytope: MultiplierPolytope,
                       report: Optional[StructureReport] = None,
                       chains: Optional[Sequence[DerivativeChain]] = None,
                       directions: Optional[Sequence] = None,
                       sample_size: int = 50,
                       growth_radius: float = 1e-2,
                       tol: float = 1e-6,
                       rng: Optional[np.random.Generator] = None
                       ) -> SufficientReport:
    """Sufficient-conditions check: uniform convexity in the control, sampled
    positivity of the form, and an empirical quadratic-growth probe.

    Args:
        spec, traj, polytope: As in necessary_verdict.
        report, chains: Structure data for touch terms and feasibility.
        directions: Critical directions to test; sampled via the synthesis
            module when omitted.
        sample_size: Number of directions to sample / growth probes to run.
        growth_radius: Perturbation distance for the growth probe.
        tol: Positivity threshold.
        rng: Randomness source.

    Returns:
        SufficientReport. ``holds`` needs a positive uniform control-Hessian
        bound and positive form values on all sampled directions; the growth
        probe is reported alongside.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    if not polytope.vertices:
        raise ValueError("no multiplier vertices available")

    alphas = [_legendre_alpha(spec, traj, vx.multiplier.adjoint.p_node)
              for vx in polytope.vertices]
    j_alpha = int(np.argmax(alphas))
    legendre_alpha = float(alphas[j_alpha])
    lam = polytope.vertices[j_alpha].multiplier

    if directions is None:
        from .synthesis import sample_critical_directions
        directions = sample_critical_directions(
            spec, traj, report, chains, n=sample_size, rng=rng)
    directions = list(directions)

    hess = hamiltonian_hessian_arrays(spec, traj, lam.adjoint.p_node)
    min_val, min_idx = math.inf, -1
    normalized = []
    for idx, (v, z0) in enumerate(directions):
        z0v = np.atleast_1d(np.asarray(z0, dtype=float))
        scale = v.l2_norm() + float(np.linalg.norm(z0v))
        if scale <= 1e-14:
            continue
        v_n = Path(traj.grid, v.values / scale, kind="control")
        z0_n = z0v / scale
        normalized.append((v_n, z0_n))
        qf = hessian_form(spec, traj, lam, v_n, z0_n, report=report,
                          chains=chains, hess_arrays=hess)
        if qf.new < min_val:
            min_val, min_idx = qf.new, idx

    base_cost = objective_value(spec, traj)
    feas_tol = report.tol_active if report is not None else max(tol, 1e-8)
    beta, checked, skipped = math.inf, 0, 0
    for v_n, z0_n in normalized[:sample_size]:
        sigma = growth_radius
        accepted = None
        for _ in range(10):
            u_p = Path(traj.grid, traj.u.values + sigma * v_n.values,
                       kind="control")
            traj_p = solve_state(spec, u_p, traj.y0 + sigma * z0_n,
                                 tol=1e-12)
            if _perturbation_feasible(spec, traj_p, feas_tol):
                accepted = (traj_p, sigma)
                break
            sigma *= 0.5
        if accepted is None:
            skipped += 1
            continue
        traj_p, sigma = accepted
        d_cost = objective_value(spec, traj_p) - base_cost
        beta = min(beta, 2.0 * d_cost / sigma ** 2)
        checked += 1
    if checked == 0:
        beta = math.nan

    lc_ok = legendre_alpha > tol
    pos_ok = (min_idx == -1) or (min_val > 0.0)
    detail = []
    if not lc_ok:
        detail.append(f"control Hessian not uniformly positive "
                      f"(alpha={legendre_alpha:.3e})")
    if not pos_ok:
        detail.append(f"form value {min_val:.3e} <= 0 on sampled direction "
                      f"{min_idx}")
    if min_idx == -1:
        detail.append("no nonzero critical directions sampled; positivity "
                      "vacuous")
    return SufficientReport(
        holds=lc_ok and pos_ok,
        legendre_alpha=legendre_alpha, legendre_vertex=j_alpha,
        min_form_value=float(min_val) if min_idx != -1 else math.inf,
        min_form_direction=min_idx, n_directions=len(normalized),
        growth_beta=float(beta), growth_checked=checked,
        growth_skipped=skipped, detail="; ".join(detail))


# ---------------------------------------------------------------------------
# no-gap summary
# ---------------------------------------------------------------------------


@dataclass
class NoGapReport:
    """Support-condition and interior-multiplier summary.

    Attributes:
        support_ok: Some vertex's measure covers the whole active set of
            every constraint (arcs and touch points).
        support_vertex: A covering vertex index (-1 when none).
        strict_cone_equals: The strict and full critical cones coincide:
            either some vertex covers every contact arc (complementarity
            then forces equality on the arcs), or no contact arcs exist at
            all, making the strictness condition vacuous.
        interior_alpha: Control-Hessian lower bound at the vertex average
            (a relative-interior multiplier).
        interior_lc_ok: interior_alpha > tol.
        verdict: Combined summary string.
        detail: Per-constraint diagnostics.
    """

    support_ok: bool
    support_vertex: int
    strict_cone_equals: bool
    interior_alpha: float
    interior_lc_ok: bool
    verdict: str
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "support_ok": bool(self.support_ok),
            "support_vertex": int(self.support_vertex),
            "strict_cone_equals": bool(self.strict_cone_equals),
            "interior_alpha": float(self.interior_alpha),
            "interior_lc_ok": bool(self.interior_lc_ok),
            "verdict": self.verdict,
            "detail": self.detail,
        }


def _vertex_support_covers(eta, nodes_needed: dict, support_tol: float):
    """Check that a measure puts mass at every required node.

    nodes_needed maps constraint index -> iterable of node indices. A node
    is covered by an atom there or by a neighboring cell density.
    """
    uncovered = []
    atoms, dens = eta.atoms, eta.density
    n_cells = dens.shape[0]
    for i, nodes in nodes_needed.items():
        for k in nodes:
            ok = abs(atoms[k, i]) > support_tol
            if not ok and k > 0:
                ok = abs(dens[k - 1, i]) > support_tol
            if not ok and k < n_cells:
                ok = abs(dens[k, i]) > support_tol
            if not ok:
                uncovered.append((i, int(k)))
    return uncovered


def no_gap_report(spec: ProblemSpec, traj: Trajectory,
                  polytope: MultiplierPolytope,
                  report: StructureReport,
                  necessary: Optional[QuadraticFormReport] = None,
                  sufficient: Optional[SufficientReport] = None,
                  tol: float = 1e-6) -> NoGapReport:
    """Summarize whether matching necessary/sufficient conditions apply.

    Two separate facts are reported. ``support_ok`` asks whether some
    multiplier vertex puts mass everywhere the constraint is active — arcs
    and touch points alike; a touch point whose atom is zero leaves the
    active set uncovered and is reported as such. ``strict_cone_equals`` is
    the weaker fact actually needed for the gap to close: coverage of the
    contact arcs alone (equality on the arcs then follows from
    complementarity), or no arcs at all.

    Args:
        spec, traj, polytope, report: As elsewhere.
        necessary, sufficient: Verdicts to fold into the summary when
            already computed.
        tol: Threshold for the interior control-Hessian bound.
    """
    if not polytope.vertices:
        raise ValueError("no multiplier vertices available")
    r = spec.n_state_bounds

    arcs_needed = {}
    full_needed = {}
    for i in range(r):
        contact = np.flatnonzero(report.contact_mask(i)).tolist()
        arcs_needed[i] = contact
        full_needed[i] = contact + report.touch_nodes(i)

    support_ok, support_vertex = False, -1
    arcs_ok = all(len(v) == 0 for v in arcs_needed.values())
    detail = []
    for j, vx in enumerate(polytope.vertices):
        eta = vx.multiplier.eta
        mass = max(
            float(np.max(np.abs(eta.atoms))) if eta.atoms.size else 0.0,
            float(np.max(np.abs(eta.density))) if eta.density.size else 0.0)
        stol = 1e-8 * (1.0 + mass)
        unc_full = _vertex_support_covers(eta, full_needed, stol)
        unc_arcs = _vertex_support_covers(eta, arcs_needed, stol)
        if not unc_full and not support_ok:
            support_ok, support_vertex = True, j
        if not unc_arcs:
            arcs_ok = True
        if unc_full and j == 0:
            nodes = traj.grid.nodes
            spots = ", ".join(
                f"constraint {i} at t={nodes[k]:.6g}" for i, k in
                unc_full[:4])
            more = "" if len(unc_full) <= 4 else f" (+{len(unc_full) - 4})"
            detail.append(f"vertex 0 leaves the active set uncovered: "
                          f"{spots}{more}")

    no_arcs = all(len(v) == 0 for v in arcs_needed.values())
    strict_cone_equals = arcs_ok or no_arcs
    if no_arcs and r and any(len(v) for v in full_needed.values()):
        detail.append("activity is touch points only: the strictness "
                      "condition is vacuous, but the touch points carry no "
                      "measure and stay uncovered")

    # relative-interior multiplier: the vertex average (the reconstruction
    # map is affine, so averaging measures and psi matches averaging
    # multipliers)
    etas = [vx.multiplier.eta for vx in polytope.vertices]
    psi_avg = np.mean([vx.multiplier.psi for vx in polytope.vertices],
                      axis=0)
    eta_avg = etas[0].scaled(1.0 / len(etas))
    for e in etas[1:]:
        eta_avg = eta_avg.plus(e.scaled(1.0 / len(etas)))
    from .adjoint import solve_adjoint
    adj_avg = solve_adjoint(spec, traj, eta_avg, psi_avg)
    interior_alpha = _legendre_alpha(spec, traj, adj_avg.p_node)
    interior_lc_ok = interior_alpha > tol

    parts = []
    if strict_cone_equals and interior_lc_ok:
        parts.append("no-gap setting: the strict and full critical cones "
                     "coincide and the interior multiplier is uniformly "
                     "convex in the control")
    elif not strict_cone_equals:
        parts.append("gap possible: contact arcs not fully carried by any "
                     "vertex measure")
    else:
        parts.append("gap possible: interior multiplier fails uniform "
                     "control convexity")
    if necessary is not None:
        parts.append(f"necessary check {'passed' if necessary.ok else 'FAILED'}")
    if sufficient is not None:
        parts.append(
            f"sufficient check {'passed' if sufficient.holds else 'FAILED'}")
    return NoGapReport(
        support_ok=support_ok, support_vertex=support_vertex,
        strict_cone_equals=strict_cone_equals,
        interior_alpha=interior_alpha, interior_lc_ok=interior_lc_ok,
        verdict="; ".join(parts), detail="; ".join(detail))
