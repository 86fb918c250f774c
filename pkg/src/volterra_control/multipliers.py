"""Lagrange multipliers: residual certification, reduced form, estimation.

A multiplier for a candidate trajectory is a triple (d eta, Psi, p): a
nonnegative measure on the state bounds, an endpoint multiplier row in the
normal cone of the endpoint constraint set, and the adjoint state solved
from them. ``multiplier_residuals`` scores how far a proposed triple is from
satisfying the first-order conditions:

    adjoint consistency, d eta >= 0, complementarity with g(y),
    endpoint cone conditions, Hamiltonian stationarity D_u H = 0,
    and initial transversality p(0-) + D_{y0} Phi[Psi] = 0.

The reduced form splits d eta into per-arc measures d rho plus touch-point
weights nu; the pair (nu, Psi) is the finite-dimensional coordinate pi that
parametrizes the multiplier set. ``estimate_polytope`` recovers the
polytope of multipliers by linear programming over the discretized
conditions, and ``check_qualification`` verifies the constraint
qualification (equality surjectivity + a strictly feasible direction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grids import Path, TimeGrid
from .measures import Measure, stieltjes
from .problems import ProblemSpec
from .dynamics import Trajectory, solve_linearized
from .adjoint import (
    AdjointState,
    _duh_pairing_batch,
    _solve_adjoint_core,
    endpoint_lagrangian_grads,
    hamiltonian_gradient_arrays,
    solve_adjoint,
)
from .structure import StructureReport
from .simplex import linear_program

__all__ = [
    "Multiplier",
    "MultiplierResiduals",
    "ReducedMultiplier",
    "QualificationReport",
    "PolytopeVertex",
    "MultiplierPolytope",
    "multiplier_residuals",
    "certification_tol",
    "eta_from_reduced",
    "reduced_from_eta",
    "check_qualification",
    "estimate_polytope",
]


@dataclass
class Multiplier:
    """A candidate Lagrange multiplier triple.

    Attributes:
        eta: Constraint measure d eta (one component per state bound).
        psi: Endpoint multiplier, equality components first, then
            inequality components.
        adjoint: Adjoint state solved from (eta, psi).
    """

    eta: Measure
    psi: np.ndarray
    adjoint: AdjointState

    @property
    def p(self):
        return self.adjoint.p


@dataclass
class MultiplierResiduals:
    """Defects of the first-order conditions for one multiplier.

    All entries are nonnegative; the multiplier is certified at tolerance
    ``tol`` when ``max_residual() <= tol``.

    Attributes:
        adjoint: Sup-distance of the stored costate from the one solved
            fresh from (eta, psi).
        eta_negativity: Largest negative part of the measure entries.
        complementarity: |integral of g_i(y) d eta_i| summed over i.
        psi_cone: Endpoint cone defect (negative inequality multiplier or
            complementary-slackness violation).
        stationarity: sup_t |D_u H[p](t)|.
        transversality: |p(0-) + D_{y0} Phi[Psi]|_inf.
    """

    adjoint: float
    eta_negativity: float
    complementarity: float
    psi_cone: float
    stationarity: float
    transversality: float

    def max_residual(self) -> float:
        return max(self.adjoint, self.eta_negativity, self.complementarity,
                   self.psi_cone, self.stationarity, self.transversality)

    def certified(self, tol: float) -> bool:
        return self.max_residual() <= tol

    def to_dict(self) -> dict:
        return {
            "adjoint": self.adjoint,
            "eta_negativity": self.eta_negativity,
            "complementarity": self.complementarity,
            "psi_cone": self.psi_cone,
            "stationarity": self.stationarity,
            "transversality": self.transversality,
        }


def certification_tol(traj: Trajectory, scale: float = 1.0) -> float:
    """The default certification tolerance max(1e-6, 10 dt^2) * scale."""
    dt = traj.grid.max_spacing
    return max(1e-6, 10.0 * dt * dt) * scale


def multiplier_residuals(spec: ProblemSpec, traj: Trajectory,
                         lam: Multiplier) -> MultiplierResiduals:
    """Score a multiplier triple against the first-order conditions."""
    if lam.eta.grid != traj.grid:
        raise ValueError("multiplier lives on a different grid than the "
                         "trajectory")
    fresh = solve_adjoint(spec, traj, lam.eta, lam.psi)
    adjoint_res = float(np.max(np.abs(fresh.p_node - lam.adjoint.p_node)))

    eta_neg = max(0.0, -float(lam.eta.min_entry())) if spec.n_state_bounds \
        else 0.0

    comp = 0.0
    if spec.n_state_bounds:
        gvals = np.asarray(spec.eval_g(traj.y.values), dtype=float)
        for i in range(spec.n_state_bounds):
            comp += abs(float(stieltjes(gvals[:, i], lam.eta.component(i))[0]))

    psi_cone = 0.0
    s_eq = spec.n_endpoint_eq
    yT = traj.y.values[-1]
    if spec.n_endpoint_ineq:
        phi_i = np.atleast_1d(np.asarray(
            spec.eval_endpoint_ineq(traj.y0, yT), dtype=float))
        psi_i = lam.psi[s_eq:]
        psi_cone = max(0.0, -float(np.min(psi_i)))
        psi_cone = max(psi_cone, float(np.max(np.abs(psi_i * phi_i))))

    duh, _ = hamiltonian_gradient_arrays(spec, traj, lam.adjoint.p_node)
    stationarity = float(np.max(np.abs(duh)))

    d_y0, _ = endpoint_lagrangian_grads(spec, traj.y0, yT, lam.psi)
    transversality = float(np.max(np.abs(lam.adjoint.p0_minus + d_y0)))

    return MultiplierResiduals(
        adjoint=adjoint_res, eta_negativity=eta_neg, complementarity=comp,
        psi_cone=psi_cone, stationarity=stationarity,
        transversality=transversality)


@dataclass
class ReducedMultiplier:
    """The (d rho, nu, Psi) coordinates of a multiplier.

    Attributes:
        rho: Arc part of the measure, supported on the contact sets.
        nu: Touch-point atom weights, ordered like
            ``report.all_touches()``.
        psi: Endpoint multiplier.
    """

    rho: Measure
    nu: np.ndarray
    psi: np.ndarray


def eta_from_reduced(reduced: ReducedMultiplier,
                     report: StructureReport) -> Measure:
    """Assemble d eta = d rho + sum of touch atoms."""
    eta = Measure(reduced.rho.grid, reduced.rho.atoms.copy(),
                  reduced.rho.density.copy())
    touches = report.all_touches()
    if len(touches) != reduced.nu.shape[0]:
        raise ValueError("nu length does not match the touch-point count")
    for w, tp in zip(reduced.nu, touches):
        eta.atoms[tp.node, tp.constraint] += w
    return eta


def reduced_from_eta(eta: Measure, report: StructureReport,
                     tol: float = 1e-10) -> ReducedMultiplier:
    """Split d eta into (d rho, nu); reject mass outside the contact sets.

    Raises:
        ValueError: If any component carries more than ``tol`` mass outside
            its contact set union touch points.
    """
    atoms = eta.atoms.copy()
    density = eta.density.copy()
    touches = report.all_touches()
    nu = np.zeros(len(touches))
    for t_idx, tp in enumerate(touches):
        nu[t_idx] = atoms[tp.node, tp.constraint]
        atoms[tp.node, tp.constraint] = 0.0
    for c in report.constraints:
        i = c.index
        mask = report.contact_mask(i)
        bad_atoms = float(np.sum(np.abs(atoms[~mask, i])))
        cell_ok = mask[:-1] & mask[1:]
        bad_dens = float(np.abs(density[~cell_ok, i])
                         @ eta.grid.spacing[~cell_ok])
        if bad_atoms + bad_dens > tol:
            raise ValueError(
                f"support violation: constraint {i} carries mass "
                f"{bad_atoms + bad_dens:.3e} outside its contact set")
    return ReducedMultiplier(rho=Measure(eta.grid, atoms, density), nu=nu,
                             psi=None)


@dataclass
class QualificationReport:
    """Outcome of the constraint-qualification check.

    Attributes:
        qualified: Both the rank and strict-direction parts hold.
        rank_ok: Equality endpoint derivative is surjective.
        rank: Estimated rank of the equality derivative.
        margin: Best strict-feasibility margin found (inf when vacuous).
        witness_v: Control direction achieving the margin (None if vacuous).
        witness_z0: Initial-state direction achieving the margin.
        detail: Diagnostics.
    """

    qualified: bool
    rank_ok: bool
    rank: int
    margin: float
    witness_v: Optional[Path]
    witness_z0: Optional[np.ndarray]
    detail: str = ""


def _endpoint_rows(spec: ProblemSpec, traj: Trajectory):
    """Gradients of the endpoint maps at the trajectory endpoints."""
    yT = traj.y.values[-1]
    rows_eq = spec.eval_endpoint_eq_grad(traj.y0, yT) \
        if spec.n_endpoint_eq else np.zeros((0, 2 * spec.state_dim))
    rows_in = spec.eval_endpoint_ineq_grad(traj.y0, yT) \
        if spec.n_endpoint_ineq else np.zeros((0, 2 * spec.state_dim))
    return np.asarray(rows_eq, dtype=float), np.asarray(rows_in, dtype=float)


def _control_blocks(grid: TimeGrid, m: int, max_columns: int = 64):
    """Piecewise-constant control basis: list of (node range, component)."""
    n_blocks = max(1, max_columns // m)
    n_blocks = min(n_blocks, grid.n_nodes)
    edges = np.linspace(0, grid.n_nodes, n_blocks + 1).astype(int)
    blocks = []
    for b in range(n_blocks):
        for a in range(m):
            blocks.append((edges[b], edges[b + 1], a))
    return blocks


def check_qualification(spec: ProblemSpec, traj: Trajectory,
                        report: StructureReport, tol: float = 1e-6,
                        rng: Optional[np.random.Generator] = None
                        ) -> QualificationReport:
    """Verify Robinson qualification at the candidate trajectory.

    Part (i): the map (v, z0) -> D Phi^E (z0, z_T[v, z0]) is surjective,
    estimated by probing random directions. Part (ii): a direction exists
    that keeps the equality derivative at zero while making every active
    endpoint inequality and every contact-set constraint value strictly
    negative; found by maximizing the minimal margin with the in-repo LP
    over a coarse control subspace.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    grid = traj.grid
    n = spec.state_dim
    m = spec.control_dim
    rows_eq, rows_in = _endpoint_rows(spec, traj)
    s_eq = rows_eq.shape[0]
    yT = traj.y.values[-1]

    # active endpoint inequalities and contact nodes
    phi_i = np.atleast_1d(np.asarray(spec.eval_endpoint_ineq(traj.y0, yT),
                                     dtype=float)) if spec.n_endpoint_ineq \
        else np.zeros(0)
    active_in = [j for j in range(phi_i.shape[0])
                 if phi_i[j] >= -report.tol_active]
    contact = []
    if spec.n_state_bounds:
        gg = np.asarray(spec.eval_g_grad(traj.y.values), dtype=float)
        for c in report.constraints:
            for k in np.flatnonzero(report.contact_mask(c.index)):
                contact.append((c.index, int(k)))

    # part (i): rank probe
    rank_ok = True
    rank = 0
    if s_eq:
        n_probe = s_eq + n
        cols = np.zeros((s_eq, n_probe))
        for jp in range(n_probe):
            v = Path(grid, rng.normal(size=(grid.n_nodes, m)),
                     kind="control")
            z0 = rng.normal(size=n)
            z = solve_linearized(spec, traj, v, z0)
            cols[:, jp] = rows_eq[:, :n] @ z0 + rows_eq[:, n:] @ z.values[-1]
        sv = np.linalg.svd(cols, compute_uv=False)
        rank = int(np.sum(sv > tol * max(1.0, sv[0])))
        rank_ok = rank == s_eq

    if not active_in and not contact:
        # no inequality side: qualification reduces to the rank condition
        return QualificationReport(
            qualified=rank_ok, rank_ok=rank_ok, rank=rank, margin=math.inf,
            witness_v=None, witness_z0=None,
            detail="" if rank_ok else
            "rank deficiency in the equality endpoint derivative")

    # part (ii): margin LP over a coarse control subspace + z0
    blocks = _control_blocks(grid, m)
    n_b = len(blocks)
    basis_paths = []
    eq_cols = np.zeros((s_eq, n_b + n))
    in_cols = np.zeros((len(active_in), n_b + n))
    ct_cols = np.zeros((len(contact), n_b + n))
    for jb, (a, b, comp) in enumerate(blocks):
        vals = np.zeros((grid.n_nodes, m))
        vals[a:b, comp] = 1.0
        vp = Path(grid, vals, kind="control")
        basis_paths.append(vp)
        z = solve_linearized(spec, traj, vp, np.zeros(n))
        if s_eq:
            eq_cols[:, jb] = rows_eq[:, n:] @ z.values[-1]
        for jj, j in enumerate(active_in):
            in_cols[jj, jb] = rows_in[j, n:] @ z.values[-1]
        for jc, (i, k) in enumerate(contact):
            ct_cols[jc, jb] = gg[k, i, :] @ z.values[k]
    for j0 in range(n):
        z0 = np.zeros(n)
        z0[j0] = 1.0
        z = solve_linearized(spec, traj, Path.zeros(grid, m, kind="control"),
                             z0)
        if s_eq:
            eq_cols[:, n_b + j0] = rows_eq[:, :n] @ z0 \
                + rows_eq[:, n:] @ z.values[-1]
        for jj, j in enumerate(active_in):
            in_cols[jj, n_b + j0] = rows_in[j, :n] @ z0 \
                + rows_in[j, n:] @ z.values[-1]
        for jc, (i, k) in enumerate(contact):
            ct_cols[jc, n_b + j0] = gg[k, i, :] @ z.values[k]

    n_var = n_b + n + 1  # coefficients + z0 + margin
    c_lp = np.zeros(n_var)
    c_lp[-1] = -1.0  # maximize margin
    ub_rows = np.vstack([in_cols, ct_cols]) if (len(active_in) + len(contact)) \
        else np.zeros((0, n_b + n))
    a_ub = np.hstack([ub_rows, np.ones((ub_rows.shape[0], 1))])
    b_ub = np.zeros(ub_rows.shape[0])
    a_eq = np.hstack([eq_cols, np.zeros((s_eq, 1))]) if s_eq else None
    b_eq = np.zeros(s_eq) if s_eq else None
    bounds = [(-1.0, 1.0)] * (n_b + n) + [(0.0, None)]
    res = linear_program(c_lp, a_ub=a_ub if a_ub.shape[0] else None,
                         b_ub=b_ub if a_ub.shape[0] else None,
                         a_eq=a_eq, b_eq=b_eq, bounds=bounds)
    if res.status != "optimal":
        return QualificationReport(
            qualified=False, rank_ok=rank_ok, rank=rank, margin=0.0,
            witness_v=None, witness_z0=None,
            detail=f"margin LP ended with status {res.status}")
    margin = float(-res.objective)
    coefs = res.x[:n_b]
    z0 = res.x[n_b : n_b + n]
    vals = np.zeros((grid.n_nodes, m))
    for jb, (a, b, comp) in enumerate(blocks):
        vals[a:b, comp] += coefs[jb]
    witness = Path(grid, vals, kind="control")
    qualified = rank_ok and margin > tol
    detail = "" if qualified else (
        "rank deficiency in the equality endpoint derivative" if not rank_ok
        else f"strict-direction margin {margin:.3e} below tolerance {tol}")
    return QualificationReport(
        qualified=qualified, rank_ok=rank_ok, rank=rank, margin=margin,
        witness_v=witness, witness_z0=z0, detail=detail)


@dataclass
class PolytopeVertex:
    """One vertex of the multiplier polytope.

    Attributes:
        pi: The (nu, Psi) coordinate vector.
        multiplier: Reconstructed full multiplier m(pi).
        residuals: Its certification record.
    """

    pi: np.ndarray
    multiplier: Multiplier
    residuals: MultiplierResiduals


@dataclass
class MultiplierPolytope:
    """LP-estimated multiplier polytope in pi = (nu, Psi) coordinates.

    Attributes:
        vertices: Distinct optimal vertices found.
        n_touch: Leading entries of pi are the touch weights nu.
        stage_slack: Best uniform residual slack s* of the feasibility LP.
        feasible: s* small enough to accept the discrete system as solvable.
        detail: Diagnostics.
    """

    vertices: list
    n_touch: int
    stage_slack: float
    feasible: bool
    detail: str = ""

    @property
    def pi_images(self) -> np.ndarray:
        if not self.vertices:
            return np.zeros((0, 0))
        return np.vstack([v.pi for v in self.vertices])


def _polytope_columns(spec: ProblemSpec, report: StructureReport):
    """Enumerate the unknown measure/psi columns of the multiplier system.

    Returns:
        List of descriptors: ("atom", i, node) | ("dens", i, cell) |
        ("nu", touch_index, i, node) | ("psi_eq+", j) | ("psi_eq-", j) |
        ("psi_in", j).
    """
    cols = []
    for c in report.constraints:
        i = c.index
        mask = report.contact_mask(i)
        for k in np.flatnonzero(mask):
            cols.append(("atom", i, int(k)))
        cell_ok = mask[:-1] & mask[1:]
        for j in np.flatnonzero(cell_ok):
            cols.append(("dens", i, int(j)))
    for t_idx, tp in enumerate(report.all_touches()):
        cols.append(("nu", t_idx, tp.constraint, tp.node))
    for j in range(spec.n_endpoint_eq):
        cols.append(("psi_eq+", j))
        cols.append(("psi_eq-", j))
    for j in range(spec.n_endpoint_ineq):
        cols.append(("psi_in", j))
    return cols


def estimate_polytope(spec: ProblemSpec, traj: Trajectory,
                      report: StructureReport, n_objectives: int = 12,
                      slack_slop: float = 1.02, dedup_tol: float = 1e-8,
                      rng: Optional[np.random.Generator] = None
                      ) -> MultiplierPolytope:
    """Estimate the multiplier polytope by LP over the discrete conditions.

    Stage A minimizes the uniform slack s of |stationarity| <= s and
    |transversality| <= s over nonnegative measure unknowns supported on
    the contact sets and touch points, plus endpoint multipliers. Stage B
    re-optimizes random (and coordinate) objectives over the pi = (nu, Psi)
    coordinates subject to slack <= s* * slack_slop, collecting the optimal
    vertices. Each vertex is completed to a full multiplier by the affine
    least-squares reconstruction of the arc measure given pi, then scored
    with multiplier_residuals.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    grid = traj.grid
    n = spec.state_dim
    m = spec.control_dim
    n_nodes = grid.n_nodes
    yT = traj.y.values[-1]
    rows_eq, rows_in = _endpoint_rows(spec, traj)

    # inactive endpoint inequalities carry zero multiplier (complementarity)
    phi_i = np.atleast_1d(np.asarray(spec.eval_endpoint_ineq(traj.y0, yT),
                                     dtype=float)) if spec.n_endpoint_ineq \
        else np.zeros(0)
    active_in = set(j for j in range(phi_i.shape[0])
                    if phi_i[j] >= -report.tol_active)

    cols = _polytope_columns(spec, report)
    cols = [cd for cd in cols if cd[0] != "psi_in" or cd[1] in active_in]
    n_x = len(cols)
    if n_x == 0:
        # nothing to estimate: the only multiplier is (0, 0, p[phi])
        adj = solve_adjoint(
            spec, traj, Measure.zero(grid, spec.n_state_bounds),
            np.zeros(spec.n_endpoint_eq + spec.n_endpoint_ineq))
        lam = Multiplier(eta=adj.eta, psi=adj.psi, adjoint=adj)
        res = multiplier_residuals(spec, traj, lam)
        vertex = PolytopeVertex(pi=np.zeros(0), multiplier=lam, residuals=res)
        feas = res.max_residual() <= certification_tol(traj)
        return MultiplierPolytope(vertices=[vertex], n_touch=0,
                                  stage_slack=res.max_residual(),
                                  feasible=feas,
                                  detail="no unknowns: single multiplier")

    # ---- batched unit responses of the adjoint ----
    r = spec.n_state_bounds
    eta_atoms = np.zeros((n_nodes, r, n_x))
    eta_dens = np.zeros((n_nodes - 1, r, n_x))
    c_term = np.zeros((n, n_x))
    dy0_cols = np.zeros((n, n_x))
    psi_col = np.zeros((spec.n_endpoint_eq + spec.n_endpoint_ineq, n_x))
    for jx, cd in enumerate(cols):
        if cd[0] == "atom" or cd[0] == "nu":
            i, k = (cd[1], cd[2]) if cd[0] == "atom" else (cd[2], cd[3])
            eta_atoms[k, i, jx] = 1.0
        elif cd[0] == "dens":
            eta_dens[cd[2], cd[1], jx] = 1.0
        elif cd[0] == "psi_eq+":
            c_term[:, jx] = rows_eq[cd[1], n:]
            dy0_cols[:, jx] = rows_eq[cd[1], :n]
            psi_col[cd[1], jx] = 1.0
        elif cd[0] == "psi_eq-":
            c_term[:, jx] = -rows_eq[cd[1], n:]
            dy0_cols[:, jx] = -rows_eq[cd[1], :n]
            psi_col[cd[1], jx] = -1.0
        else:  # psi_in
            c_term[:, jx] = rows_in[cd[1], n:]
            dy0_cols[:, jx] = rows_in[cd[1], :n]
            psi_col[spec.n_endpoint_eq + cd[1], jx] = 1.0

    unit = _solve_adjoint_core(spec, traj, eta_atoms, eta_dens, c_term)
    phi_g = np.asarray(spec.eval_phi_grad(traj.y0, yT), dtype=float)
    base = _solve_adjoint_core(
        spec, traj, np.zeros((n_nodes, r, 1)), np.zeros((n_nodes - 1, r, 1)),
        phi_g[n:][:, None])

    lu = np.asarray(spec.eval_ell_u(traj.u.values, traj.y.values), dtype=float)
    duh_base = lu[:, :, None] + _duh_pairing_batch(spec, traj, base["p_node"])
    duh_unit = _duh_pairing_batch(spec, traj, unit["p_node"])
    # row-stack: stationarity rows (node-major) then transversality rows
    a_mat = np.vstack([
        duh_unit.reshape(n_nodes * m, n_x),
        unit["p0_minus"] + dy0_cols,
    ])
    base_vec = np.concatenate([
        duh_base[:, :, 0].reshape(-1),
        base["p0_minus"][:, 0] + phi_g[:n],
    ])

    # ---- stage A: min uniform slack ----
    n_rows = a_mat.shape[0]
    c_lp = np.zeros(n_x + 1)
    c_lp[-1] = 1.0
    a_ub = np.vstack([
        np.hstack([a_mat, -np.ones((n_rows, 1))]),
        np.hstack([-a_mat, -np.ones((n_rows, 1))]),
    ])
    b_ub = np.concatenate([-base_vec, base_vec])
    res_a = linear_program(c_lp, a_ub=a_ub, b_ub=b_ub,
                           bounds=[(0.0, None)] * (n_x + 1))
    if res_a.status != "optimal":
        return MultiplierPolytope(
            vertices=[], n_touch=len(report.all_touches()), stage_slack=np.inf,
            feasible=False, detail=f"stage-A LP status {res_a.status}")
    s_star = float(res_a.objective)
    scale = 1.0 + float(np.max(np.abs(base_vec)))
    feasible = s_star <= certification_tol(traj, scale)

    # ---- stage B: scan pi objectives at slack <= cap ----
    n_touch = len(report.all_touches())
    pi_cols = [jx for jx, cd in enumerate(cols)
               if cd[0] in ("nu", "psi_eq+", "psi_eq-", "psi_in")]
    pi_dim = n_touch + spec.n_endpoint_eq + spec.n_endpoint_ineq

    def pi_of(x: np.ndarray) -> np.ndarray:
        out = np.zeros(pi_dim)
        for jx, cd in enumerate(cols):
            if cd[0] == "nu":
                out[cd[1]] += x[jx]
            elif cd[0] == "psi_eq+":
                out[n_touch + cd[1]] += x[jx]
            elif cd[0] == "psi_eq-":
                out[n_touch + cd[1]] -= x[jx]
            elif cd[0] == "psi_in":
                out[n_touch + spec.n_endpoint_eq + cd[1]] += x[jx]
        return out

    s_cap = s_star * slack_slop + 1e-12 * scale
    a_cap = np.vstack([a_mat, -a_mat])
    b_cap = np.concatenate([s_cap - base_vec, s_cap + base_vec])
    objectives = []
    for jp in range(pi_dim):
        w = np.zeros(pi_dim)
        w[jp] = 1.0
        objectives.append(w)
        objectives.append(-w)
    while len(objectives) < 2 * pi_dim + n_objectives:
        objectives.append(rng.normal(size=pi_dim))

    pi_list = []
    for w in objectives:
        c_obj = np.zeros(n_x)
        for jx, cd in enumerate(cols):
            if cd[0] == "nu":
                c_obj[jx] = w[cd[1]]
            elif cd[0] == "psi_eq+":
                c_obj[jx] = w[n_touch + cd[1]]
            elif cd[0] == "psi_eq-":
                c_obj[jx] = -w[n_touch + cd[1]]
            elif cd[0] == "psi_in":
                c_obj[jx] = w[n_touch + spec.n_endpoint_eq + cd[1]]
        res_b = linear_program(c_obj, a_ub=a_cap, b_ub=b_cap,
                               bounds=[(0.0, None)] * n_x)
        if res_b.status == "optimal":
            pi_list.append(pi_of(res_b.x))
    # de-duplicate
    distinct = []
    for pi in pi_list:
        if not any(np.max(np.abs(pi - q)) <= dedup_tol * (1.0 + np.max(np.abs(q)))
                   for q in distinct):
            distinct.append(pi)

    # ---- reconstruction m(pi): pinned-support least squares for rho ----
    rho_cols = [jx for jx, cd in enumerate(cols) if cd[0] in ("atom", "dens")]
    a_rho = a_mat[:, rho_cols]
    vertices = []
    for pi in distinct:
        x_pi = np.zeros(n_x)
        for jx, cd in enumerate(cols):
            if cd[0] == "nu":
                x_pi[jx] = max(pi[cd[1]], 0.0)
            elif cd[0] == "psi_eq+":
                x_pi[jx] = max(pi[n_touch + cd[1]], 0.0)
            elif cd[0] == "psi_eq-":
                x_pi[jx] = max(-pi[n_touch + cd[1]], 0.0)
            elif cd[0] == "psi_in":
                x_pi[jx] = pi[n_touch + spec.n_endpoint_eq + cd[1]]
        rhs = -(base_vec + a_mat @ x_pi)
        if rho_cols:
            sol, *_ = np.linalg.lstsq(a_rho, rhs, rcond=None)
            for jr, jx in zip(range(len(rho_cols)), rho_cols):
                x_pi[jx] = sol[jr]
        eta = Measure(grid, np.zeros((n_nodes, r)),
                      np.zeros((n_nodes - 1, r)))
        for jx, cd in enumerate(cols):
            if cd[0] == "atom":
                eta.atoms[cd[2], cd[1]] += x_pi[jx]
            elif cd[0] == "nu":
                eta.atoms[cd[3], cd[2]] += x_pi[jx]
            elif cd[0] == "dens":
                eta.density[cd[2], cd[1]] += x_pi[jx]
        psi = psi_col @ x_pi
        adj = solve_adjoint(spec, traj, eta, psi)
        lam = Multiplier(eta=eta, psi=psi, adjoint=adj)
        res = multiplier_residuals(spec, traj, lam)
        vertices.append(PolytopeVertex(pi=pi, multiplier=lam, residuals=res))

    return MultiplierPolytope(
        vertices=vertices, n_touch=n_touch, stage_slack=s_star,
        feasible=feasible,
        detail="" if feasible else
        f"stage-A slack {s_star:.3e} exceeds certification tolerance "
        "(no discrete multiplier at this grid)")
