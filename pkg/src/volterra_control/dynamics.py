"""Forward solvers for the memory state equation and its linearizations.

The state equation

    y_t = y_0 + int_0^t f(t, s, u_s, y_s) ds

is discretized by trapezoidal quadrature on the grid and solved by damped
fixed-point (Picard) iteration. Its first and second linearizations are
linear trapezoidal systems in triangular form and are solved exactly by
forward substitution (the fixed point of the same iteration, reached in
finitely many steps), which preserves exact linearity of the direction map
z[v, z0] and exact quadratic homogeneity of the second-order term.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .grids import Path, TimeGrid
from .problems import ProblemSpec

__all__ = [
    "Trajectory",
    "PicardDivergenceError",
    "solve_state",
    "solve_linearized",
    "solve_second_linearized",
    "fd_consistency",
    "objective_value",
    "stability_constant",
]


class PicardDivergenceError(RuntimeError):
    """Raised when the fixed-point iteration fails to contract."""


@dataclass
class Trajectory:
    """A control/state pair satisfying the discretized state equation.

    Attributes:
        u: Control path (piecewise-constant reading).
        y: State path (piecewise-linear reading).
        y0: Initial state, shape (n,).
        residual: Sup-norm defect of the discrete state equation.
        n_iterations: Fixed-point iterations used.
    """

    u: Path
    y: Path
    y0: np.ndarray
    residual: float
    n_iterations: int = 0

    @property
    def grid(self) -> TimeGrid:
        return self.u.grid


def _cumtrapz(samples: np.ndarray, dt: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid integral along axis 0. samples (N+1, ...) -> (N+1, ...)."""
    avg = 0.5 * (samples[1:] + samples[:-1])
    inc = avg * dt.reshape((-1,) + (1,) * (samples.ndim - 1))
    out = np.zeros_like(samples)
    out[1:] = np.cumsum(inc, axis=0)
    return out


def _kernel_rows(spec: ProblemSpec, eval_fn, grid: TimeGrid, u: np.ndarray,
                 y: np.ndarray, *out_shape) -> np.ndarray:
    """Evaluate a kernel callback at (t_k, t_j, u_j, y_j) for all k >= j rows.

    Returns the full (N+1, N+1, ...) tensor; rows above the diagonal are
    evaluated too (harmless, simplifies vectorization). Only used when the
    kernel genuinely depends on its first argument.
    """
    n = grid.n_nodes
    tt = np.repeat(grid.nodes, n)
    ss = np.tile(grid.nodes, n)
    uu = np.tile(u, (n, 1))
    yy = np.tile(y, (n, 1))
    vals = eval_fn(tt, ss, uu, yy)
    return np.asarray(vals, dtype=float).reshape((n, n) + out_shape)


def solve_state(spec: ProblemSpec, u: Path, y0, tol: float = 1e-10,
                max_iter: int = 200) -> Trajectory:
    """Solve the discretized state equation by damped Picard iteration.

    Args:
        spec: Problem data.
        u: Control path.
        y0: Initial state value, shape (n,).
        tol: Sup-norm stopping tolerance on the fixed-point defect.
        max_iter: Iteration cap.

    Returns:
        The trajectory with its final fixed-point residual.

    Raises:
        PicardDivergenceError: If the iteration exceeds ``max_iter`` without
            contracting below ``tol``.
    """
    grid = u.grid
    n_nodes = grid.n_nodes
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if y0.shape[0] != spec.state_dim:
        raise ValueError("y0 has wrong dimension")
    uv = u.values
    y = np.tile(y0, (n_nodes, 1))
    dt = grid.spacing

    def picard_map(y_cur: np.ndarray) -> np.ndarray:
        if spec.has_memory_kernel:
            f_rows = _kernel_rows(spec, spec.eval_f, grid, uv, y_cur,
                                  spec.state_dim)
            # row k: trapezoid over [0, t_k] of s -> f(t_k, s, u_s, y_s)
            avg = 0.5 * (f_rows[:, 1:, :] + f_rows[:, :-1, :]) * dt[None, :, None]
            integrals = np.zeros((n_nodes, spec.state_dim))
            csum = np.cumsum(avg, axis=1)
            integrals[1:] = csum[np.arange(1, n_nodes), np.arange(n_nodes - 1)]
        else:
            diag = np.asarray(
                spec.eval_f(grid.nodes, grid.nodes, uv, y_cur), dtype=float)
            integrals = _cumtrapz(diag, dt)
        return y0[None, :] + integrals

    damping = 1.0
    prev_delta = np.inf
    delta = np.inf
    for it in range(1, max_iter + 1):
        y_new = picard_map(y)
        delta = float(np.max(np.abs(y_new - y)))
        y = y + damping * (y_new - y)
        if delta <= tol:
            break
        if delta > prev_delta * 1.5 and damping > 0.1:
            damping *= 0.5
        prev_delta = delta
    else:
        raise PicardDivergenceError(
            f"state fixed point did not contract below {tol} in {max_iter} "
            f"iterations (last defect {delta:.3e})")
    residual = float(np.max(np.abs(picard_map(y) - y)))
    return Trajectory(u=u, y=Path(grid, y, kind="state"), y0=y0,
                      residual=residual, n_iterations=it)


def _diag_jacobians(spec: ProblemSpec, grid: TimeGrid, u: np.ndarray,
                    y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Kernel Jacobians on the diagonal t = s, shapes (N+1, n, m) and (N+1, n, n)."""
    a = np.asarray(spec.eval_f_u(grid.nodes, grid.nodes, u, y), dtype=float)
    b = np.asarray(spec.eval_f_y(grid.nodes, grid.nodes, u, y), dtype=float)
    return a, b


def _forward_substitution(spec: ProblemSpec, grid: TimeGrid, u: np.ndarray,
                          y: np.ndarray, drive: np.ndarray,
                          z0: np.ndarray) -> np.ndarray:
    """Solve z_k = z0 + quad_k( f_y z + drive ) exactly, batched over columns.

    ``drive`` carries the already-assembled inhomogeneity samples (for the
    first linearization, f_u v; for the second, the quadratic remainder),
    shape (N+1, n, B). Returns (N+1, n, B).
    """
    n_nodes = grid.n_nodes
    n = spec.state_dim
    dt = grid.spacing
    b_cols = drive.shape[2]
    z = np.zeros((n_nodes, n, b_cols))
    z[0] = z0
    eye = np.eye(n)

    if not spec.has_memory_kernel:
        _, fy = _diag_jacobians(spec, grid, u, y)
        acc = np.zeros((n, b_cols))
        w_prev = 0.0  # full prefix weight of the previous node
        for k in range(1, n_nodes):
            # node k-1 joins the prefix with its full trapezoid weight
            w_km1 = (dt[k - 2] + dt[k - 1]) / 2.0 if k >= 2 else dt[0] / 2.0
            acc += w_km1 * (fy[k - 1] @ z[k - 1] + drive[k - 1])
            wkk = dt[k - 1] / 2.0
            rhs = z0 + acc + wkk * drive[k]
            z[k] = np.linalg.solve(eye - wkk * fy[k], rhs)
        return z

    # memory kernel: row-wise evaluation of f_y(t_k, s_j, u_j, y_j)
    fy_rows = _kernel_rows(spec, spec.eval_f_y, grid, u, y, n, n)
    w_row = np.zeros(n_nodes)
    w_row[0] = dt[0] / 2.0
    w_row[1:-1] = (dt[:-1] + dt[1:]) / 2.0
    for k in range(1, n_nodes):
        wkk = dt[k - 1] / 2.0
        weights = w_row[:k]
        past = np.einsum("j,jab,jbc->ac", weights, fy_rows[k, :k], z[:k]) \
            + np.einsum("j,jac->ac", weights, drive[:k])
        rhs = z0 + past + wkk * drive[k]
        z[k] = np.linalg.solve(eye - wkk * fy_rows[k, k], rhs)
    return z


def solve_linearized(spec: ProblemSpec, traj: Trajectory, v: Path,
                     z0) -> Path:
    """Solve the linearized state equation along a trajectory.

    The direction map (v, z0) -> z is exactly linear: the triangular system

        z_t = z0 + int_0^t ( D_u f v_s + D_y f z_s ) ds

    is solved by forward substitution.

    Args:
        spec: Problem data.
        traj: Base trajectory.
        v: Control direction path.
        z0: Initial-state direction, shape (n,).

    Returns:
        The linearized state path z.
    """
    grid = traj.grid
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    uv, yv = traj.u.values, traj.y.values
    if spec.has_memory_kernel:
        fu_rows = _kernel_rows(spec, spec.eval_f_u, grid, uv, yv,
                               spec.state_dim, spec.control_dim)
        z = _forward_substitution_memory_full(spec, grid, uv, yv, fu_rows,
                                              v.values, z0)
        return Path(grid, z, kind="state")
    fu, _ = _diag_jacobians(spec, grid, uv, yv)
    drive = np.einsum("kab,kb->ka", fu, v.values)[:, :, None]
    z = _forward_substitution(spec, grid, uv, yv, drive, z0[:, None])
    return Path(grid, z[:, :, 0], kind="state")


def _forward_substitution_memory_full(spec: ProblemSpec, grid: TimeGrid,
                                      u: np.ndarray, y: np.ndarray,
                                      fu_rows: np.ndarray, v: np.ndarray,
                                      z0: np.ndarray) -> np.ndarray:
    """Forward substitution when the f_u inhomogeneity is row-dependent."""
    from .grids import running_weight_matrix

    n_nodes = grid.n_nodes
    n = spec.state_dim
    dt = grid.spacing
    drive_direct = np.einsum("kjab,jb->kja", fu_rows, v)
    if spec.f_y is None:
        w = running_weight_matrix(grid)
        return z0[None, :] + np.einsum("kj,kja->ka", w, drive_direct)
    fy_rows = _kernel_rows(spec, spec.eval_f_y, grid, u, y, n, n)
    drive_rows = drive_direct
    z = np.zeros((n_nodes, n))
    z[0] = z0
    eye = np.eye(n)
    w_row = np.zeros(n_nodes)
    w_row[0] = dt[0] / 2.0
    w_row[1:-1] = (dt[:-1] + dt[1:]) / 2.0
    for k in range(1, n_nodes):
        wkk = dt[k - 1] / 2.0
        weights = w_row[:k]
        past = np.einsum("j,jab,jb->a", weights, fy_rows[k, :k], z[:k]) \
            + np.einsum("j,ja->a", weights, drive_rows[k, :k])
        rhs = z0 + past + wkk * drive_rows[k, k]
        z[k] = np.linalg.solve(eye - wkk * fy_rows[k, k], rhs)
    return z


def solve_second_linearized(spec: ProblemSpec, traj: Trajectory, v: Path,
                            z0) -> Path:
    """Solve for the second-order state expansion term along a direction.

    With z the linearized state, the second-order term w satisfies

        w_t = int_0^t ( D_y f w_s + D^2 f (v_s, z_s)^2 ) ds,

    so that y[u + s v, y0 + s z0] = y + s z + (s^2 / 2) w + o(s^2). The map
    (v, z0) -> w is exactly quadratic.

    Returns:
        The second-order state path w.
    """
    grid = traj.grid
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    uv, yv = traj.u.values, traj.y.values
    z = solve_linearized(spec, traj, v, z0).values
    vv = v.values

    def quad_diag():
        nodes = grid.nodes
        fuu = np.asarray(spec.eval_f_uu(nodes, nodes, uv, yv), dtype=float)
        fuy = np.asarray(spec.eval_f_uy(nodes, nodes, uv, yv), dtype=float)
        fyy = np.asarray(spec.eval_f_yy(nodes, nodes, uv, yv), dtype=float)
        out = np.einsum("kabc,kb,kc->ka", fuu, vv, vv)
        out += 2.0 * np.einsum("kabc,kb,kc->ka", fuy, vv, z)
        out += np.einsum("kabc,kb,kc->ka", fyy, z, z)
        return out

    if not spec.has_memory_kernel:
        drive = quad_diag()[:, :, None]
        w = _forward_substitution(spec, grid, uv, yv, drive,
                                  np.zeros((spec.state_dim, 1)))
        return Path(grid, w[:, :, 0], kind="state")

    n = spec.state_dim
    fuu_r = _kernel_rows(spec, spec.eval_f_uu, grid, uv, yv, n,
                         spec.control_dim, spec.control_dim)
    fuy_r = _kernel_rows(spec, spec.eval_f_uy, grid, uv, yv, n,
                         spec.control_dim, n)
    fyy_r = _kernel_rows(spec, spec.eval_f_yy, grid, uv, yv, n, n, n)
    quad_rows = np.einsum("kjabc,jb,jc->kja", fuu_r, vv, vv)
    quad_rows += 2.0 * np.einsum("kjabc,jb,jc->kja", fuy_r, vv, z)
    quad_rows += np.einsum("kjabc,jb,jc->kja", fyy_r, z, z)
    w = _forward_substitution_memory_drive(spec, grid, uv, yv, quad_rows)
    return Path(grid, w, kind="state")


def _forward_substitution_memory_drive(spec: ProblemSpec, grid: TimeGrid,
                                       u: np.ndarray, y: np.ndarray,
                                       drive_rows: np.ndarray) -> np.ndarray:
    """Forward substitution with a row-dependent drive and zero initial value."""
    n_nodes = grid.n_nodes
    n = spec.state_dim
    dt = grid.spacing
    fy_rows = _kernel_rows(spec, spec.eval_f_y, grid, u, y, n, n)
    z = np.zeros((n_nodes, n))
    eye = np.eye(n)
    w_row = np.zeros(n_nodes)
    w_row[0] = dt[0] / 2.0
    w_row[1:-1] = (dt[:-1] + dt[1:]) / 2.0
    for k in range(1, n_nodes):
        wkk = dt[k - 1] / 2.0
        weights = w_row[:k]
        past = np.einsum("j,jab,jb->a", weights, fy_rows[k, :k], z[:k]) \
            + np.einsum("j,ja->a", weights, drive_rows[k, :k])
        rhs = past + wkk * drive_rows[k, k]
        z[k] = np.linalg.solve(eye - wkk * fy_rows[k, k], rhs)
    return z


def fd_consistency(spec: ProblemSpec, u: Path, y0, v: Path, z0,
                   h: float = 1e-4, tol_state: float = 1e-12) -> Tuple[float, float]:
    """Finite-difference check of the first and second linearizations.

    Args:
        spec: Problem data.
        u: Base control path.
        y0: Base initial state.
        v: Control direction.
        z0: Initial-state direction.
        h: Expansion step.
        tol_state: Tolerance passed to the nonlinear solves.

    Returns:
        (first_order_defect, second_order_defect): sup norms of
        (y[u+hv] - y[u])/h - z and (y[u+hv] - 2 y[u] + y[u-hv])/h^2 - w.
    """
    traj = solve_state(spec, u, y0, tol=tol_state)
    grid = traj.grid
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    z = solve_linearized(spec, traj, v, z0).values
    w = solve_second_linearized(spec, traj, v, z0).values

    up = Path(grid, traj.u.values + h * v.values, kind="control")
    um = Path(grid, traj.u.values - h * v.values, kind="control")
    yp = solve_state(spec, up, traj.y0 + h * z0, tol=tol_state).y.values
    ym = solve_state(spec, um, traj.y0 - h * z0, tol=tol_state).y.values
    yb = traj.y.values

    res1 = float(np.max(np.abs((yp - yb) / h - z)))
    res2 = float(np.max(np.abs((yp - 2 * yb + ym) / (h * h) - w)))
    return res1, res2


def objective_value(spec: ProblemSpec, traj: Trajectory) -> float:
    """Total cost: trapezoid integral of the running cost plus endpoint cost."""
    grid = traj.grid
    run = np.asarray(spec.eval_ell(traj.u.values, traj.y.values), dtype=float)
    return float(grid.weights @ run) + spec.eval_phi(traj.y0, traj.y.values[-1])


def stability_constant(spec: ProblemSpec) -> float:
    """Gronwall-type bound (1 + L) exp(L T) on direction amplification."""
    lt = spec.lip_f * spec.horizon
    return float((1.0 + spec.lip_f) * np.exp(lt))
