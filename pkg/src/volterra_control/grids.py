"""Time grids, sampled paths, and triangular quadrature rules.

Everything downstream works on a fixed partition of the horizon [0, T]:
controls are sampled at nodes and read as piecewise-constant on cells (left
node value), states are piecewise-linear interpolants of node samples. All
integrals are trapezoidal, including the running integrals over [0, t_k] and
the tail integrals over [t_k, T] that the memory terms need.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TimeGrid",
    "Path",
    "make_uniform_grid",
    "trapezoid_weights",
    "running_weight_matrix",
    "tail_weight_matrix",
    "volterra_quad",
    "tail_quad",
]


@dataclass(frozen=True)
class TimeGrid:
    """A strictly increasing partition 0 = t_0 < t_1 < ... < t_N = T.

    Attributes:
        nodes: Array of node times, shape (N+1,).
    """

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("grid needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("grid must start at t=0")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_cells(self) -> int:
        """Number of cells N."""
        return self.nodes.size - 1

    @property
    def n_nodes(self) -> int:
        """Number of nodes N+1."""
        return self.nodes.size

    @property
    def horizon(self) -> float:
        """Final time T."""
        return float(self.nodes[-1])

    @property
    def spacing(self) -> np.ndarray:
        """Cell widths t_{k+1} - t_k, shape (N,)."""
        return np.diff(self.nodes)

    @property
    def max_spacing(self) -> float:
        return float(np.max(self.spacing))

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid weights for integration over [0, T], shape (N+1,)."""
        return trapezoid_weights(self.nodes)

    def nearest_node(self, t: float) -> int:
        """Index of the grid node closest to time t."""
        return int(np.argmin(np.abs(self.nodes - t)))

    def __eq__(self, other) -> bool:
        return isinstance(other, TimeGrid) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash((self.nodes.size, float(self.nodes[-1])))


def make_uniform_grid(horizon: float, n_cells: int) -> TimeGrid:
    """Uniform grid with ``n_cells`` cells on [0, horizon]."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if n_cells < 1:
        raise ValueError("need at least one cell")
    return TimeGrid(np.linspace(0.0, float(horizon), n_cells + 1))


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    """Trapezoid quadrature weights for the full interval [nodes[0], nodes[-1]]."""
    dt = np.diff(nodes)
    w = np.zeros(nodes.size)
    w[:-1] += dt / 2.0
    w[1:] += dt / 2.0
    return w


def running_weight_matrix(grid: TimeGrid) -> np.ndarray:
    """Matrix W with W[k, j] = trapezoid weight of node j on [0, t_k].

    Row k discretizes the running integral over [0, t_k]; row 0 is zero.
    Shape (N+1, N+1), lower triangular.
    """
    n = grid.n_nodes
    dt = grid.spacing
    w = np.zeros((n, n))
    rows = np.arange(n)[:, None]
    cols = np.arange(n)[None, :]
    # node j contributes dt[j-1]/2 whenever 1 <= j <= k, and dt[j]/2 whenever j <= k-1
    left = np.zeros(n)
    left[1:] = dt / 2.0
    right = np.zeros(n)
    right[:-1] = dt / 2.0
    w += np.where(cols <= rows, left[None, :], 0.0)
    w += np.where(cols <= rows - 1, right[None, :], 0.0)
    return w


def tail_weight_matrix(grid: TimeGrid) -> np.ndarray:
    """Matrix Th with Th[k, j] = trapezoid weight of node j on [t_k, T].

    Row k discretizes the tail integral over [t_k, T]; row N is zero.
    Shape (N+1, N+1), upper triangular.
    """
    n = grid.n_nodes
    dt = grid.spacing
    rows = np.arange(n)[:, None]
    cols = np.arange(n)[None, :]
    left = np.zeros(n)
    left[1:] = dt / 2.0
    right = np.zeros(n)
    right[:-1] = dt / 2.0
    th = np.where(cols >= rows + 1, left[None, :], 0.0)
    th = th + np.where(cols >= rows, right[None, :], 0.0)
    return th


def volterra_quad(samples: np.ndarray, grid: TimeGrid, k: int) -> np.ndarray:
    """Trapezoid approximation of the running integral of ``samples`` over [0, t_k].

    Args:
        samples: Node samples, shape (N+1,) or (N+1, d).
        grid: The time grid.
        k: Upper node index.

    Returns:
        Scalar (or (d,) array) value of the integral up to node k.
    """
    if k == 0:
        return np.zeros(()) if samples.ndim == 1 else np.zeros(samples.shape[1])
    w = trapezoid_weights(grid.nodes[: k + 1])
    return np.tensordot(w, samples[: k + 1], axes=(0, 0))


def tail_quad(samples: np.ndarray, grid: TimeGrid, k: int) -> np.ndarray:
    """Trapezoid approximation of the tail integral of ``samples`` over [t_k, T]."""
    n = grid.n_nodes
    if k >= n - 1:
        return np.zeros(()) if samples.ndim == 1 else np.zeros(samples.shape[1])
    w = trapezoid_weights(grid.nodes[k:])
    return np.tensordot(w, samples[k:], axes=(0, 0))


@dataclass
class Path:
    """Node samples of a control or state path on a grid.

    Controls (kind="control") are read as piecewise-constant on cells with the
    left node value; states (kind="state") as piecewise-linear interpolants.

    Attributes:
        grid: The time grid.
        values: Samples, shape (N+1, d).
        kind: Either "control" or "state".
    """

    grid: TimeGrid
    values: np.ndarray
    kind: str = "state"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2:
            raise ValueError(
                f"path values must be (N+1,) or (N+1, d), got shape "
                f"{vals.shape}")
        if vals.shape[0] != self.grid.n_nodes:
            raise ValueError(
                f"expected {self.grid.n_nodes} samples, got {vals.shape[0]}"
            )
        if self.kind not in ("control", "state"):
            raise ValueError("kind must be 'control' or 'state'")
        self.values = vals

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_callable(cls, grid: TimeGrid, fn, kind: str = "state") -> "Path":
        """Sample a callable t -> value (scalar or vector) at the grid nodes."""
        vals = np.array([np.atleast_1d(fn(t)) for t in grid.nodes], dtype=float)
        return cls(grid, vals, kind=kind)

    @classmethod
    def zeros(cls, grid: TimeGrid, dim: int, kind: str = "state") -> "Path":
        return cls(grid, np.zeros((grid.n_nodes, dim)), kind=kind)

    def copy(self) -> "Path":
        return Path(self.grid, self.values.copy(), kind=self.kind)

    def sup_norm(self) -> float:
        """Supremum norm max_k |values_k| (Euclidean norm across components)."""
        if self.values.size == 0:
            return 0.0
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def l2_norm(self) -> float:
        """L2 norm: square root of the trapezoid integral of |value|^2."""
        sq = np.sum(self.values**2, axis=1)
        return float(np.sqrt(self.grid.weights @ sq))
