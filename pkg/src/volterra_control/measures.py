"""Discrete measures on [0, T] and paths of bounded variation.

A measure is represented by point masses at grid nodes plus a per-cell
density (constant on each cell). A BV path is a terminal value plus the
measure of its increments; its right-limit value at t is

    h_t = h(T+) - dh((t, T]),

so atoms sit exactly at nodes and left/right limits differ by the atom. The
integration-by-parts identity

    int h^left dk + int k^right dh = h(T+) k(T+) - h(0-) k(0-)

holds exactly for purely atomic pairs and to quadrature accuracy otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import TimeGrid

__all__ = ["Measure", "BVPath", "bv_from_measure", "stieltjes",
           "ipp_residual", "eta_sup_difference"]


@dataclass
class Measure:
    """A (vector of) measures on [0, T]: node atoms plus per-cell densities.

    Attributes:
        grid: The time grid.
        atoms: Point masses at nodes, shape (N+1, r).
        density: Constant density per cell, shape (N, r).
    """

    grid: TimeGrid
    atoms: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        dens = np.asarray(self.density, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if dens.ndim == 1:
            dens = dens[:, None]
        if atoms.shape[0] != self.grid.n_nodes:
            raise ValueError("atoms must have one row per node")
        if dens.shape[0] != self.grid.n_cells:
            raise ValueError("density must have one row per cell")
        if atoms.shape[1] != dens.shape[1]:
            raise ValueError("atoms and density must agree on the number of components")
        self.atoms = atoms
        self.density = dens

    @classmethod
    def zero(cls, grid: TimeGrid, n_components: int = 1) -> "Measure":
        return cls(grid, np.zeros((grid.n_nodes, n_components)),
                   np.zeros((grid.n_cells, n_components)))

    @property
    def n_components(self) -> int:
        return self.atoms.shape[1]

    def component(self, i: int) -> "Measure":
        return Measure(self.grid, self.atoms[:, i : i + 1], self.density[:, i : i + 1])

    def total(self) -> np.ndarray:
        """Total mass of each component, shape (r,)."""
        return self.atoms.sum(axis=0) + self.density.T @ self.grid.spacing

    def total_variation(self) -> np.ndarray:
        """Total variation of each component, shape (r,)."""
        return (np.abs(self.atoms).sum(axis=0)
                + np.abs(self.density).T @ self.grid.spacing)

    def min_entry(self) -> float:
        """Smallest atom or density entry (negative means a signed measure)."""
        vals = [self.atoms.min() if self.atoms.size else 0.0,
                self.density.min() if self.density.size else 0.0]
        return float(min(vals))

    def is_nonnegative(self, tol: float = 0.0) -> bool:
        return self.min_entry() >= -tol

    def scaled(self, c: float) -> "Measure":
        return Measure(self.grid, c * self.atoms, c * self.density)

    def plus(self, other: "Measure") -> "Measure":
        if other.grid != self.grid:
            raise ValueError("measures live on different grids")
        return Measure(self.grid, self.atoms + other.atoms,
                       self.density + other.density)

    def closed_tail_mass(self) -> np.ndarray:
        """Masses m[k] = measure([t_k, T]) of the closed tails, shape (N+1, r)."""
        # atoms at nodes j >= k plus all cells j >= k (cell j starts at t_k).
        atom_tail = np.cumsum(self.atoms[::-1], axis=0)[::-1]
        cell_mass = self.density * self.grid.spacing[:, None]
        cell_tail = np.zeros_like(self.atoms)
        cell_tail[:-1] = np.cumsum(cell_mass[::-1], axis=0)[::-1]
        return atom_tail + cell_tail

    def open_tail_mass(self) -> np.ndarray:
        """Masses m[k] = measure((t_k, T]) of the half-open tails, shape (N+1, r)."""
        return self.closed_tail_mass() - self.atoms


@dataclass
class BVPath:
    """A path of bounded variation: terminal value plus increment measure.

    The stored representative is right-continuous on [0, T) with a separate
    initial left value; node values are recovered from the terminal value and
    tail masses of the increments.

    Attributes:
        grid: The time grid.
        increments: Measure of the increments dh, components = path dimension.
        terminal: Value h(T+), shape (d,).
    """

    grid: TimeGrid
    increments: Measure
    terminal: np.ndarray

    def __post_init__(self):
        term = np.atleast_1d(np.asarray(self.terminal, dtype=float))
        if term.shape[0] != self.increments.n_components:
            raise ValueError("terminal value and increments disagree on dimension")
        self.terminal = term

    @property
    def dim(self) -> int:
        return self.terminal.shape[0]

    def right_values(self) -> np.ndarray:
        """Right limits h(t_k+) at all nodes, shape (N+1, d).

        At t = T the right value is the terminal value h(T+).
        """
        return self.terminal[None, :] - self.increments.open_tail_mass()

    def left_values(self) -> np.ndarray:
        """Left limits h(t_k-) at all nodes, shape (N+1, d).

        At t = 0 this is the initial value h(0-).
        """
        return self.terminal[None, :] - self.increments.closed_tail_mass()

    def node_values(self) -> np.ndarray:
        """Symmetric node representative (h(t_k-) + h(t_k+)) / 2, shape (N+1, d).

        Coincides with the path value wherever the path is continuous and is
        the discretely duality-consistent evaluation at jump nodes.
        """
        return self.terminal[None, :] - self.increments.closed_tail_mass() \
            + 0.5 * self.increments.atoms

    def initial_left(self) -> np.ndarray:
        """Initial value h(0-), shape (d,)."""
        return self.terminal - self.increments.total()

    def jumps(self) -> np.ndarray:
        """Node jumps h(t_k+) - h(t_k-), shape (N+1, d)."""
        return self.increments.atoms


def bv_from_measure(terminal, measure: Measure) -> BVPath:
    """Build the BV path with increments ``measure`` and terminal value ``terminal``."""
    return BVPath(measure.grid, measure, terminal)


def eta_sup_difference(a: Measure, b: Measure) -> float:
    """Sup-norm distance of the cumulative distributions of two measures.

    Compares t -> measure([0, t]) at every node (atoms at a node included,
    cells accumulated once complete). Two measures coincide as functionals
    on continuous integrands iff this distance vanishes.

    Args:
        a: First measure.
        b: Second measure on the same grid, same component count.

    Returns:
        max over components and nodes of the cumulative-mass difference.
    """
    if a.grid != b.grid:
        raise ValueError("measures live on different grids")
    if a.n_components != b.n_components:
        raise ValueError("measures must agree on the number of components")
    cdf = np.cumsum(a.atoms - b.atoms, axis=0)
    cdf[1:] += np.cumsum((a.density - b.density)
                         * a.grid.spacing[:, None], axis=0)
    return float(np.max(np.abs(cdf))) if cdf.size else 0.0


def stieltjes(values: np.ndarray, measure: Measure) -> np.ndarray:
    """Stieltjes integral of node samples against each measure component.

    Atoms pair with the sample at their node; cell densities pair with the
    trapezoid average of the two cell-end samples.

    Args:
        values: Integrand node samples, shape (N+1,).
        measure: The measure, r components.

    Returns:
        Array of r component integrals.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size != measure.grid.n_nodes:
        raise ValueError("values must be node samples, shape (N+1,)")
    atom_part = measure.atoms.T @ values
    cell_avg = 0.5 * (values[:-1] + values[1:]) * measure.grid.spacing
    dens_part = measure.density.T @ cell_avg
    return atom_part + dens_part


def ipp_residual(h: BVPath, k: BVPath) -> float:
    """Defect of the integration-by-parts identity for two scalar BV paths.

    Computes | int h^left dk + int k^right dh - (h(T+) k(T+) - h(0-) k(0-)) |.
    Exactly zero when both paths are purely atomic; bounded by a constant
    times the squared spacing otherwise.
    """
    if h.dim != 1 or k.dim != 1:
        raise ValueError("integration by parts is checked for scalar paths")
    if h.grid != k.grid:
        raise ValueError("paths live on different grids")
    lhs = stieltjes(h.left_values()[:, 0], k.increments)[0]
    lhs += stieltjes(k.right_values()[:, 0], h.increments)[0]
    rhs = h.terminal[0] * k.terminal[0] - h.initial_left()[0] * k.initial_left()[0]
    return float(abs(lhs - rhs))
