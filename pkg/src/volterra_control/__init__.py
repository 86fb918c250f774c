"""Optimality verification and control synthesis for Volterra integral dynamics.

The package checks first- and second-order optimality conditions for
state-constrained optimal control of integral equations with memory,

    y_t = y_0 + int_0^t f(t, s, u_s, y_s) ds,    g(y_t) <= 0,

and constructs admissible perturbation directions (tangential control
synthesis, smooth connections, pseudo-inverse tracking) used by those checks.
"""

from .grids import (
    TimeGrid,
    Path,
    make_uniform_grid,
    volterra_quad,
    tail_quad,
)
from .measures import Measure, BVPath, bv_from_measure, stieltjes, ipp_residual
from .problems import (
    ProblemSpec,
    ChainContext,
    ChainElement,
    DerivativeChain,
    verify_order,
    verify_commutation,
)
from .adjoint import (
    AdjointState,
    HamiltonianEval,
    duality_residual,
    endpoint_lagrangian_grads,
    hamiltonian,
    hamiltonian_gradient_arrays,
    hamiltonian_hessian_arrays,
    solve_adjoint,
)
from .dynamics import (
    Trajectory,
    solve_state,
    solve_linearized,
    solve_second_linearized,
    fd_consistency,
    objective_value,
)

__all__ = [
    "TimeGrid",
    "Path",
    "make_uniform_grid",
    "volterra_quad",
    "tail_quad",
    "Measure",
    "BVPath",
    "bv_from_measure",
    "stieltjes",
    "ipp_residual",
    "ProblemSpec",
    "ChainContext",
    "ChainElement",
    "DerivativeChain",
    "verify_order",
    "verify_commutation",
    "AdjointState",
    "HamiltonianEval",
    "duality_residual",
    "endpoint_lagrangian_grads",
    "hamiltonian",
    "hamiltonian_gradient_arrays",
    "hamiltonian_hessian_arrays",
    "solve_adjoint",
    "Trajectory",
    "solve_state",
    "solve_linearized",
    "solve_second_linearized",
    "fd_consistency",
    "objective_value",
]

__version__ = "0.1.0"
