"""hamweyl: Weyl-Titchmarsh theory for finite-difference Hamiltonian systems.

Subpackages
-----------
system     coefficient data, validation, boundary data, normal forms
propagate  solution stepping, fundamental systems, the bilinear pairing
weyl       M-functions, Weyl disks, half-line limits, spectral measures
green      whole-line and half-line Green's matrices and solves
testkit    independent oracles and seeded generators
cli        batch command-line front end
"""

from . import green, propagate, system, testkit, weyl
from .errors import (
    ConvergenceError,
    DomainError,
    EigenvalueHitError,
    GenerationError,
    HamweylError,
    InputError,
    KernelConstructionError,
    SteppingError,
    TransformPoleError,
    UnsupportedError,
)
from .system import (
    BoundaryData,
    HamiltonianSystem,
    dirac_system,
    dirichlet,
    jacobi_system,
    load_coefficients,
    make_boundary_data,
    neumann,
    save_coefficients,
)

__version__ = "0.1.0"

__all__ = [
    "system", "propagate", "weyl", "green", "testkit",
    "HamiltonianSystem", "BoundaryData",
    "jacobi_system", "dirac_system",
    "make_boundary_data", "dirichlet", "neumann",
    "load_coefficients", "save_coefficients",
    "HamweylError", "InputError", "DomainError", "SteppingError",
    "EigenvalueHitError", "TransformPoleError", "KernelConstructionError",
    "ConvergenceError", "GenerationError", "UnsupportedError",
    "__version__",
]
