"""Exception hierarchy for hamweyl."""

from __future__ import annotations

__all__ = [
    "HamweylError",
    "InputError",
    "DomainError",
    "SteppingError",
    "EigenvalueHitError",
    "TransformPoleError",
    "KernelConstructionError",
    "ConvergenceError",
    "GenerationError",
    "UnsupportedError",
]


class HamweylError(Exception):
    """Base class for all package-specific errors."""


class InputError(HamweylError, ValueError):
    """Invalid input data (shape, rank, definiteness class, singular coefficient)."""


class DomainError(HamweylError):
    """Site index outside the range reachable under the extension policy."""


class SteppingError(HamweylError):
    """Near-singular pencil encountered while propagating a solution.

    Carries the offending site and the reciprocal condition estimate.
    """

    def __init__(self, site: int, rcond: float, which: str):
        self.site = site
        self.rcond = rcond
        self.which = which
        super().__init__(
            f"near-singular {which} pencil at site {site} (rcond={rcond:.3e})"
        )


class EigenvalueHitError(HamweylError):
    """The boundary-weighted solution block is singular.

    For real spectral parameters this signals an eigenvalue of the regular
    two-point boundary value problem.
    """

    def __init__(self, z: complex, smin: float):
        self.z = z
        self.smin = smin
        super().__init__(
            f"boundary-weighted solution block singular at z={z} (smin={smin:.3e})"
        )


class TransformPoleError(HamweylError):
    """Singular denominator in a linear fractional transformation."""


class KernelConstructionError(HamweylError):
    """Half-plane sign check or coupling-matrix inversion failed while
    assembling a Green's kernel."""


class ConvergenceError(HamweylError):
    """An iteration failed to converge; carries the iterate trace."""

    def __init__(self, message: str, trace=None):
        self.trace = list(trace) if trace is not None else []
        super().__init__(message)


class GenerationError(HamweylError):
    """Random-system generation exhausted its retry budget."""


class UnsupportedError(HamweylError):
    """Requested configuration is valid mathematics but outside this version."""
