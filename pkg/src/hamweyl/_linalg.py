"""Small dense complex linear-algebra helpers shared across the package.

Everything here operates on small (m ≤ a few dozen) matrices, so plain
LAPACK calls through numpy are always appropriate.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "all_finite",
    "as_complex_matrix",
    "herm",
    "imag_part",
    "real_part",
    "opnorm",
    "rcond",
    "smallest_singular_value",
    "is_hermitian",
    "min_eig_herm",
    "max_eig_herm",
    "sqrtm_spd",
    "invsqrtm_spd",
    "solve",
    "rsolve",
    "haar_unitary",
]


def all_finite(a: np.ndarray) -> bool:
    a = np.asarray(a)
    return bool(np.all(np.isfinite(a.real)) and np.all(np.isfinite(a.imag)))


def as_complex_matrix(a, shape=None, name="matrix") -> np.ndarray:
    """Coerce input to a complex ndarray, optionally enforcing a shape."""
    out = np.asarray(a, dtype=complex)
    if shape is not None and out.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {out.shape}")
    if not all_finite(out):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def herm(a: np.ndarray) -> np.ndarray:
    """Hermitian part (A + A*) / 2."""
    return 0.5 * (a + a.conj().T)


def imag_part(a: np.ndarray) -> np.ndarray:
    """Matrix imaginary part (A - A*) / (2i); Hermitian by construction."""
    return (a - a.conj().T) / 2j


def real_part(a: np.ndarray) -> np.ndarray:
    """Matrix real part (A + A*) / 2 (alias of :func:`herm`)."""
    return herm(a)


def opnorm(a: np.ndarray) -> float:
    """Spectral (operator 2-) norm."""
    a = np.asarray(a)
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))


def rcond(a: np.ndarray) -> float:
    """Reciprocal 2-norm condition number, 0.0 for exactly singular input."""
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0.0
    return float(s[-1] / s[0])


def smallest_singular_value(a: np.ndarray) -> float:
    s = np.linalg.svd(a, compute_uv=False)
    return float(s[-1]) if s.size else 0.0


def is_hermitian(a: np.ndarray, tol: float = 1e-12) -> bool:
    """True when ||A - A*|| <= tol * max(1, ||A||)."""
    dev = opnorm(a - a.conj().T)
    return dev <= tol * max(1.0, opnorm(a))


def min_eig_herm(a: np.ndarray) -> float:
    """Smallest eigenvalue of the Hermitian part of ``a``."""
    return float(np.linalg.eigvalsh(herm(a))[0])


def max_eig_herm(a: np.ndarray) -> float:
    """Largest eigenvalue of the Hermitian part of ``a``."""
    return float(np.linalg.eigvalsh(herm(a))[-1])


def sqrtm_spd(a: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Unique positive-definite square root of a Hermitian positive matrix.

    Raises ValueError when ``a`` is not positive definite to tolerance.
    """
    ah = herm(as_complex_matrix(a))
    w, v = np.linalg.eigh(ah)
    if w[0] <= tol * max(1.0, abs(w[-1])) * -1.0 or w[0] <= 0.0:
        raise ValueError(f"matrix is not positive definite (min eigenvalue {w[0]:.3e})")
    return (v * np.sqrt(w)) @ v.conj().T


def invsqrtm_spd(a: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Inverse of :func:`sqrtm_spd`."""
    ah = herm(as_complex_matrix(a))
    w, v = np.linalg.eigh(ah)
    if w[0] <= 0.0:
        raise ValueError(f"matrix is not positive definite (min eigenvalue {w[0]:.3e})")
    return (v / np.sqrt(w)) @ v.conj().T


def solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """A^{-1} B through factorization (never forms the inverse)."""
    return np.linalg.solve(a, b)


def rsolve(b: np.ndarray, a: np.ndarray) -> np.ndarray:
    """B A^{-1} through factorization: solves X A = B."""
    return np.linalg.solve(a.T, b.T).T


def haar_unitary(m: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed m x m unitary via QR of a Ginibre matrix."""
    g = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    return q * (d / np.abs(d))
