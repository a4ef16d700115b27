"""Vectorized hat propagation over arrays of spectral parameters.

Used by grid sweeps (eigenvalue scans, spectral-measure quadrature) where the
same fundamental initial value is propagated at many z simultaneously. The
per-step reciprocal-condition bookkeeping of the scalar path is skipped here;
callers are expected to work with pencils that are regular on the swept set
(exactly singular pencils surface as LinAlgError).
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .system import HamiltonianSystem


def _blocks(sys: HamiltonianSystem, z: np.ndarray, k: int):
    m = sys.m
    p = z[:, None, None] * sys.A(k)[None, :, :] + sys.B(k)[None, :, :]
    return p[:, :m, :m], p[:, :m, m:], p[:, m:, :m], p[:, m:, m:]


def batch_hats_at(sys: HamiltonianSystem, z, k0: int, init: np.ndarray,
                  ell: int) -> np.ndarray:
    """Propagate one shared (2m, r) initial hat from k0 to ell for every z.

    Returns an (N, 2m, r) array of hat values at ell.
    """
    z = np.asarray(z, dtype=complex).reshape(-1)
    n = z.shape[0]
    m = sys.m
    state = np.broadcast_to(init, (n,) + init.shape).copy()
    if ell >= k0:
        for k in range(k0, ell):
            p11, p12, p21, p22 = _blocks(sys, z, k + 1)
            rho_k = sys.rho(k)
            rhs = rho_k[None] @ state[:, :m] - p22 @ state[:, m:]
            psi1 = np.linalg.solve(p21, rhs)
            rho_inv = np.linalg.inv(sys.rho(k + 1))
            psi2 = rho_inv[None] @ (p11 @ psi1 + p12 @ state[:, m:])
            state = np.concatenate([psi1, psi2], axis=1)
    else:
        for k in range(k0, ell, -1):
            p11, p12, p21, p22 = _blocks(sys, z, k)
            rhs = sys.rho(k)[None] @ state[:, m:] - p11 @ state[:, :m]
            psi2 = np.linalg.solve(p12, rhs)
            rho_inv = np.linalg.inv(sys.rho(k - 1))
            psi1 = rho_inv[None] @ (p21 @ state[:, :m] + p22 @ psi2)
            state = np.concatenate([psi1, psi2], axis=1)
    return state


def batch_m_regular(sys: HamiltonianSystem, z, k0: int, ell: int,
                    alpha_tilde: np.ndarray, beta_tilde: np.ndarray):
    """M(z) = -[bt Phi^(z,ell)]^{-1} [bt Theta^(z,ell)] over a z array.

    Returns (M, smin) with M of shape (N, m, m) and smin the smallest
    singular value of the boundary-weighted right block per z. Entries with
    an exactly singular right block (z on an eigenvalue) come back as NaN.
    """
    if ell == k0:
        raise InputError("ell must differ from k0")
    btheta, bphi = batch_boundary_blocks(sys, z, k0, ell, alpha_tilde,
                                         beta_tilde)
    smin = np.linalg.svd(bphi, compute_uv=False)[:, -1]
    try:
        M = -np.linalg.solve(bphi, btheta)
    except np.linalg.LinAlgError:
        M = np.full_like(btheta, np.nan)
        for i in range(len(M)):
            try:
                M[i] = -np.linalg.solve(bphi[i], btheta[i])
            except np.linalg.LinAlgError:
                pass
    return M, smin


def batch_boundary_blocks(sys: HamiltonianSystem, z, k0: int, ell: int,
                          alpha_tilde: np.ndarray, beta_tilde: np.ndarray):
    """(bt Theta^, bt Phi^) at ell over a z array, each (N, m, m)."""
    if ell == k0:
        raise InputError("ell must differ from k0")
    from .propagate import initial_hat

    m = sys.m
    init, _ = initial_hat(sys, k0, alpha_tilde)
    hats = batch_hats_at(sys, z, k0, init, ell)
    btheta = beta_tilde[None] @ hats[:, :, :m]
    bphi = beta_tilde[None] @ hats[:, :, m:]
    return btheta, bphi


def batch_boundary_smin(sys: HamiltonianSystem, z, k0: int, ell: int,
                        alpha_tilde: np.ndarray, beta_tilde: np.ndarray):
    """Smallest singular value of the boundary-weighted right block per z."""
    _, bphi = batch_boundary_blocks(sys, z, k0, ell, alpha_tilde, beta_tilde)
    return np.linalg.svd(bphi, compute_uv=False)[:, -1]
