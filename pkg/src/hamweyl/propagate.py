"""Solution propagation for discrete Hamiltonian systems.

The canonical state at site k is the hat pair (psi1(k), psi2(k+1)), which
carries the natural initial and boundary data of the system. Forward and
backward steps solve the two coupled first-order recurrences

    rho(k)   psi2(k+1) = P11(k) psi1(k) + P12(k) psi2(k),
    rho(k-1) psi1(k-1) = P21(k) psi1(k) + P22(k) psi2(k),

with P = z A + B, by factorized linear solves of the off-diagonal pencil
blocks (never explicit inversion); the reciprocal condition of each solve is
checked against ``rcond_min``.

Trajectories are stored densely with no re-orthogonalization. Column norms
beyond 1e150 raise a scale warning; for long ranges at |Im z| away from zero
use the Riccati form instead.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _linalg as la
from .errors import InputError, SteppingError
from .system import (
    RCOND_MIN,
    BoundaryData,
    HamiltonianSystem,
    symplectic_unit,
    weighted_boundary,
)

__all__ = [
    "SCALE_LIMIT",
    "HatState",
    "HatTrajectory",
    "FundamentalMatrix",
    "step_forward",
    "step_backward",
    "hat_trajectory",
    "fundamental",
    "lagrange_bilinear",
    "lagrange_step_defect",
    "lagrange_telescoping_check",
    "fundamental_pair_defect",
    "weyl_solution",
    "jacobi_apply",
]

SCALE_LIMIT = 1e150


@dataclass(frozen=True)
class HatState:
    """Hat-state (psi1(k); psi2(k+1)) of r solution columns at one site."""

    k: int
    z: complex
    data: np.ndarray  # (2m, r)

    @property
    def m(self) -> int:
        return self.data.shape[0] // 2

    @property
    def r(self) -> int:
        return self.data.shape[1]

    @property
    def psi1(self) -> np.ndarray:
        return self.data[: self.m]

    @property
    def psi2_next(self) -> np.ndarray:
        return self.data[self.m:]


def _as_state_data(data, m: int) -> np.ndarray:
    arr = np.asarray(data, dtype=complex)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != 2 * m or not 1 <= arr.shape[1] <= 2 * m:
        raise InputError(f"state data must be (2m, r) with 1 <= r <= 2m, got {arr.shape}")
    return arr


def _checked_solve(mat: np.ndarray, rhs: np.ndarray, site: int, which: str,
                   rcond_min: float) -> np.ndarray:
    rc = la.rcond(mat)
    if rc < rcond_min:
        raise SteppingError(site=site, rcond=rc, which=which)
    return np.linalg.solve(mat, rhs)


def step_forward(sys: HamiltonianSystem, z: complex, state: HatState,
                 rcond_min: float = RCOND_MIN) -> HatState:
    """Advance a hat-state from site k to k+1.

    Solves the (2,1) pencil at the target site for psi1(k+1), then recovers
    psi2(k+2) from the weight at k+1.
    """
    k = state.k
    p11, p12, p21, p22 = sys.pencil_blocks(z, k + 1)
    rhs = sys.rho(k) @ state.psi1 - p22 @ state.psi2_next
    psi1_next = _checked_solve(p21, rhs, k + 1, "(2,1)", rcond_min)
    psi2_next2 = np.linalg.solve(sys.rho(k + 1),
                                 p11 @ psi1_next + p12 @ state.psi2_next)
    return HatState(k=k + 1, z=z, data=np.vstack([psi1_next, psi2_next2]))


def step_backward(sys: HamiltonianSystem, z: complex, state: HatState,
                  rcond_min: float = RCOND_MIN) -> HatState:
    """Retreat a hat-state from site k to k-1; exact inverse of the forward step.

    Solves the (1,2) pencil at the departing site for psi2(k), then recovers
    psi1(k-1) from the weight at k-1.
    """
    k = state.k
    p11, p12, p21, p22 = sys.pencil_blocks(z, k)
    rhs = sys.rho(k) @ state.psi2_next - p11 @ state.psi1
    psi2_here = _checked_solve(p12, rhs, k, "(1,2)", rcond_min)
    psi1_prev = np.linalg.solve(sys.rho(k - 1),
                                p21 @ state.psi1 + p22 @ psi2_here)
    return HatState(k=k - 1, z=z, data=np.vstack([psi1_prev, psi2_here]))


class HatTrajectory:
    """Dense hat-states of r solution columns over a contiguous site range."""

    def __init__(self, sys: HamiltonianSystem, z: complex, k_lo: int,
                 data: np.ndarray):
        self.sys = sys
        self.z = z
        self.k_lo = k_lo
        self.data = data  # (n, 2m, r)
        self.data.setflags(write=False)
        self.scale_warning = bool(np.max(np.abs(data)) > SCALE_LIMIT)
        if self.scale_warning:
            warnings.warn(
                "solution columns exceed 1e150; consider the Riccati form "
                "for long ranges", RuntimeWarning, stacklevel=3)

    @property
    def m(self) -> int:
        return self.data.shape[1] // 2

    @property
    def r(self) -> int:
        return self.data.shape[2]

    @property
    def k_hi(self) -> int:
        return self.k_lo + self.data.shape[0] - 1

    @property
    def sites(self) -> range:
        return range(self.k_lo, self.k_hi + 1)

    def _i(self, k: int) -> int:
        i = k - self.k_lo
        if not 0 <= i < self.data.shape[0]:
            raise InputError(f"site {k} outside trajectory range "
                             f"[{self.k_lo},{self.k_hi}]")
        return i

    def hat(self, k: int) -> np.ndarray:
        return self.data[self._i(k)]

    def state(self, k: int) -> HatState:
        return HatState(k=k, z=self.z, data=self.hat(k))

    def psi1(self, k: int) -> np.ndarray:
        return self.hat(k)[: self.m]

    def psi2_next(self, k: int) -> np.ndarray:
        """psi2 at site k+1 (the bottom half of the hat at k)."""
        return self.hat(k)[self.m:]

    def psi2(self, k: int) -> np.ndarray:
        """psi2 at site k itself.

        Interior sites read it from the neighbouring hat; at the lower edge
        it is recovered by one (1,2)-pencil solve.
        """
        if k - 1 >= self.k_lo:
            return self.hat(k - 1)[self.m:]
        p11, p12, _, _ = self.sys.pencil_blocks(self.z, k)
        rhs = self.sys.rho(k) @ self.psi2_next(k) - p11 @ self.psi1(k)
        return _checked_solve(p12, rhs, k, "(1,2)", RCOND_MIN)

    def plain(self, k: int) -> np.ndarray:
        """Plain solution value (psi1(k); psi2(k)) as a (2m, r) array."""
        return np.vstack([self.psi1(k), self.psi2(k)])


def hat_trajectory(sys: HamiltonianSystem, z: complex, k_start: int, init,
                   krange, rcond_min: float = RCOND_MIN) -> HatTrajectory:
    """Propagate an initial hat-state over an inclusive site range.

    ``krange = (lo, hi)`` must contain ``k_start``; stepping proceeds forward
    from k_start to hi and backward from k_start to lo.
    """
    init = _as_state_data(init, sys.m)
    lo, hi = int(krange[0]), int(krange[1])
    if not lo <= k_start <= hi:
        raise InputError(f"k_start={k_start} outside requested range [{lo},{hi}]")
    n = hi - lo + 1
    data = np.empty((n, init.shape[0], init.shape[1]), dtype=complex)
    data[k_start - lo] = init
    state = HatState(k=k_start, z=z, data=init)
    for k in range(k_start, hi):
        state = step_forward(sys, z, state, rcond_min)
        data[state.k - lo] = state.data
    state = HatState(k=k_start, z=z, data=init)
    for k in range(k_start, lo, -1):
        state = step_backward(sys, z, state, rcond_min)
        data[state.k - lo] = state.data
    return HatTrajectory(sys, z, lo, data)


class FundamentalMatrix(HatTrajectory):
    """Normalized 2m x 2m fundamental solution over a site range.

    The left m columns satisfy the boundary condition attached to the base
    site k0, the right m columns are their symplectic complement; the hat
    value at k0 is diag(rho, rho)^{-1} (a~*  J a~*) with a~ the weighted
    boundary matrix. Entries are polynomial in z; the stored trajectory is
    checked for finiteness and overflow only.
    """

    def __init__(self, sys, z, k_lo, data, k0, alpha, alpha_tilde):
        super().__init__(sys, z, k_lo, data)
        self.k0 = k0
        self.alpha = alpha
        self.alpha_tilde = alpha_tilde

    def Theta_hat(self, k: int) -> np.ndarray:
        return self.hat(k)[:, : self.m]

    def Phi_hat(self, k: int) -> np.ndarray:
        return self.hat(k)[:, self.m:]

    def Theta(self, k: int) -> np.ndarray:
        return self.plain(k)[:, : self.m]

    def Phi(self, k: int) -> np.ndarray:
        return self.plain(k)[:, self.m:]

    def theta1(self, k: int) -> np.ndarray:
        return self.hat(k)[: self.m, : self.m]

    def phi1(self, k: int) -> np.ndarray:
        return self.hat(k)[: self.m, self.m:]

    def theta2(self, k: int) -> np.ndarray:
        return self.plain(k)[self.m:, : self.m]

    def phi2(self, k: int) -> np.ndarray:
        return self.plain(k)[self.m:, self.m:]


def initial_hat(sys: HamiltonianSystem, k0: int, alpha) -> tuple[np.ndarray, np.ndarray]:
    """Initial fundamental hat value at k0 and the weighted boundary matrix.

    ``alpha`` may be :class:`BoundaryData` (weighted internally) or an m x 2m
    array already in weighted form.
    """
    if isinstance(alpha, BoundaryData):
        at = weighted_boundary(alpha, sys, k0)
    else:
        at = la.as_complex_matrix(alpha)
        if at.shape != (sys.m, 2 * sys.m):
            raise InputError(f"weighted boundary matrix must be m x 2m, got {at.shape}")
    j = symplectic_unit(sys.m)
    cols = np.hstack([at.conj().T, j @ at.conj().T])
    init = np.linalg.solve(sys.i_rho(k0), cols)
    return init, at


def fundamental(sys: HamiltonianSystem, z: complex, k0: int, alpha, krange,
                rcond_min: float = RCOND_MIN) -> FundamentalMatrix:
    """Normalized fundamental system over ``krange`` based at ``k0``."""
    init, at = initial_hat(sys, k0, alpha)
    traj = hat_trajectory(sys, z, k0, init, krange, rcond_min)
    return FundamentalMatrix(sys, z, traj.k_lo, traj.data, k0, alpha, at)


# ---------------------------------------------------------------------------
# bilinear form
# ---------------------------------------------------------------------------

def lagrange_bilinear(sys: HamiltonianSystem, state1: HatState,
                      state2: HatState) -> np.ndarray:
    """Weighted symplectic pairing of two hat-states at a common site.

    Returns the r1 x r2 matrix state1* J_rho(k) state2. Along solution
    trajectories its site difference telescopes against (z2 - conj(z1))
    times the plain quadratic pairing through A; see
    :func:`lagrange_step_defect`.
    """
    if state1.k != state2.k:
        raise InputError(f"states are at different sites ({state1.k} vs {state2.k})")
    return state1.data.conj().T @ sys.j_rho(state1.k) @ state2.data


def lagrange_step_defect(sys, prev1: HatState, cur1: HatState,
                         prev2: HatState, cur2: HatState) -> float:
    """Relative defect of the one-step telescoping identity at cur.k.

    Checks g(k) - g(k-1) = (z2 - conj(z1)) Psi1(k)* A(k) Psi2(k) with
    g the pairing of :func:`lagrange_bilinear` and Psi the plain values.
    """
    k = cur1.k
    g_cur = lagrange_bilinear(sys, cur1, cur2)
    g_prev = lagrange_bilinear(sys, prev1, prev2)
    plain1 = np.vstack([cur1.psi1, prev1.psi2_next])
    plain2 = np.vstack([cur2.psi1, prev2.psi2_next])
    rhs = (cur2.z - np.conj(cur1.z)) * (plain1.conj().T @ sys.A(k) @ plain2)
    defect = la.opnorm((g_cur - g_prev) - rhs)
    scale = 1.0 + la.opnorm(g_cur) + la.opnorm(g_prev) + la.opnorm(rhs)
    return defect / scale


def lagrange_telescoping_check(sys: HamiltonianSystem, z1: complex, z2: complex,
                               k0: int, steps: int, init1=None, init2=None,
                               renormalize: bool = True) -> float:
    """Stream the telescoping identity over ``steps`` forward steps.

    Returns the maximum relative one-step defect. With ``renormalize`` both
    trajectories are rescaled by a common scalar after each step, so the
    check runs over windows of thousands of steps without overflow (the
    identity is bilinear, hence invariant under a shared rescaling).
    """
    m = sys.m
    if init1 is None:
        init1 = np.eye(2 * m, dtype=complex)
    if init2 is None:
        init2 = np.eye(2 * m, dtype=complex)
    s1 = HatState(k=k0, z=z1, data=_as_state_data(init1, m))
    s2 = HatState(k=k0, z=z2, data=_as_state_data(init2, m))
    worst = 0.0
    for _ in range(steps):
        n1 = step_forward(sys, z1, s1)
        n2 = step_forward(sys, z2, s2)
        worst = max(worst, lagrange_step_defect(sys, s1, n1, s2, n2))
        if renormalize:
            scale = max(np.max(np.abs(n1.data)), np.max(np.abs(n2.data)), 1.0)
            n1 = HatState(n1.k, z1, n1.data / scale)
            n2 = HatState(n2.k, z2, n2.data / scale)
        s1, s2 = n1, n2
    return worst


def fundamental_pair_defect(fund_z: FundamentalMatrix,
                            fund_zbar: FundamentalMatrix) -> float:
    """Max relative deviation of hat(zbar,k)* J_rho(k) hat(z,k) from -J.

    Normalized per site by the product of the paired trajectory norms, the
    meaningful scale when fundamental solutions grow along the window.
    """
    sys = fund_z.sys
    j = symplectic_unit(sys.m)
    worst = 0.0
    for k in fund_z.sites:
        if k < fund_zbar.k_lo or k > fund_zbar.k_hi:
            continue
        g = fund_zbar.hat(k).conj().T @ sys.j_rho(k) @ fund_z.hat(k)
        scale = 1.0 + la.opnorm(fund_zbar.hat(k)) * la.opnorm(fund_z.hat(k)) \
            * la.opnorm(sys.rho(k))
        worst = max(worst, la.opnorm(g + j) / scale)
    return worst


# ---------------------------------------------------------------------------
# Weyl solutions and the Jacobi expression
# ---------------------------------------------------------------------------

class WeylTrajectory(HatTrajectory):
    """Hat-states of the 2m x m family Psi (I; M) over the stored range."""

    def __init__(self, sys, z, k_lo, data, k0, M):
        super().__init__(sys, z, k_lo, data)
        self.k0 = k0
        self.M = M

    def u1(self, k: int) -> np.ndarray:
        return self.psi1(k)

    def u2_next(self, k: int) -> np.ndarray:
        return self.psi2_next(k)

    def u2(self, k: int) -> np.ndarray:
        return self.psi2(k)


def weyl_solution(fund: FundamentalMatrix, M) -> WeylTrajectory:
    """Column family U = Psi (I; M) at every stored site of a fundamental."""
    m = fund.m
    M = la.as_complex_matrix(M, (m, m), "M")
    stack = np.vstack([np.eye(m, dtype=complex), M])
    data = fund.data @ stack
    return WeylTrajectory(fund.sys, fund.z, fund.k_lo, data, fund.k0, M)


def jacobi_apply(sys: HamiltonianSystem, y, k: int) -> np.ndarray:
    """Apply the three-term Jacobi expression a y+ + a- y- + b y at site k.

    ``y`` is a callable or dict of m x r values; ``sys`` must carry Jacobi
    coefficients (built by :func:`hamweyl.system.jacobi_system`). psi1
    components of system solutions satisfy this expression with eigenvalue z.
    """
    if sys.jacobi is None:
        raise InputError("system carries no Jacobi coefficients")
    get = y if callable(y) else y.__getitem__
    jc = sys.jacobi
    y_prev = np.atleast_1d(np.asarray(get(k - 1), dtype=complex))
    y_here = np.atleast_1d(np.asarray(get(k), dtype=complex))
    y_next = np.atleast_1d(np.asarray(get(k + 1), dtype=complex))
    return jc.a(k) @ y_next + jc.a(k - 1) @ y_prev + jc.b(k) @ y_here
