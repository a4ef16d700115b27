import numpy as np
import pytest

from hamweyl import _linalg as la
from hamweyl import propagate as hp
from hamweyl import system as hsys
from hamweyl import testkit as htk
from hamweyl import weyl as hwl
from hamweyl.errors import InputError, UnsupportedError

from conftest import make_free_jacobi


# ---------------------------------------------------------------------------
# dense oracle
# ---------------------------------------------------------------------------

def test_bvp_oracle_free_chain_closed_form():
    for n in (1, 5, 10):
        sysj = make_free_jacobi((0, n + 1))
        bvp = htk.RegularBVP(sysj, 0, n + 1, hsys.dirichlet(1), hsys.dirichlet(1))
        eigs = htk.jacobi_bvp_oracle(bvp)
        expect = np.sort(2 - 2 * np.cos(np.arange(1, n + 1) * np.pi / (n + 1)))
        assert np.max(np.abs(eigs - expect)) < 1e-12


def test_bvp_oracle_single_interior_site():
    sysj = hsys.jacobi_system(lambda k: 1.0, lambda k: 0.5 if k == 1 else 0.0,
                              (0, 2))
    bvp = htk.RegularBVP(sysj, 0, 2, hsys.dirichlet(1), hsys.dirichlet(1))
    eigs = htk.jacobi_bvp_oracle(bvp)
    assert len(eigs) == 1
    assert abs(eigs[0] - 2.5) < 1e-13  # b(1) = p(2) + p(1) + q(1)


def test_bvp_oracle_block_multiplicity():
    eye2 = np.eye(2)
    sysm = hsys.jacobi_system(lambda k: eye2, lambda k: 0 * eye2, (0, 6), m=2)
    bvp = htk.RegularBVP(sysm, 0, 6, hsys.dirichlet(2), hsys.dirichlet(2))
    eigs = htk.jacobi_bvp_oracle(bvp)
    scalar = np.sort(2 - 2 * np.cos(np.arange(1, 6) * np.pi / 6))
    assert np.max(np.abs(eigs - np.sort(np.repeat(scalar, 2)))) < 1e-12


def test_bvp_oracle_rejects_unsupported():
    sysj = make_free_jacobi((0, 5))
    with pytest.raises(UnsupportedError):
        htk.jacobi_bvp_oracle(htk.RegularBVP(sysj, 0, 5, hsys.neumann(1),
                                             hsys.dirichlet(1)))
    sysd = hsys.dirac_system(lambda k: 1.0, (0, 5))
    with pytest.raises(UnsupportedError):
        htk.jacobi_bvp_oracle(htk.RegularBVP(sysd, 0, 5, hsys.dirichlet(1),
                                             hsys.dirichlet(1)))


# ---------------------------------------------------------------------------
# scan route
# ---------------------------------------------------------------------------

def test_eig_scan_agrees_with_oracle():
    for m, seed in ((1, 201), (2, 202)):
        sysr = htk.random_system(m, (0, 11), seed=seed, cls="jacobi")
        al = be = hsys.dirichlet(m)
        oracle = htk.jacobi_bvp_oracle(htk.RegularBVP(sysr, 0, 11, al, be))
        lo, hi = float(oracle[0]) - 0.5, float(oracle[-1]) + 0.5
        found = htk.eig_via_detPhi(sysr, 0, 11, al, be, (lo, hi), grid_n=1601)
        # every oracle value has a nearby candidate and vice versa
        for lam in oracle:
            assert np.min(np.abs(found - lam)) < 1e-8
        for f in found:
            assert np.min(np.abs(oracle - f)) < 1e-8


def test_eig_scan_empty_below_spectrum():
    sysj = make_free_jacobi((0, 11))
    found = htk.eig_via_detPhi(sysj, 0, 11, hsys.dirichlet(1),
                               hsys.dirichlet(1), (-2.0, -0.1), grid_n=301)
    assert len(found) == 0


def test_eig_scan_count_mismatch_warns():
    eye2 = np.eye(2)
    sysm = hsys.jacobi_system(lambda k: eye2, lambda k: 0 * eye2, (0, 6), m=2)
    oracle = htk.jacobi_bvp_oracle(
        htk.RegularBVP(sysm, 0, 6, hsys.dirichlet(2), hsys.dirichlet(2)))
    with pytest.warns(RuntimeWarning, match="coarse"):
        # doubly degenerate eigenvalues collapse to single candidates
        htk.eig_via_detPhi(sysm, 0, 6, hsys.dirichlet(2), hsys.dirichlet(2),
                           (-0.5, 4.5), grid_n=801, expected_count=len(oracle))


def test_detected_eigenvalues_are_m_poles():
    sysj = make_free_jacobi((0, 11))
    al = be = hsys.dirichlet(1)
    found = htk.eig_via_detPhi(sysj, 0, 11, al, be, (-0.5, 4.5), grid_n=1201)
    assert len(found) == 10
    for lam in found:
        # the norm of M exceeds 1e6 somewhere within 1e-6 of the eigenvalue
        fund = hp.fundamental(sysj, complex(lam + 1e-8), 0, al, (0, 11))
        M, smin, _ = hwl.m_from_hat(sysj, fund.hat(11), 11, be)
        assert M is None or la.opnorm(M) > 1e6


# ---------------------------------------------------------------------------
# constant-coefficient fixed point
# ---------------------------------------------------------------------------

def test_fixed_point_free_jacobi_quadratic():
    sysj = make_free_jacobi((0, 10))
    for z in (1j, 0.5 + 0.25j, -1.0 + 2.0j):
        v = htk.constant_riccati_fixed_point(sysj, z, +1)[0, 0]
        assert abs(v * v - z * v + z) < 1e-12
        assert (np.sign(z.imag) * v.imag) < 0
        vm = htk.constant_riccati_fixed_point(sysj, z, -1)[0, 0]
        assert abs(vm * vm - z * vm + z) < 1e-12
        assert (np.sign(z.imag) * vm.imag) > 0


def test_fixed_point_dirac_scalar():
    sysd = hsys.dirac_system(lambda k: 1.0, (0, 10))
    z = 0.3 + 0.8j
    v = htk.constant_riccati_fixed_point(sysd, z, +1)[0, 0]
    # fixed point of V = z + (1/V - z)^{-1}
    assert abs(v - (z + 1.0 / (1.0 / v - z))) < 1e-12


def test_fixed_point_has_zero_riccati_residual():
    sysj = make_free_jacobi((0, 10))
    z = 1j
    v = htk.constant_riccati_fixed_point(sysj, z, +1)
    rep = hwl.riccati_residual(sysj, z, {k: v for k in range(0, 6)})
    assert rep.max_norm < 1e-12


def test_fixed_point_matrix_case_consistency():
    rng = np.random.default_rng(404)
    g = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    b = g + 3.0 * np.eye(2)  # well-conditioned constant coefficient
    sysd = hsys.dirac_system(lambda k: b, (0, 4), m=2)
    z = 0.4 + 0.9j
    v = htk.constant_riccati_fixed_point(sysd, z, +1)
    rep = hwl.riccati_residual(sysd, z, {0: v, 1: v})
    assert rep.max_norm < 1e-11
    assert la.max_eig_herm(la.imag_part(v)) < 0  # sigma = +1 branch


def test_fixed_point_input_validation():
    sysj = make_free_jacobi((0, 5))
    with pytest.raises(InputError):
        htk.constant_riccati_fixed_point(sysj, 1.5 + 0.0j, +1)
    varying = hsys.jacobi_system(lambda k: 1.0, lambda k: float(k), (0, 5))
    with pytest.raises(InputError):
        htk.constant_riccati_fixed_point(varying, 1j, +1)


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

def test_random_system_classes_validate():
    for cls in ("jacobi", "dirac", "general_A12zero"):
        sysr = htk.random_system(2, (0, 6), seed=7, cls=cls)
        assert hsys.validate_pointwise(sysr).passed
        for z in hsys.DEFAULT_Z_SAMPLE:
            assert hsys.check_wellposed(sysr, z).passed
            assert hsys.check_definiteness(sysr, z, (0, 2)).definite


def test_random_system_deterministic():
    a = htk.random_system(3, (0, 5), seed=11, cls="general_A12zero")
    b = htk.random_system(3, (0, 5), seed=11, cls="general_A12zero")
    for k in a.sites:
        assert np.array_equal(a.A(k), b.A(k))
        assert np.array_equal(a.B(k), b.B(k))
        assert np.array_equal(a.rho(k), b.rho(k))
    c = htk.random_system(3, (0, 5), seed=12, cls="general_A12zero")
    assert not np.allclose(a.B(0), c.B(0))


def test_random_system_a12_vanishes():
    sysr = htk.random_system(3, (0, 5), seed=13, cls="general_A12zero")
    m = sysr.m
    for k in sysr.sites:
        assert np.allclose(sysr.A(k)[:m, m:], 0)
        assert la.rcond(sysr.B(k)[:m, m:]) > 1e-3
