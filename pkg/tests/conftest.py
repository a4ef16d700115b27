import numpy as np
import pytest

from hamweyl import system as hsys
from hamweyl import testkit as htk


@pytest.fixture
def free_jacobi():
    """Scalar p=1, q=0 system on a window comfortably larger than any test."""
    return hsys.jacobi_system(lambda k: 1.0, lambda k: 0.0, (-60, 260))


@pytest.fixture
def dirichlet1():
    return hsys.dirichlet(1)


def make_free_jacobi(window):
    return hsys.jacobi_system(lambda k: 1.0, lambda k: 0.0, window)


def random_battery(n, window, classes=("jacobi", "dirac", "general_A12zero"),
                   ms=(1, 2, 3), seed0=100):
    """Deterministic list of (sys, m, class) tuples for batteries."""
    out = []
    for i in range(n):
        m = ms[i % len(ms)]
        cls = classes[i % len(classes)]
        out.append(htk.random_system(m, window, seed=seed0 + i, cls=cls))
    return out


def rel_err(a, b):
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    denom = 1.0 + max(np.linalg.norm(a), np.linalg.norm(b))
    return np.linalg.norm(a - b) / denom
