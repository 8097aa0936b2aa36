import math

import numpy as np
import pytest
from numpy.polynomial import legendre as npleg

from nwp_dwarfs.grids import make_gaussian_grid
from nwp_dwarfs.legendre import build_legendre_table, legendre_matrix


def rodrigues(n, m, x):
    """Normalised P_n^m from (1-x^2)^{m/2} d^m/dx^m P_n, no phase factor."""
    coef = np.zeros(n + 1)
    coef[n] = 1.0
    dm = npleg.legder(coef, m) if m else coef
    norm = math.sqrt((2 * n + 1) / 2 * math.factorial(n - m) / math.factorial(n + m))
    return norm * (1 - x * x) ** (m / 2) * npleg.legval(x, dm)


@pytest.mark.parametrize("N", [5, 21, 42])
def test_discrete_orthonormality(N):
    g = make_gaussian_grid(N)
    t = build_legendre_table(g)
    for m in range(N + 1):
        P = t.order(m)
        gram = (P * g.weights) @ P.T
        assert np.max(np.abs(gram - np.eye(N + 1 - m))) < 1e-10


def test_p00_and_p10():
    g = make_gaussian_grid(10)
    t = build_legendre_table(g)
    np.testing.assert_allclose(t.pbar[0, 0], 1 / math.sqrt(2), atol=1e-15)
    p10 = t.pbar[0, 1]
    np.testing.assert_allclose(p10, math.sqrt(1.5) * g.latitudes, atol=1e-14)
    assert abs(np.sum(g.weights * p10**2) - 1) < 1e-12


def test_against_rodrigues():
    x = np.random.default_rng(5).uniform(-0.95, 0.95, 5)
    P = legendre_matrix(10, x)
    for m in range(11):
        for n in range(m, 11):
            ref = rodrigues(n, m, x)
            assert np.max(np.abs(P[m, n] - ref)) <= 1e-9 * max(1.0, np.max(np.abs(ref)))


def test_parity():
    g = make_gaussian_grid(30)
    t = build_legendre_table(g)
    K = g.nlat
    for m in range(31):
        for n in range(m, 31):
            v = t.pbar[m, n]
            np.testing.assert_allclose(v[::-1], (-1) ** (n + m) * v, atol=1e-12)


def test_bounds_and_stability():
    x = np.linspace(-1, 1, 401)
    P = legendre_matrix(100, x)
    assert np.all(np.isfinite(P))
    n = np.arange(101)
    sup = np.sqrt((2 * n + 1) / 2)
    assert np.all(np.abs(P) <= sup[None, :, None] + 1e-9)
    assert np.max(np.abs(P)) < 10 * sup.max()
