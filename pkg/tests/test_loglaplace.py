import math

import numpy as np
import pytest
from scipy.special import erf

from superbranch import branching as B
from superbranch import clock as C
from superbranch import loglaplace as L
from superbranch import motion as M

BM = M.MotionModel(kind="brownian")
KBM = M.MotionModel(kind="killed_brownian")
LEB = C.lebesgue()


def const(c):
    return lambda x: np.full_like(np.asarray(x, dtype=float), c)


def test_riccati_homogeneous(rk4_oracle):
    g = L.homogeneous_grid(0.0, 0.7, 64)
    v = L.solve_v(const(0.9), B.quadratic(1.3), LEB, BM, g, tol=1e-7)
    exact = 0.9 / (1 + 1.3 * 0.9 * 0.7)
    assert v.initial == pytest.approx(exact, abs=1e-6)
    oracle = rk4_oracle(lambda s, y: -1.3 * y * y, 0.9, 0.0, 0.7)
    assert v.initial == pytest.approx(oracle, abs=1e-6)


def test_stable_homogeneous():
    beta, c, f0, T = 0.5, 1.0, 2.0, 0.6
    g = L.homogeneous_grid(0.0, T, 64)
    v = L.solve_v(const(f0), B.stable(beta=beta, scale=c), LEB, BM, g, tol=1e-7)
    exact = (f0 ** (-beta) + beta * c * T) ** (-1 / beta)
    assert v.initial == pytest.approx(exact, abs=1e-6)


def test_moment_erf_killed_bm():
    g = L.SpaceTimeGrid(0.0, 0.5, 64, x_min=0.0, x_max=8.0, nx=257,
                        boundary="absorbing_at_zero")
    w = L.solve_moment(const(1.0), 0.0, LEB, KBM, g, tol=1e-6)
    for x0 in (0.5, 1.0, 2.0):
        assert w.at(0.0, x0) == pytest.approx(erf(x0 / math.sqrt(1.0)), abs=2e-5)


def test_moment_linear_discount():
    g = L.homogeneous_grid(0.0, 1.0, 64)
    w = L.solve_moment(const(1.0), 1.0, LEB, BM, g, tol=1e-10)
    assert w.initial == pytest.approx(math.exp(-1.0), abs=1e-9)


def test_solve_u_binary(rk4_oracle):
    """Backward equation for the survival functional of a binary system."""
    law = B.binary_law(0.5)
    fT, rho, T = 0.6, 2.0, 0.4
    g = L.homogeneous_grid(0.0, T, 64)
    u = L.solve_u(const(fT), law, rho, LEB, BM, g, tol=1e-7)
    wT = 1 - math.exp(-fT)
    exact = 1 - wT / (1 + rho / 2 * wT * T)
    assert u.initial == pytest.approx(exact, abs=1e-6)


def test_u_vbeta_consistency():
    """u and v_beta describe the same system: u = 1 - beta v_beta."""
    beta = 0.25
    fam = B.offspring_family(B.quadratic(1.0), beta)
    g = L.homogeneous_grid(0.0, 0.5, 128)
    f = const(0.8)
    u = L.solve_u(lambda x: beta * f(x), fam.law, fam.rate_multiplier / beta,
                  LEB, BM, g, tol=1e-8, pgf=fam.pgf_exact)
    vb = L.solve_vbeta(f, fam, LEB, BM, g, beta, tol=1e-8)
    assert u.initial == pytest.approx(1 - beta * vb.initial, abs=1e-7)


def test_vbeta_terminal_taylor():
    """beta to 0: the rescaled terminal data approach f."""
    beta = 1e-3
    f0 = 0.7
    term = -math.expm1(-beta * f0) / beta
    assert abs(term - f0) <= beta * f0 ** 2 / 2 * 1.01


def test_comparison_monotonicity():
    g = L.SpaceTimeGrid(0.0, 0.5, 32, x_min=-6.0, x_max=6.0, nx=129)
    mech = B.quadratic(1.0)
    v1 = L.solve_v(const(0.5), mech, LEB, BM, g, tol=1e-7, max_refines=0)
    v2 = L.solve_v(const(0.9), mech, LEB, BM, g, tol=1e-7, max_refines=0)
    assert np.all(v1.values <= v2.values + 1e-10)


def test_linear_domination():
    g = L.SpaceTimeGrid(0.0, 0.5, 32, x_min=-6.0, x_max=6.0, nx=129)
    v = L.solve_v(const(0.9), B.quadratic(1.0), LEB, BM, g, tol=1e-7,
                  max_refines=0)
    w = L.solve_moment(const(0.9), 0.0, LEB, BM, g, tol=1e-7, max_refines=0)
    assert np.all(v.values <= w.values + 1e-8)


def test_strang_splitting_matches_lie():
    g = L.homogeneous_grid(0.0, 0.7, 64)
    a = L.solve_v(const(0.9), B.quadratic(1.0), LEB, BM, g, tol=1e-7)
    b = L.solve_v(const(0.9), B.quadratic(1.0), LEB, BM, g, tol=1e-7,
                  splitting="strang")
    assert a.initial == pytest.approx(b.initial, abs=1e-6)


def test_grid_refinement_reported():
    g = L.SpaceTimeGrid(0.0, 0.5, 16, x_min=0.0, x_max=8.0, nx=65,
                        boundary="absorbing_at_zero")
    w = L.solve_moment(const(1.0), 0.0, LEB, KBM, g, tol=1e-5)
    assert w.refinements >= 1
    assert w.last_change < 1e-5


def test_absorbing_boundary_requires_zero_min():
    with pytest.raises(Exception):
        L.SpaceTimeGrid(0.0, 1.0, 16, x_min=-1.0, x_max=1.0, nx=65,
                        boundary="absorbing_at_zero")


def test_singular_rate_cell_average():
    K = C.power_law(1.5)
    g = L.SpaceTimeGrid(0.0, 1.0, 16, x_min=0.0, x_max=4.0, nx=65,
                        boundary="absorbing_at_zero")
    rates = L._grid_rates(K, g, 0.0)
    assert rates[0] == 0.0  # the singular node is excluded
    assert np.isfinite(rates).all()
    assert rates[1] > rates[2] > rates[3]
