import math

import numpy as np
import pytest
from scipy.special import erf
from scipy.stats import norm

from superbranch import motion as M
from superbranch.rng import replica_rng


def test_bridge_survival_formula():
    assert M.bridge_survival(1.0, 1.0, 0.5) == pytest.approx(
        1.0 - math.exp(-2 * 1.0 * 1.0 / 0.5))
    assert M.bridge_survival(5.0, 5.0, 1e-6) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        M.bridge_survival(0.0, 1.0, 0.5)


def test_model_validation():
    with pytest.raises(ValueError):
        M.MotionModel(kind="alpha_stable", alpha=2.5)
    with pytest.raises(ValueError):
        M.MotionModel(kind="nonsense")
    assert M.MotionModel(kind="brownian").conservative
    assert M.MotionModel(kind="killed_brownian").can_die


def test_killed_bm_survival_matches_erf():
    """One-step terminal sampling must reproduce the reflection principle."""
    mot = M.MotionModel(kind="killed_brownian")
    rng = replica_rng(11, 0)
    x0, t = 0.8, 0.5
    pos, alive = M._terminal_positions(mot, 0.0, x0, t, 40_000, rng)
    target = erf(x0 / math.sqrt(2 * t))
    p = alive.mean()
    se = math.sqrt(p * (1 - p) / len(alive))
    assert abs(p - target) <= 4 * se


def test_killed_bm_terminal_density_vs_image_charge():
    """Survivor positions follow the difference-of-Gaussians density."""
    mot = M.MotionModel(kind="killed_brownian")
    rng = replica_rng(12, 0)
    x0, t = 1.0, 0.7
    pos, alive = M._terminal_positions(mot, 0.0, x0, t, 60_000, rng)
    ys = pos[alive]
    # image-charge subdensity p(y) = phi_t(y - x0) - phi_t(y + x0), y > 0
    s = math.sqrt(t)
    for y in (0.5, 1.0, 2.0):
        emp = np.mean(ys <= y) * alive.mean()
        target = (norm.cdf((y - x0) / s) - norm.cdf(-x0 / s)) - \
                 (norm.cdf((y + x0) / s) - norm.cdf(x0 / s))
        se = math.sqrt(max(emp * (1 - emp), 1e-4) / len(alive))
        assert abs(emp - target) <= 5 * se


def test_brownian_semigroup_mc():
    mot = M.MotionModel(kind="brownian")
    rng = replica_rng(13, 0)
    f = lambda x: np.asarray(x) ** 2
    est, se = M.semigroup_mc(mot, f, 0.0, 1.5, 2.0, 30_000, rng)
    assert abs(est - (1.5 ** 2 + 2.0)) <= 4 * se


def test_alpha_stable_scaling():
    """Empirical quantiles of the Cauchy case match the closed form."""
    rng = replica_rng(14, 0)
    draws = np.array([M.sample_standard_stable(1.0, rng) for _ in range(20_000)])
    # standard Cauchy: P(X <= 1) = 3/4
    p = np.mean(draws <= 1.0)
    assert abs(p - 0.75) <= 4 * math.sqrt(0.75 * 0.25 / len(draws))


def test_bessel3_step_never_hits_zero():
    mot = M.MotionModel(kind="bessel3")
    rng = replica_rng(15, 0)
    pos, alive = M._terminal_positions(mot, 0.0, 0.05, 1.0, 5000, rng)
    assert alive is None  # the Bessel(3) process is conservative
    assert (pos > 0).all()


def test_bessel3_mean_reciprocal_is_harmonic():
    """E[1/R_t] = (1/x) * P(|N(0,t)| < x) for the Bessel(3) process."""
    mot = M.MotionModel(kind="bessel3")
    rng = replica_rng(16, 0)
    x0, t = 1.2, 0.6
    pos, _ = M._terminal_positions(mot, 0.0, x0, t, 40_000, rng)
    vals = 1.0 / pos
    est, se = vals.mean(), vals.std(ddof=1) / math.sqrt(len(vals))
    target = erf(x0 / math.sqrt(2 * t)) / x0
    assert abs(est - target) <= 4 * se


def test_sample_path_records_kill():
    mot = M.MotionModel(kind="killed_brownian")
    rng = replica_rng(17, 0)
    killed = 0
    for _ in range(200):
        path = M.sample_path(mot, 0.0, 0.3, 1.0, 0.02, rng)
        if path.kill_time is not None:
            killed += 1
            assert path.position_at(1.0) == 0.0
    assert killed > 50  # survival prob from 0.3 over 1 unit is about 0.24


def test_hitting_exp_functional_two_sided_barrier():
    """E[exp(-tau)] for tau the hitting time of |x| = 1 from 0 is 1/cosh(sqrt 2)."""
    mot = M.MotionModel(kind="brownian")
    rng = replica_rng(18, 0)
    V = lambda s, x: np.abs(np.asarray(x)) >= 1.0
    res = M.hitting_exp_functional(mot, V, 1, 0.0, 0.0,
                                   4000, rng, horizon=6.0, dt=1e-3)
    target = 1.0 / math.cosh(math.sqrt(2.0))
    # discrete monitoring hits the barrier a touch late (downward bias)
    assert abs(res.estimate - target) <= 4 * res.stderr + 0.02
    assert res.tail_bound <= math.exp(-6.0)
