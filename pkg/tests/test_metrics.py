import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from kinlab.errors import DegenerateFit, GridTooCoarse, OutOfTableRange
from kinlab.gaussians import GaussianData
from kinlab.grids import GridFunction, GridSpec, PhaseSpaceField
from kinlab.metrics import (DecaySeries, default_nu, diffusive_experiment, diffusive_rescale,
                            frac_heat_solution, gamma_lookup, heat_kernel_scale, mixed_norm,
                            mixed_norm_v_outer, p_max, plain_norm, q_exponent, rate_fit,
                            self_similar_profile)
from kinlab.stable import convolve_scale


def product_field(xg, vg, fx, fv):
    return PhaseSpaceField(xg, vg, np.outer(fx(xg.points), fv(vg.points)))


# mixed norms

def test_mixed_norm_of_product_density():
    xg, vg = GridSpec.symmetric(12.0, 0.02), GridSpec.symmetric(12.0, 0.02)
    f = product_field(xg, vg, stats.norm.pdf, stats.norm.pdf)
    assert mixed_norm(f, 1.0, 1.0) == pytest.approx(1.0, abs=1e-9)
    # factorization: ||g||_p ||h||_r with Gaussian L^p norms (2 pi)^(-(1-1/p)/2) p^(-1/2p)
    lp = lambda p: (2 * math.pi) ** (-(1 - 1 / p) / 2) * p ** (-1 / (2 * p))
    for p, r in ((2.0, 1.0), (3.0, 2.0), (1.0, 4.0)):
        assert mixed_norm(f, p, r) == pytest.approx(lp(p) * lp(r), rel=1e-8)
    assert mixed_norm(f, np.inf, 1.0) == pytest.approx(stats.norm.pdf(0), rel=1e-12)


@pytest.mark.parametrize("p", [1.0, 2.0, 3.5, np.inf])
def test_equal_exponents_give_plain_norm(p):
    xg, vg = GridSpec.symmetric(8.0, 0.1), GridSpec.symmetric(8.0, 0.1)
    f = GaussianData(1.0, 0.7, 0.4).on_grid(xg, vg)
    assert mixed_norm(f, p, p) == pytest.approx(plain_norm(f, p), rel=1e-12)
    assert mixed_norm_v_outer(f, p, p) == pytest.approx(plain_norm(f, p), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(1.0, 6.0), st.floats(-0.8, 0.8))
def test_minkowski_inclusion(p, rho):
    # for p >= 1: ||f||_{L^p_x L^1_v} <= ||f||_{L^1_v L^p_x}
    xg, vg = GridSpec.symmetric(8.0, 0.1), GridSpec.symmetric(8.0, 0.1)
    f = GaussianData(1.0, 1.0, rho).on_grid(xg, vg)
    assert mixed_norm(f, p, 1.0) <= mixed_norm_v_outer(f, 1.0, p) * (1 + 1e-12)


# fractional heat benchmark

def test_heat_kernel_scale():
    assert heat_kernel_scale(3.0, 1.0) == pytest.approx(math.sqrt(6.0))
    assert heat_kernel_scale(3.0, 0.5) == pytest.approx(3.0)


def test_heat_s1_is_gaussian():
    g = GridSpec.symmetric(60.0, 0.05)
    rho0 = GridFunction(g, stats.norm.pdf(g.points))
    assert np.array_equal(frac_heat_solution(rho0, 0.0, 1.0).values, rho0.values)
    u = frac_heat_solution(rho0, 4.0, 1.0)
    assert np.max(np.abs(u.values - stats.norm.pdf(g.points, scale=3.0))) < 1e-10


def test_heat_cauchy():
    g = GridSpec.symmetric(20000.0, 0.05)
    rho0 = GridFunction(g, stats.norm.pdf(g.points, scale=0.2))
    u = frac_heat_solution(rho0, 2.0, 0.5)
    # s = 1/2: the kernel is Cauchy of scale t; compare against quadrature at a few points
    for x in (0.0, 1.0, 5.0):
        from scipy.integrate import quad
        ref = quad(lambda y: stats.cauchy.pdf(x - y, scale=2.0) * stats.norm.pdf(y, scale=0.2), -3, 3)[0]
        i = int(np.argmin(np.abs(g.points - x)))
        assert u.values[i] == pytest.approx(ref, rel=1e-4)


def test_heat_semigroup():
    s = 0.75
    g = GridSpec.symmetric(3000.0, 0.1)
    rho0 = GridFunction(g, stats.norm.pdf(g.points))
    a = frac_heat_solution(frac_heat_solution(rho0, 1.0, s), 2.0, s)
    b = frac_heat_solution(rho0, 3.0, s)
    assert np.max(np.abs(a.values - b.values)) < 1e-8
    # scales add in the 2s power
    assert convolve_scale(heat_kernel_scale(1.0, s), heat_kernel_scale(2.0, s), s) == pytest.approx(
        heat_kernel_scale(3.0, s), rel=1e-12)


def test_heat_rejects_small_window():
    g = GridSpec.symmetric(5.0, 0.05)
    rho0 = GridFunction(g, stats.norm.pdf(g.points))
    with pytest.raises(GridTooCoarse):
        frac_heat_solution(rho0, 100.0, 1.0)


def test_self_similar_profile():
    g = GridSpec.symmetric(40.0, 0.02)
    p0 = self_similar_profile(0.0, 1.0, g)
    assert np.allclose(p0.values, stats.norm.pdf(g.points), atol=1e-12)
    p = self_similar_profile(8.0, 1.0, g)
    assert np.allclose(p.values, stats.norm.pdf(g.points, scale=3.0), atol=1e-12)
    assert p.mass() == pytest.approx(1.0, abs=1e-8)


# exponents

def test_q_exponent_examples():
    assert q_exponent(1, 1.0, 2.0) == pytest.approx(0.25)
    assert q_exponent(1, 1.0, 1.0) == 0.0
    assert q_exponent(2, 0.5, np.inf) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        q_exponent(1, 1.0, 0.5)


@given(st.floats(1.0, 50.0), st.floats(1.0, 50.0), st.floats(0.05, 1.0))
def test_q_exponent_monotone(p1, p2, s):
    lo, hi = sorted((p1, p2))
    assert q_exponent(1, s, lo) <= q_exponent(1, s, hi) + 1e-15


def test_gamma_lookup_table():
    assert gamma_lookup("kfp", 1.0, 2.0) == 0.5
    assert gamma_lookup("nlfp", 1.0, 1.0) == 0.5
    assert gamma_lookup("bgk", 1.0, 1.0) == pytest.approx(1 / 3)
    assert gamma_lookup("fkfp", 0.75, 2.0) == pytest.approx(default_nu(0.75) / 1.5)
    assert gamma_lookup("fkfp", 0.75, 2.0, nu=0.5) == pytest.approx(0.5 / 1.5)
    assert gamma_lookup("gen-bgk", 1.0, 1.0, delta=0.2) == pytest.approx(0.1)
    with pytest.raises(OutOfTableRange):
        gamma_lookup("kfp", 0.75, 2.0)
    with pytest.raises(OutOfTableRange):
        gamma_lookup("bgk", 0.2, 4.0)
    with pytest.raises(OutOfTableRange):
        gamma_lookup("fkfp", 0.75, 1.0)
    with pytest.raises(OutOfTableRange):
        gamma_lookup("wave", 1.0, 1.0)


def test_p_max_examples():
    assert p_max(1, 0.2) == pytest.approx(3.0)
    assert p_max(1, 0.3) == math.inf
    assert p_max(1, 0.25) == math.inf


# rate fitting

def series_of(times, dists, se=None):
    s = DecaySeries()
    for i, (t, d) in enumerate(zip(times, dists)):
        s.append(t, d, 0.0 if se is None else se[i])
    return s


def test_rate_fit_exact_power():
    t = np.geomspace(10, 1000, 9)
    fit = rate_fit(series_of(t, 5 * t**-0.75))
    assert fit.slope == pytest.approx(-0.75, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(5), abs=1e-10)
    assert fit.r_squared == pytest.approx(1.0)
    # default window is the last decade
    assert fit.points == 5


def test_rate_fit_noisy():
    rng = np.random.default_rng(0)
    t = np.geomspace(10, 1000, 20)
    fit = rate_fit(series_of(t, 5 * t**-0.75 * np.exp(0.03 * rng.standard_normal(t.size))), window=(10, 1000))
    assert abs(fit.slope + 0.75) <= 2 * fit.slope_se


def test_rate_fit_degenerate():
    t = np.array([20.0, 40.0, 80.0])
    with pytest.raises(DegenerateFit):
        rate_fit(series_of(t, t**-1.0))
    with pytest.raises(DegenerateFit):
        rate_fit(DecaySeries())
    # all points under the noise floor
    t = np.geomspace(10, 100, 6)
    with pytest.raises(DegenerateFit):
        rate_fit(series_of(t, t**-1.0), noise_floor=1.0)


def test_series_validation_and_csv():
    s = series_of([1.0, 2.0, 4.0], [0.5, 0.25, 0.125], [0.01, 0.0, 0.002])
    s.meta = {"model": "kfp", "s": 1.0, "d": 1, "p": 2.0, "r": 1.0, "method": "spectral", "seed": 3}
    text = s.to_csv("deadbeef")
    assert text.splitlines()[0] == "# manifest=deadbeef"
    back = DecaySeries.from_csv(text)
    assert back.times == s.times and back.distances == s.distances and back.se == s.se
    assert back.meta["model"] == "kfp"
    with pytest.raises(ValueError):
        s.append(3.0, 0.1)
    with pytest.raises(ValueError):
        s.append(5.0, -0.1)


# diffusive scaling

def test_diffusive_rescale():
    f0 = GaussianData(1.0, 1.0)
    assert diffusive_rescale(f0, 1.0) is f0
    g = diffusive_rescale(f0, 0.5)
    xg, vg = GridSpec.symmetric(8.0, 0.02), GridSpec.symmetric(8.0, 0.02)
    assert g.on_grid(xg, vg).mass() == pytest.approx(1.0, abs=1e-9)
    assert g.density(0.3, 0.2) == pytest.approx(2 * f0.density(0.6, 0.2), rel=1e-12)
    with pytest.raises(ValueError):
        diffusive_rescale(f0, 0.0)


def test_diffusive_experiment_times():
    rows = diffusive_experiment("kfp", GaussianData(1.0, 1.0), [1.0, 0.5], 2.0, 2.0)
    assert [r["time"] for r in rows] == [2.0, 8.0]
    assert rows[1]["distance"] < rows[0]["distance"]
