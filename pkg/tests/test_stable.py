import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.integrate import quad

from kinlab.checks import convolution_stability_error, sampler_ks, scaling_collapse_error
from kinlab.errors import AliasingDetected, GridTooCoarse, InvalidStability
from kinlab.grids import GridFunction, GridSpec
from kinlab.stable import (StableLaw, clt_iterated_convolution, convolve_scale, density,
                           density_grid, distance_constant, exact_scale_distance, lp_norm, sample,
                           scale_distance)

# frozen oracles
GAUSS_AT_0 = 0.3989422804014327  # (2 pi)^-1/2
CAUCHY_AT_0 = 0.3183098861837907  # 1/pi
GAUSS_L2 = 0.5311259660135984  # pi^-1/4 / sqrt 2


def levy_scale(s, lam):
    # scipy's S1 parametrization has exp(-|c eta|^alpha)
    return lam * (2 * s) ** (-1 / (2 * s))


def test_gaussian_density_at_zero():
    assert density(StableLaw(1.0), 0.0) == pytest.approx(GAUSS_AT_0, rel=1e-12)


def test_cauchy_density_at_zero():
    assert density(StableLaw(0.5), 0.0) == pytest.approx(CAUCHY_AT_0, rel=1e-9)


def test_mass_s075_on_window():
    # the heavy tail holds 7.5e-4 of the mass beyond |x| = 50, so the window mass is
    # checked against the scipy cdf and the total (window + analytic tail) against 1
    grid = GridSpec.symmetric(50.0, 1 / 32)
    f = density_grid(StableLaw(0.75), grid)
    sc = levy_scale(0.75, 1.0)
    ref = stats.levy_stable.cdf(50, 1.5, 0.0, scale=sc) - stats.levy_stable.cdf(-50, 1.5, 0.0, scale=sc)
    assert f.mass() == pytest.approx(ref, abs=1e-8)
    assert f.mass() + f.tail_mass == pytest.approx(1.0, abs=1e-4)
    assert density_grid(StableLaw(0.75), grid, normalize=True).mass() == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("s", [0.3, 0.5, 0.75, 1.0])
def test_density_against_scipy(s):
    law = StableLaw(s, 1.3)
    x = np.array([0.0, 0.4, 1.7, 5.0, 20.0])
    ref = stats.levy_stable.pdf(x, 2 * s, 0.0, scale=levy_scale(s, 1.3)) if s < 1 \
        else stats.norm.pdf(x, scale=1.3)
    assert np.allclose(density(law, x), ref, rtol=2e-4, atol=1e-9)


def test_cauchy_density_profile():
    x = np.linspace(-30, 30, 61)
    assert np.allclose(density(StableLaw(0.5, 2.0), x), stats.cauchy.pdf(x, scale=2.0), rtol=1e-8)


@pytest.mark.parametrize("s", [0.5, 0.75, 1.0])
def test_fourier_round_trip(s):
    law = StableLaw(s, 1.0)
    grid = GridSpec.symmetric(400.0 if s < 1 else 40.0, 1 / 32)
    f = density_grid(law, grid)
    eta = np.linspace(0, 4, 33)
    hat = np.cos(np.outer(eta, grid.points)) @ f.values * grid.spacing
    # add back the tail mass outside the window at low frequency
    assert np.max(np.abs(hat + f.tail_mass * (eta == 0) - law.char_fn(eta))) < 1e-4


def test_scaling_pointwise():
    x = np.linspace(-10, 10, 41)
    for s in (0.5, 0.75, 1.0):
        lam = 2.5
        assert np.allclose(density(StableLaw(s, lam), x), density(StableLaw(s), x / lam) / lam,
                           rtol=1e-6, atol=1e-12)


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.01, float("nan")])
def test_invalid_stability(bad):
    with pytest.raises(InvalidStability):
        StableLaw(bad)


def test_coarse_grid_raises():
    with pytest.raises(GridTooCoarse):
        density_grid(StableLaw(0.75, 1.0), GridSpec.symmetric(30.0, 2.0))


# sampling

def test_gaussian_sample_variance():
    x = sample(StableLaw(1.0), np.random.default_rng(1), 100_000)
    se = math.sqrt(2 / x.size)  # sd of the sample variance for a unit Gaussian
    assert abs(x.var(ddof=1) - 1) <= 3 * se


def test_cauchy_empirical_char_fn():
    x = sample(StableLaw(0.5), np.random.default_rng(2), 100_000)
    c = np.cos(x)
    assert abs(c.mean() - math.exp(-1)) <= 3 * c.std(ddof=1) / math.sqrt(c.size)


def test_isotropic_2d_char_fn():
    rng = np.random.default_rng(3)
    law = StableLaw(0.75, 2.0, dim=2)
    y = sample(law, rng, 100_000)
    target = math.exp(-2**1.5 / 1.5)
    for theta in (0.0, 1.0, 2.3):
        c = np.cos(y @ np.array([math.cos(theta), math.sin(theta)]))
        assert abs(c.mean() - target) <= 3 * c.std(ddof=1) / math.sqrt(c.size)


@pytest.mark.parametrize("s", [0.5, 0.75, 1.0])
def test_sampler_ks(s):
    assert sampler_ks(s, np.random.default_rng(4)) <= 0.01


def test_sampler_against_scipy_ks():
    x = sample(StableLaw(0.75), np.random.default_rng(5), 20_000)
    cdf = lambda y: stats.levy_stable.cdf(y, 1.5, 0.0, scale=levy_scale(0.75, 1.0))
    assert stats.kstest(x, cdf).pvalue > 1e-3


# convolution scale

def test_convolve_scale_examples():
    assert convolve_scale(1, 1, 1.0) == pytest.approx(math.sqrt(2), rel=1e-15)
    assert convolve_scale(1, 1, 0.5) == pytest.approx(2.0, rel=1e-15)
    assert convolve_scale(1, 1e-12, 0.75) == pytest.approx(1.0, rel=1e-12)


@given(a=st.floats(0.01, 100), b=st.floats(0.01, 100), c=st.floats(0.01, 100), s=st.floats(0.05, 1.0))
def test_convolve_scale_associative_commutative(a, b, c, s):
    assert convolve_scale(a, b, s) == pytest.approx(convolve_scale(b, a, s), rel=1e-12)
    left = convolve_scale(convolve_scale(a, b, s), c, s)
    right = convolve_scale(a, convolve_scale(b, c, s), s)
    assert left == pytest.approx(right, rel=1e-9)
    assert convolve_scale(a, b, s) >= max(a, b) * (1 - 1e-12)


@given(lam=st.floats(0.1, 10), eta=st.floats(-20, 20), s=st.floats(0.05, 1.0))
def test_char_fn_scaling(lam, eta, s):
    assert StableLaw(s, lam).char_fn(eta) == pytest.approx(StableLaw(s).char_fn(lam * eta), rel=1e-12)


@pytest.mark.parametrize("s", [0.5, 0.75, 1.0])
def test_convolution_stability(s):
    assert convolution_stability_error(s) <= 1e-3


# L^p norms

def test_lp_norm_examples():
    assert lp_norm(StableLaw(1.0), math.inf) == pytest.approx(GAUSS_AT_0, rel=1e-10)
    assert lp_norm(StableLaw(1.0, 2.0), math.inf) == pytest.approx(GAUSS_AT_0 / 2, rel=1e-10)
    assert lp_norm(StableLaw(1.0), 2.0) == pytest.approx(GAUSS_L2, rel=1e-8)


def test_lp_norm_cauchy_l2_quadrature():
    # int (pi (1 + x^2))^-2 dx = 1/(2 pi)
    ref = math.sqrt(quad(lambda x: (math.pi * (1 + x * x)) ** -2, -np.inf, np.inf)[0])
    assert lp_norm(StableLaw(0.5), 2.0) == pytest.approx(ref, rel=1e-6)


@pytest.mark.parametrize("s", [0.5, 0.75, 1.0])
@pytest.mark.parametrize("p", [1.0, 2.0, math.inf])
def test_scaling_collapse(s, p):
    assert scaling_collapse_error(s, p) <= 1e-5
    base = lp_norm(StableLaw(s, 1.0), p)
    e = 1.0 if math.isinf(p) else 1 - 1 / p
    for lam in (0.5, 2.0, 4.0):
        assert lp_norm(StableLaw(s, lam), p) * lam**e == pytest.approx(base, rel=1e-5)


# scale distance

def test_scale_distance_identical():
    assert scale_distance(1.0, 1.0, 1.0, 1.0)[0] == 0.0


def test_scale_distance_monotone_and_bounded():
    vals = [scale_distance(1.0, l2, 1.0, 1.0)[0] for l2 in (1.05, 1.1, 1.2)]
    assert 0 < vals[0] < vals[1] < vals[2]
    assert scale_distance(1.0, 2.0, 1.0, 1.0)[0] <= 2.0


def test_scale_distance_gaussian_l1_closed_form():
    # two centred Gaussians cross at x0 with x0^2 = 2 ln(l2/l1) l1^2 l2^2 / (l2^2 - l1^2)
    l1, l2 = 1.0, 1.1
    x0 = math.sqrt(2 * math.log(l2 / l1) * l1**2 * l2**2 / (l2**2 - l1**2))
    ref = 4 * (stats.norm.cdf(x0 / l1) - stats.norm.cdf(x0 / l2))
    assert exact_scale_distance(l1, l2, 1.0, 1.0) == pytest.approx(ref, rel=1e-4)


@pytest.mark.parametrize("s", [0.5, 0.75, 1.0])
@pytest.mark.parametrize("p", [1.0, 2.0, math.inf])
def test_scale_distance_contract(s, p):
    for l2 in (0.8, 0.95, 1.05, 1.2):
        if abs(1 - l2 ** (2 * s)) <= 0.5:
            exact, bound = scale_distance(1.0, l2, s, p)
            assert exact <= bound


def test_constants_table_loaded():
    assert distance_constant(1.0, 1.0) == pytest.approx(1.1907, rel=1e-4)


# CLT iterated convolution

def test_clt_gaussian_fixed_point():
    grid = GridSpec.symmetric(12.0, 1 / 32)
    F = density_grid(StableLaw(1.0), grid)
    out = clt_iterated_convolution(F, [1.0], 8, 1.0)
    assert np.max(np.abs(out.values - F.values)) < 1e-6
    assert out.mass() == pytest.approx(1.0, abs=1e-6)


def test_clt_uniform_improves():
    grid = GridSpec.symmetric(8.0, 1 / 64)
    a = math.sqrt(3)
    U = GridFunction(grid, np.where(np.abs(grid.points) <= a, 1 / (2 * a), 0.0))
    M = stats.norm.pdf(grid.points)
    e1 = np.max(np.abs(clt_iterated_convolution(U, [1.0], 1, 1.0).values - M))
    e64 = np.max(np.abs(clt_iterated_convolution(U, [1.0], 64, 1.0).values - M))
    assert e64 < e1


def test_clt_cauchy_fixed_point():
    # truncating each Cauchy copy at L costs about 10/L in L1 after 16 copies
    grid = GridSpec.symmetric(20_000.0, 1 / 8)
    F = GridFunction(grid, stats.cauchy.pdf(grid.points))
    out = clt_iterated_convolution(F, [1.0], 16, 0.5)
    assert np.sum(np.abs(out.values - F.values)) * grid.spacing < 1e-3


def test_clt_mixed_scales_gaussian():
    grid = GridSpec.symmetric(12.0, 1 / 32)
    F = density_grid(StableLaw(1.0), grid)
    out = clt_iterated_convolution(F, [0.5, 1.0, 2.0], 3, 1.0)
    assert np.max(np.abs(out.values - F.values)) < 1e-5


def test_clt_aliasing_detected():
    # the sum of two copies spans +-7.8 but the rescaled window only +-4 sqrt 2
    grid = GridSpec.symmetric(4.0, 1 / 32)
    U = GridFunction(grid, np.where(np.abs(grid.points) <= 3.9, 1 / 7.8, 0.0))
    with pytest.raises(AliasingDetected):
        clt_iterated_convolution(U, [1.0, 1.0], 2, 1.0)


@settings(max_examples=20, deadline=None)
@given(s=st.sampled_from([0.5, 0.75, 1.0]), lam=st.floats(0.5, 3.0))
def test_density_nonnegative_unit_mass(s, lam):
    law = StableLaw(s, lam)
    grid = GridSpec.symmetric(200 * lam if s < 1 else 12 * lam, lam / 16)
    f = density_grid(law, grid)
    assert f.values.min() >= -1e-10
    assert f.mass() + f.tail_mass == pytest.approx(1.0, abs=1e-4)
