import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from kinlab.gaussians import GaussianData
from kinlab.grids import GridSpec
from kinlab.spectral import (CharacteristicExponent, delta_eigenvalues, empirical_char_fn,
                             inequality_probes, invert_to_grid, kfp_particle_simulate, limit_hat,
                             psi_fp, psi_infty, sigma_fp, solve_hat, spectral_distance)

F0 = GaussianData(1.0, 1.0)


def psi_quad(xi, eta, t, s):
    """Direct adaptive quadrature of int_0^t |(1 - e^-u) xi + e^-u eta|^(2s) du."""
    f = lambda u: abs((1 - math.exp(-u)) * xi + math.exp(-u) * eta) ** (2 * s)
    # split where the integrand vanishes, if it does inside (0, t)
    pts = []
    if xi != eta and xi != 0:
        e = xi / (xi - eta)
        if 0 < e < 1:
            u0 = -math.log(e)
            if 0 < u0 < t:
                pts = [u0]
    return quad(f, 0, t, points=pts or None, limit=400, epsabs=0, epsrel=1e-12)[0]


def test_psi_at_zero_time_and_xi_zero():
    assert np.all(psi_fp([1.0, 2.0], [0.5, -1.0], 0.0, 0.75) == 0)
    for s in (0.3, 0.75, 1.0):
        t, eta = 3.0, 1.7
        ref = abs(eta) ** (2 * s) * (1 - math.exp(-2 * s * t)) / (2 * s)
        assert float(psi_fp(0.0, eta, t, s)) == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("s", [0.3, 0.5, 0.75, 1.0])
def test_psi_diagonal(s):
    # eta = xi makes the integrand constant
    assert float(psi_fp(1.3, 1.3, 5.0, s)) == pytest.approx(5.0 * 1.3 ** (2 * s), rel=1e-9)


@pytest.mark.parametrize("s", [0.3, 0.5, 0.75, 1.0])
@pytest.mark.parametrize("xi,eta,t", [(1.0, -2.0, 0.7), (0.3, 4.0, 12.0), (-2.0, 0.5, 40.0), (1.0, 1.0e-3, 3.0)])
def test_psi_against_adaptive_quadrature(s, xi, eta, t):
    assert float(psi_fp(xi, eta, t, s)) == pytest.approx(psi_quad(xi, eta, t, s), rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.1, 30), st.floats(0.1, 10),
       st.sampled_from([0.4, 0.75, 1.0]))
def test_psi_homogeneous(xi, eta, t, lam, s):
    a = float(psi_fp(lam * xi, lam * eta, t, s))
    b = float(psi_fp(xi, eta, t, s))
    assert a == pytest.approx(lam ** (2 * s) * b, rel=1e-8, abs=1e-300)


def test_psi_two_dimensional():
    xi = np.array([0.6, -0.8])
    eta = np.array([1.0, 0.2])
    val = float(psi_fp(xi, eta, 4.0, 0.75, d=2))
    ref = quad(lambda u: np.linalg.norm((1 - math.exp(-u)) * xi + math.exp(-u) * eta) ** 1.5, 0, 4.0,
               epsrel=1e-12)[0]
    assert val == pytest.approx(ref, rel=1e-8)


def test_sigma_fp_values():
    c = sigma_fp(0.0)
    assert (c.xx, c.xv, c.vv) == (0.0, 0.0, 0.0)
    c = sigma_fp(1.0)
    e = math.exp(-1)
    assert c.xx == pytest.approx(1 - 2 * (1 - e) + (1 - e * e) / 2, rel=1e-13)
    assert c.xx == pytest.approx(0.16809, abs=1e-5)
    assert sigma_fp(60.0).vv == pytest.approx(0.5, abs=1e-15)
    assert sigma_fp(1e-4).xx == pytest.approx(1e-12 / 3, rel=1e-3)


def test_psi_infty_examples():
    assert float(psi_infty(1.0, 0.0, 7.0, 0.75)) == pytest.approx(7.0)
    assert float(psi_infty(0.0, 2.0, 7.0, 1.0)) == pytest.approx(2.0)
    assert float(psi_infty(0.0, 1.0, 7.0, 0.5)) == pytest.approx(1.0)


def test_characteristic_exponent_wrapper():
    psi = CharacteristicExponent(0.75, 3.0)
    assert float(psi(0.4, 1.1)) == float(psi_fp(0.4, 1.1, 3.0, 0.75))
    assert float(psi.limit(0.4, 1.1)) == float(psi_infty(0.4, 1.1, 3.0, 0.75))


def test_solve_hat_properties():
    h0 = F0.char_fn
    assert solve_hat(h0, 0.0, 1.0) is h0
    f = solve_hat(F0.char_fn, 5.0, 0.75)
    assert float(f(0.0, 0.0)) == 1.0
    # point mass at the origin: transform is exp(-Psi)
    g = solve_hat(lambda xi, eta: np.ones(np.broadcast(xi, eta).shape), 2.0, 1.0)
    assert float(g(0.5, -1.0)) == pytest.approx(math.exp(-float(psi_fp(0.5, -1.0, 2.0, 1.0))), rel=1e-14)


def test_gaussian_solution_is_gaussian_at_s1():
    # s = 1: the law is the drift image plus N(0, 2 Sigma)
    t = 2.0
    d, c = F0.drifted(t), sigma_fp(t)
    ref = GaussianData(d.x_var + 2 * c.xx, d.v_var + 2 * c.vv, d.xv + 2 * c.xv)
    f = solve_hat(F0.char_fn, t, 1.0)
    for xi, eta in ((0.3, 0.2), (-1.0, 0.7), (0.1, -2.0)):
        assert float(f(xi, eta)) == pytest.approx(float(ref.char_fn(xi, eta)), rel=1e-12)


def test_invert_round_trip():
    xg, vg = GridSpec.symmetric(12.0, 0.1), GridSpec.symmetric(10.0, 0.1)
    g = GaussianData(1.0, 0.5, 0.3)
    f = invert_to_grid(g.char_fn, xg, vg)
    assert np.max(np.abs(f.values - g.on_grid(xg, vg).values)) < 1e-10


def test_distance_positive_and_decreasing():
    ds = [spectral_distance(F0.char_fn, t, 1.0, 2.0) for t in (5.0, 20.0, 80.0)]
    assert all(d > 0 for d in ds) and ds[0] > ds[1] > ds[2]
    with pytest.raises(ValueError):
        spectral_distance(F0.char_fn, 0.0, 1.0, 2.0)


def test_distance_l2_matches_grid():
    t = 5.0
    d_freq = spectral_distance(F0.char_fn, t, 1.0, 2.0)
    xg, vg = GridSpec.symmetric(40.0, 0.2), GridSpec.symmetric(10.0, 0.1)
    f = invert_to_grid(solve_hat(F0.char_fn, t, 1.0), xg, vg)
    g = invert_to_grid(limit_hat(F0.char_fn, t, 1.0), xg, vg)
    d_grid = math.sqrt(np.sum((f.values - g.values) ** 2) * f.cell)
    assert d_freq == pytest.approx(d_grid, rel=1e-3)


def test_delta_eigenvalues():
    lp, lm, asym = delta_eigenvalues(100.0)
    assert lp == pytest.approx((math.sqrt(809) - 3) / 400, rel=1e-14)
    assert lp == pytest.approx(0.063607, abs=1e-6)
    for t in (1.0, 10.0, 1000.0):
        lp, lm, _ = delta_eigenvalues(t)
        assert lp * lm == pytest.approx(-1 / (2 * t), rel=1e-12)
    lp, _, asym = delta_eigenvalues(1000.0)
    assert lp / asym == pytest.approx(1.0, abs=0.04)


def test_probes_edge_cases():
    rows = inequality_probes(0.75, 10_000, np.random.default_rng(0), psi_samples=200)
    assert all(r["pass"] for r in rows)
    assert rows[1]["value"] == 0


@pytest.mark.parametrize("s", [0.3, 0.5, 0.75, 1.0])
def test_psi_lower_bound_positive(s):
    rows = inequality_probes(s, 2000, np.random.default_rng(1), psi_samples=100)
    c = [r for r in rows if r["quantity"] == "psi_lower_c"][0]
    assert c["value"] > 0 and c["pass"]


def test_particles_exact_gaussian():
    t = 3.0
    x, v = kfp_particle_simulate(F0.sample, t, 200_000, np.random.default_rng(2))
    ref = solve_hat(F0.char_fn, t, 1.0)
    for xi, eta in ((0.3, 0.2), (0.1, -1.0)):
        m, se = empirical_char_fn(x, v, xi, eta)
        assert abs(m - float(ref(xi, eta))) <= 3 * se


def test_particles_stepped_stable():
    t, s = 2.0, 0.75
    x, v = kfp_particle_simulate(F0.sample, t, 100_000, np.random.default_rng(3), s=s, steps=200)
    ref = solve_hat(F0.char_fn, t, s)
    for xi, eta in ((0.2, 0.3), (0.05, -0.8)):
        m, se = empirical_char_fn(x, v, xi, eta)
        assert abs(m - float(ref(xi, eta))) <= 3 * se + 2e-3
