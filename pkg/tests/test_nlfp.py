import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats
from scipy.integrate import quad

from kinlab.errors import SingularTarget
from kinlab.gaussians import BlockCovariance, GaussianData
from kinlab.grids import GridFunction, GridSpec
from kinlab.histories import CollisionHistory, sample_histories
from kinlab.metrics import mixed_norm, mixed_norm_v_outer
from kinlab.nlfp import (StarKernelSpec, batch_covariances, covariance_from_history, delta_matrix,
                         drift_transport, gaussian_block_density, marginal_norm, nlfp_distance,
                         nlfp_distance_series, nlfp_wild_density, ou_particle_simulate, pair_grid,
                         perturbation_ratio, random_perturbation_pairs, sample_stationary,
                         stationary_F, star_convolve, target_covariances, velocity_hat)
from kinlab.spectral import sigma_fp

F0 = GaussianData(1.0, 1.0)


def H(t, times):
    return CollisionHistory(float(t), np.asarray(times, dtype=float))


# Gaussian data

def test_gaussian_density_and_char_fn():
    g = GaussianData(2.0, 0.5, 0.3)
    ref = stats.multivariate_normal([0, 0], [[2.0, 0.3], [0.3, 0.5]])
    assert g.density(0.4, -1.0) == pytest.approx(ref.pdf([0.4, -1.0]), rel=1e-12)
    # char fn against quadrature of cos(xi x + eta v) f
    xi, eta = 0.7, -1.1
    val = quad(lambda x: quad(lambda v: math.cos(xi * x + eta * v) * g.density(x, v), -10, 10)[0], -12, 12)[0]
    assert g.char_fn(xi, eta) == pytest.approx(val, rel=1e-7)


def test_gaussian_sample_covariance():
    g = GaussianData(2.0, 0.5, 0.3)
    x, v = g.sample(np.random.default_rng(0), 200_000)
    c = np.cov(x, v)
    assert np.allclose(c, g.cov.matrix, atol=0.02)


def test_drifted_law_matches_pushforward():
    g, t = GaussianData(1.0, 2.0, 0.5), 1.3
    x, v = g.sample(np.random.default_rng(1), 200_000)
    a, b = 1 - math.exp(-t), math.exp(-t)
    c = np.cov(x + a * v, b * v)
    assert np.allclose(c, g.drifted(t).cov.matrix, atol=0.03)


def test_block_covariance_roundtrip():
    B = BlockCovariance(2.0, 0.5, 1.0)
    assert BlockCovariance.from_matrix(B.matrix) == B
    assert B.det2 == pytest.approx(1.75)
    with pytest.raises(ValueError):
        BlockCovariance(-1.0, 0.0, 1.0)


# covariances from histories

def test_covariance_examples():
    c = covariance_from_history(H(math.log(2), [0.0]))
    assert (c.xx, c.xv, c.vv) == pytest.approx((0.25, 0.25, 0.25), abs=1e-15)
    c = covariance_from_history(H(3.0, [3.0]))
    assert (c.xx, c.xv, c.vv) == pytest.approx((0.0, 0.0, 1.0), abs=1e-15)
    c = covariance_from_history(H(3.0, []))
    assert (c.xx, c.xv, c.vv) == (0.0, 0.0, 0.0)


def test_target_covariances_examples():
    binf, bd, bfp = target_covariances(math.log(2), H(math.log(2), [0.0]))
    assert (binf.xx, binf.xv, binf.vv) == pytest.approx((math.log(2), 0.0, 0.25))
    times = np.linspace(0.0, 50.0, 100)
    _, bd, _ = target_covariances(50.0, H(50.0, times))
    assert bd.xx == pytest.approx(97.0, abs=1e-9)
    with pytest.raises(ValueError):
        target_covariances(0.0, H(0.0, []))


def test_mean_covariance_is_kinetic_fp():
    t = 10.0
    b = sample_histories(t, 200_000, np.random.default_rng(2))
    axx, axv, avv = batch_covariances(b)
    ref = sigma_fp(t)
    # E S_k = (1 - e^-kt)/k, so E[A] = (t - 2(1 - e^-t) + (1 - e^-2t)/2, ...)
    assert ref.xx == pytest.approx(t - 2 * (1 - math.exp(-t)) + (1 - math.exp(-2 * t)) / 2, rel=1e-12)
    for arr, r in ((axx, ref.xx), (axv, ref.xv), (avv, ref.vv)):
        assert abs(arr.mean() - r) <= 3 * arr.std(ddof=1) / math.sqrt(arr.size)


def test_batch_matches_single():
    b = sample_histories(7.0, 50, np.random.default_rng(3))
    axx, axv, avv = batch_covariances(b)
    for i in range(b.size):
        c = covariance_from_history(b[i])
        assert (axx[i], axv[i], avv[i]) == pytest.approx((c.xx, c.xv, c.vv), rel=1e-12, abs=1e-14)


# Delta matrix

def test_delta_examples():
    A = BlockCovariance(1.5, 0.0, 1.0)
    B = BlockCovariance(1.0, 0.0, 1.0)
    d, fro, op = delta_matrix(A, A)
    assert fro == pytest.approx(0.0, abs=1e-14) and op == pytest.approx(0.0, abs=1e-14)
    d, fro, op = delta_matrix(A, B)
    assert fro == pytest.approx(0.5) and op == pytest.approx(0.5)
    with pytest.raises(SingularTarget):
        delta_matrix(A, BlockCovariance(0.0, 0.0, 1.0))


@given(st.floats(0.1, 10), st.floats(-0.9, 0.9), st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.1, 10))
def test_delta_op_below_fro(axx, rho, avv, bxx, bvv):
    A = BlockCovariance(axx, rho * math.sqrt(axx * avv), avv)
    _, fro, op = delta_matrix(A, BlockCovariance(bxx, 0.0, bvv))
    assert op <= fro * (1 + 1e-12) + 1e-12


# Gaussian blocks

def test_marginal_norm_examples():
    C = BlockCovariance(1.0, 0.0, 1.0)
    assert marginal_norm(C, 1.0) == pytest.approx(1.0)
    assert marginal_norm(BlockCovariance(1.0, 0.7, 1.0), 3.0) == marginal_norm(BlockCovariance(1.0, 0.0, 1.0), 3.0)
    # x-marginal is N(0, 2): L^2 norm (4 pi var)^-1/4
    assert marginal_norm(C, 2.0) == pytest.approx((8 * math.pi) ** -0.25, rel=1e-12)


@pytest.mark.parametrize("p", [1.0, 2.0, 4.0, np.inf])
def test_marginal_norm_against_grid(p):
    C = BlockCovariance(1.0, 0.4, 0.8)
    xg, vg = GridSpec.symmetric(14.0, 0.02), GridSpec.symmetric(10.0, 0.02)
    f = gaussian_block_density(C, xg, vg)
    assert mixed_norm(f, p, 1.0) == pytest.approx(marginal_norm(C, p), abs=1e-4)


def test_block_density_cells_mass():
    C = BlockCovariance(1.0, 0.4, 0.8)
    xg, vg = GridSpec.symmetric(14.0, 0.05), GridSpec.symmetric(10.0, 0.5)
    assert gaussian_block_density(C, xg, vg, v_cells=True).mass() == pytest.approx(1.0, abs=1e-8)


# star convolution and drift transport

def _kernel(var=0.3, h=0.05):
    yg = GridSpec.symmetric(6.0, h)
    return GridFunction(yg, stats.norm.pdf(yg.points, scale=math.sqrt(var)))


def _phi(xg, vg, g=GaussianData(1.0, 0.5, 0.2)):
    return g.on_grid(xg, vg)


def test_star_identity_and_x_marginal():
    xg, vg = GridSpec.symmetric(12.0, 0.05), GridSpec.symmetric(8.0, 0.05)
    f = _phi(xg, vg)
    yg = GridSpec.symmetric(1.0, 0.5)
    delta = GridFunction(yg, np.array([0.0, 0.0, 2.0, 0.0, 0.0]))
    out = star_convolve(StarKernelSpec(0.0, 0.0, delta), f)
    assert np.allclose(out.values, f.values, atol=1e-12)
    out = star_convolve(StarKernelSpec(0.0, 1.0, _kernel()), f)
    assert np.allclose(out.values.sum(axis=1), f.values.sum(axis=1), atol=1e-9)


def test_star_against_quadrature():
    xg, vg = GridSpec.symmetric(16.0, 0.05), GridSpec.symmetric(10.0, 0.05)
    g0 = GaussianData(1.0, 0.5, 0.2)
    a, b = 0.7, 1.4
    out = star_convolve(StarKernelSpec(a, b, _kernel()), _phi(xg, vg, g0))
    kern = stats.norm(scale=math.sqrt(0.3))
    for x, v in ((0.0, 0.0), (1.0, -0.5), (-2.0, 1.0), (0.5, 2.0), (3.0, 0.3)):
        ref = quad(lambda y: kern.pdf(y) * g0.density(x + a * y, v - b * y), -6, 6)[0]
        i, j = np.argmin(np.abs(xg.points - x)), np.argmin(np.abs(vg.points - v))
        assert out.values[i, j] == pytest.approx(ref, abs=1e-6)


def test_exchange_identity():
    # v-convolution by J after T_t equals T_t after the star with a = e^t - 1, b = e^t
    t, jvar = 0.6, 0.3
    g0 = GaussianData(1.0, 0.5, 0.2)
    xg, vg = GridSpec.symmetric(16.0, 0.04), GridSpec.symmetric(10.0, 0.02)
    star = star_convolve(StarKernelSpec(math.expm1(t), math.exp(t), _kernel(jvar, 0.04)), _phi(xg, vg, g0))
    rhs = drift_transport(star, t)
    # closed form: T_t phi is the drift image; J adds jvar to the velocity variance
    d = g0.drifted(t)
    lhs = GaussianData(d.x_var, d.v_var + jvar, d.xv).on_grid(xg, vg)
    assert np.max(np.abs(lhs.values - rhs.values)) < 2e-3


@pytest.mark.parametrize("p", [1.0, 2.0, 3.0])
def test_mixed_norm_inclusion(p):
    # Minkowski: L^p_x L^1_v is dominated by L^1_v L^p_x for p >= 1
    xg, vg = GridSpec.symmetric(14.0, 0.05), GridSpec.symmetric(10.0, 0.05)
    f = GaussianData(1.0, 0.5, 0.6).on_grid(xg, vg)
    assert mixed_norm(f, p, 1.0) <= mixed_norm_v_outer(f, 1.0, p) * (1 + 1e-12)


@pytest.mark.parametrize("p", [1.0, 2.0, 4.0])
def test_drift_transport_isometry(p):
    t = 0.5
    xg, vg = GridSpec.symmetric(16.0, 0.02), GridSpec.symmetric(8.0, 0.01)
    f = GaussianData(1.0, 0.5, 0.2).on_grid(xg, vg)
    g = drift_transport(f, t)
    assert mixed_norm_v_outer(g, 1.0, p) == pytest.approx(mixed_norm_v_outer(f, 1.0, p), rel=2e-3)


# perturbation bound

def test_perturbation_ratios_bounded():
    rng = np.random.default_rng(4)
    ratios = [perturbation_ratio(A, B, 2.0, 1.0, *pair_grid(A, B)) for A, B in random_perturbation_pairs(100, rng)]
    assert all(np.isfinite(ratios)) and min(ratios) > 0
    assert max(ratios) / min(ratios) < 20


def test_perturbation_ratio_scale_invariant():
    A, B = BlockCovariance(1.2, 0.1, 0.9), BlockCovariance(1.0, 0.0, 1.0)
    r1 = perturbation_ratio(A, B, 2.0, 1.0, *pair_grid(A, B))
    A2 = BlockCovariance(4 * A.xx, 6 * A.xv, 9 * A.vv)
    B2 = BlockCovariance(4 * B.xx, 0.0, 9 * B.vv)
    r2 = perturbation_ratio(A2, B2, 2.0, 1.0, *pair_grid(A2, B2))
    assert r2 == pytest.approx(r1, rel=1e-3)


# Wild density and particles

def test_wild_t0_is_f0():
    xg, vg = GridSpec.symmetric(6.0, 0.25), GridSpec.symmetric(6.0, 0.25)
    f = nlfp_wild_density(F0, 0.0, xg, vg, 10, np.random.default_rng(5), v_cells=False)
    assert np.allclose(f.values, F0.on_grid(xg, vg).values, rtol=1e-12)


def test_wild_mass_and_velocity_variance():
    t = 20.0
    xg, vg = GridSpec.symmetric(60.0, 0.25), GridSpec.symmetric(8.0, 0.1)
    f = nlfp_wild_density(F0, t, xg, vg, 4000, np.random.default_rng(6))
    assert f.mass() == pytest.approx(1.0, abs=1e-3)
    mv = f.values.sum(axis=0) * xg.spacing
    var_w = np.sum(mv * vg.points**2) * vg.spacing + vg.spacing**2 / 12
    _, v = ou_particle_simulate(F0, t, 200_000, np.random.default_rng(7))
    se = math.sqrt(2 / v.size) * v.var()
    assert abs(var_w - v.var(ddof=1)) <= 3 * se + 5e-3
    # e^-2t v_var + 2 E S_2 = 1 - e^-2t + e^-2t
    assert abs(v.var(ddof=1) - 1.0) <= 3 * se


def test_particles_forced_history():
    h = H(4.0, [0.5, 2.0, 3.5])
    x, v = ou_particle_simulate(None, 4.0, 200_000, np.random.default_rng(8), history=h)
    A = covariance_from_history(h).scaled(2.0)
    c = np.cov(x, v)
    n = x.size
    for (i, j), ref in (((0, 0), A.xx), ((0, 1), A.xv), ((1, 1), A.vv)):
        se = math.sqrt((c[i, i] * c[j, j] + c[i, j] ** 2) / n)
        assert abs(c[i, j] - ref) <= 3 * se
    with pytest.raises(ValueError):
        ou_particle_simulate(None, 3.0, 10, np.random.default_rng(0), history=h)


def test_velocity_hat_against_particles():
    t, eta = 1.5, 0.8
    _, v = ou_particle_simulate(None, t, 200_000, np.random.default_rng(9))
    emp = np.cos(eta * v)
    assert abs(emp.mean() - velocity_hat(eta, t)) <= 3 * emp.std(ddof=1) / math.sqrt(v.size)


def test_stationary_law():
    vg = GridSpec.symmetric(10.0, 0.1)
    F = stationary_F(vg)
    assert F.mass() == pytest.approx(1.0, abs=1e-6)
    v = sample_stationary(np.random.default_rng(10), 100_000)
    m2 = np.sum(F.values * vg.points**2) * vg.spacing
    # second moment 2 E S_2 -> 1
    assert abs(m2 - 1.0) < 0.01 and abs(v.var() - 1.0) <= 3 * math.sqrt(2 / v.size) + 1e-3


def test_distance_bounds_and_series():
    d, floor = nlfp_distance(F0, 10.0, 1.0, histories=200, rng=np.random.default_rng(11))
    assert 0 <= d <= 2 and floor >= 0
    a = nlfp_distance_series(F0, [5.0, 10.0], 1.0, histories=50, seed=4)
    b = nlfp_distance_series(F0, [5.0, 10.0], 1.0, histories=50, seed=4)
    assert a.distances == b.distances
    with pytest.raises(ValueError):
        nlfp_distance_series(F0, [10.0, 5.0], 1.0, histories=10)
