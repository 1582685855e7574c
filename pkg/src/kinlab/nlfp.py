"""Nonlocal kinetic Fokker-Planck equation: Gaussian-mixture Wild representation.

Between unit-rate rings a particle follows dX = V dt, dV = -V dt; at a ring at time t_i
its velocity receives an independent N(0, 2) kick.  Given the ring times the kicks add a
centred Gaussian with covariance 2A to the drift image (X + (1 - e^-t) V, e^-t V) of the
initial point, where with S_k = sum_i exp(-k (t - t_i)):

    A_xx = S_0 - 2 S_1 + S_2,   A_xv = S_1 - S_2,   A_vv = S_2.

Densities built here carry the factor 2: ``gaussian_block_density(C)`` has covariance 2C.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.special import exp1, ndtr

from .errors import AliasingDetected, SingularTarget
from .gaussians import BlockCovariance, GaussianData, gaussian_1d, gaussian_pdf
from .grids import GridFunction, GridSpec, PhaseSpaceField, phase_mesh
from .histories import CollisionHistory, HistoryBatch, exp_sums, nlfp_mean_a11, sample_histories
from .metrics import DecaySeries, mixed_norm

STATIONARY_TIME = 40.0


# ---------------------------------------------------------------------------
# star convolution


@dataclass(frozen=True)
class StarKernelSpec:
    a: float
    b: float
    kernel: GridFunction

    def kernel_hat(self, k) -> np.ndarray:
        """Transform of the kernel samples, int g(y) e^{-iky} dy by the Riemann sum."""
        k = np.asarray(k, dtype=float)
        y = self.kernel.points
        w = self.kernel.values * self.kernel.grid.spacing
        flat = k.ravel()
        out = np.empty(flat.size, dtype=complex)
        step = max(1, 2**22 // max(y.size, 1))
        for a in range(0, flat.size, step):
            ph = np.outer(flat[a:a + step], y)
            out[a:a + step] = np.cos(ph) @ w - 1j * (np.sin(ph) @ w)
        return out.reshape(k.shape)


def star_convolve(g: StarKernelSpec, f: PhaseSpaceField, frame_tol: float = 1e-4) -> PhaseSpaceField:
    """(x, v) -> int g(y) f(x + a y, v - b y) dy, through the multiplier g^(b eta - a xi)."""
    kx = 2 * math.pi * np.fft.fftfreq(f.xgrid.n, f.xgrid.spacing)
    kv = 2 * math.pi * np.fft.fftfreq(f.vgrid.n, f.vgrid.spacing)
    KX, KV = np.meshgrid(kx, kv, indexing="ij")
    mult = g.kernel_hat(g.b * KV - g.a * KX)
    out = np.fft.ifft2(np.fft.fft2(f.values) * mult).real
    fx, fv = max(1, f.xgrid.n // 20), max(1, f.vgrid.n // 20)
    frame = np.ones(out.shape, bool)
    frame[fx:-fx, fv:-fv] = False
    lost = float(np.abs(out[frame]).sum() * f.cell)
    if lost > frame_tol:
        raise AliasingDetected(f"star convolution pushes mass {lost:.2e} into the grid frame")
    return f.with_values(out)


def drift_transport(field: PhaseSpaceField, t: float) -> PhaseSpaceField:
    """T_t g(x, v) = e^{td} g(x - (e^t - 1) v, e^t v) on the same grid (linear interpolation)."""
    from scipy.interpolate import RegularGridInterpolator
    X, V = field.mesh()
    interp = RegularGridInterpolator((field.xgrid.points, field.vgrid.points), field.values,
                                     bounds_error=False, fill_value=0.0)
    pts = np.stack([(X - math.expm1(t) * V).ravel(), (math.exp(t) * V).ravel()], axis=-1)
    return field.with_values(math.exp(t) * interp(pts).reshape(X.shape))


# ---------------------------------------------------------------------------
# covariances


def covariance_from_history(h: CollisionHistory, d: int = 1) -> BlockCovariance:
    s0, s1, s2 = float(h.n), exp_sums(h, 1), exp_sums(h, 2)
    return BlockCovariance(max(s0 - 2 * s1 + s2, 0.0), s1 - s2, s2, d)


def batch_covariances(batch: HistoryBatch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    s0 = batch.counts.astype(float)
    s1, s2 = batch.exp_sums(1), batch.exp_sums(2)
    return np.clip(s0 - 2 * s1 + s2, 0.0, None), s1 - s2, s2


def target_covariances(t: float, h: CollisionHistory, d: int = 1):
    """(B_inf, B_D, mean of A): diag(t, A_vv), diag(m, A_vv) and the kinetic FP covariance."""
    if t <= 0:
        raise ValueError("t must be positive")
    from .spectral import sigma_fp
    a = covariance_from_history(h, d)
    m = nlfp_mean_a11(h.n, t)
    return (BlockCovariance(t, 0.0, a.vv, d), BlockCovariance(m, 0.0, a.vv, d), sigma_fp(t, d))


def _inv_sqrt(m: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(m)
    return (U / np.sqrt(w)) @ U.T


def delta_matrix(A: BlockCovariance, B: BlockCovariance) -> tuple[np.ndarray, float, float]:
    """B^-1/2 (A - B) B^-1/2 per (x_i, v_i) plane, with its Frobenius and operator norms."""
    if B.det2 <= 0 or B.xx <= 0:
        raise SingularTarget(f"target covariance {B} is not positive definite")
    r = _inv_sqrt(B.matrix)
    delta = r @ (A.matrix - B.matrix) @ r
    delta = 0.5 * (delta + delta.T)
    ev = np.linalg.eigvalsh(delta)
    return delta, float(np.sqrt(np.sum(ev**2))), float(np.max(np.abs(ev)))


# ---------------------------------------------------------------------------
# Gaussian blocks


def _gaussian_lp(var: float, p: float, d: int = 1) -> float:
    if np.isinf(p):
        return (2 * math.pi * var) ** (-d / 2)
    return ((2 * math.pi * var) ** (-(1 - 1 / p) / 2) * p ** (-1 / (2 * p))) ** d


def gaussian_block_density(C: BlockCovariance, xgrid: GridSpec, vgrid: GridSpec,
                           v_cells: bool = False) -> PhaseSpaceField:
    """Density of N(0, 2C); with ``v_cells`` the v-direction holds exact cell averages."""
    cov = C.scaled(2.0)
    if cov.det2 <= 0:
        raise SingularTarget(f"covariance {C} is singular")
    if not v_cells:
        X, V = phase_mesh(xgrid, vgrid)
        return PhaseSpaceField(xgrid, vgrid, gaussian_pdf(cov, X, V))
    return PhaseSpaceField(xgrid, vgrid, _cell_gaussians(
        np.array([cov.xx]), np.array([cov.xv]), np.array([cov.vv]), xgrid, vgrid)[0])


def marginal_norm(C: BlockCovariance, p: float) -> float:
    """L^p_x L^1_v norm of N(0, 2C): the L^p norm of its x-marginal."""
    if C.xx <= 0 or C.det2 <= 0:
        raise SingularTarget(f"covariance {C} is singular")
    return _gaussian_lp(2 * C.xx, p, C.d)


def _v_edges(vgrid: GridSpec) -> np.ndarray:
    return np.append(vgrid.points - vgrid.spacing / 2, vgrid.points[-1] + vgrid.spacing / 2)


def _cell_gaussians(xx, xv, vv, xgrid: GridSpec, vgrid: GridSpec) -> np.ndarray:
    """N(0, [[xx, xv], [xv, vv]]) per row: point values in x, cell averages in v.

    Returns shape (m, nx, nv).  Uses the factorization G(x) G(v - (xv/xx) x | Schur).
    """
    x = xgrid.points
    ev = _v_edges(vgrid)
    gx = np.exp(-0.5 * x[None, :] ** 2 / xx[:, None]) / np.sqrt(2 * math.pi * xx[:, None])
    mu = (xv / xx)[:, None] * x[None, :]
    sd = np.sqrt(np.clip(vv - xv * xv / xx, 1e-300, None))[:, None, None]
    cdf = ndtr((ev[None, None, :] - mu[:, :, None]) / sd)
    return gx[:, :, None] * np.diff(cdf, axis=-1) / vgrid.spacing


def _cell_gaussians_v(vv, vgrid: GridSpec) -> np.ndarray:
    ev = _v_edges(vgrid)
    return np.diff(ndtr(ev[None, :] / np.sqrt(vv)[:, None]), axis=-1) / vgrid.spacing


# ---------------------------------------------------------------------------
# velocity marginal and the stationary law


def _ein(y: np.ndarray) -> np.ndarray:
    """Entire exponential integral int_0^y (1 - e^-z)/z dz."""
    y = np.asarray(y, dtype=float)
    small = y < 1e-2
    out = np.empty_like(y)
    ys = y[small]
    out[small] = ys - ys**2 / 4 + ys**3 / 18 - ys**4 / 96
    yl = y[~small]
    out[~small] = exp1(yl) + np.log(yl) + np.euler_gamma
    return out


def velocity_hat(eta, t: float, v0_hat=None) -> np.ndarray:
    """Transform of the v-marginal at time t: v0^(e^-t eta) exp(-(Ein(eta^2) - Ein(e^-2t eta^2))/2).

    The exponent is int_0^t (exp(-e^{-2u} eta^2) - 1) du, the Poisson-sum (Campbell)
    form of the velocity-only Wild series with N(0, 2) kicks.
    """
    eta = np.asarray(eta, dtype=float)
    y = eta * eta
    out = np.exp(-0.5 * (_ein(y) - _ein(y * math.exp(-2 * t))))
    if v0_hat is not None:
        out = out * v0_hat(math.exp(-t) * eta)
    return out


def _cdf_from_hat(hat, v: float) -> float:
    """Gil-Pelaez: P(V <= v) for a symmetric law with real transform ``hat``."""
    if v == 0:
        return 0.5
    a = abs(v)
    head, _ = quad(lambda e: float(hat(e)) * (math.sin(a * e) / e if e > 0 else a), 0, 1.0,
                   limit=200, epsabs=1e-13)
    tail, _ = quad(lambda e: float(hat(e)) / e, 1.0, np.inf, weight="sin", wvar=a, limlst=200)
    return 0.5 + math.copysign((head + tail) / math.pi, v)


def velocity_cells(vgrid: GridSpec, t: float, v_var: float | None = None) -> np.ndarray:
    """Cell averages of the v-marginal at time t (v0 ~ N(0, v_var), or a point mass)."""
    v0_hat = None if not v_var else (lambda e: np.exp(-0.5 * v_var * e * e))
    edges = _v_edges(vgrid)
    cdf = np.array([_cdf_from_hat(lambda e: velocity_hat(e, t, v0_hat), float(v)) for v in edges])
    return np.diff(cdf) / vgrid.spacing


@lru_cache(maxsize=16)
def _stationary_cached(digest: str, t_stat: float) -> np.ndarray:
    n, h, o = digest.split(":")
    return velocity_cells(GridSpec(int(n), float(h), float(o)), t_stat)


def stationary_F(vgrid: GridSpec, t_stationary: float = STATIONARY_TIME) -> GridFunction:
    """Equilibrium velocity law as cell averages: the velocity-only solution from v = 0 at t_stationary."""
    vals = _stationary_cached(vgrid.digest(), float(t_stationary))
    return GridFunction(vgrid, vals.copy())


def stationary_F_csv(vgrid: GridSpec, t_stationary: float = STATIONARY_TIME) -> str:
    F = stationary_F(vgrid, t_stationary)
    lines = [f"# grid={vgrid.digest()} t_stationary={t_stationary!r}", "v,F"]
    lines += [f"{v!r},{f!r}" for v, f in zip(F.points, F.values)]
    return "\n".join(lines) + "\n"


def sample_stationary(rng: np.random.Generator, count: int, horizon: float = STATIONARY_TIME) -> np.ndarray:
    """Draws of sum_i e^{-(T - t_i)} W_i with W_i ~ N(0, 2) over one history on [0, T]."""
    batch = sample_histories(horizon, count, rng)
    s2 = batch.exp_sums(2)
    return np.sqrt(2 * s2) * rng.standard_normal(count)


# ---------------------------------------------------------------------------
# Wild density and particles


def nlfp_wild_density(f0, t: float, xgrid: GridSpec, vgrid: GridSpec, histories: int,
                      rng: np.random.Generator, v_cells: bool = True, chunk: int = 32) -> PhaseSpaceField:
    """Monte Carlo mean over histories of G(2A) * T_t f0, with per-cell standard errors.

    Gaussian data is closed form (x point values, v cell averages unless ``v_cells`` is False).
    Other data is drift-transported on its grid and convolved once with the history-averaged
    Gaussian multiplier.
    """
    if histories < 1:
        raise ValueError("histories must be at least 1")
    if t < 0:
        raise ValueError("t must be nonnegative")
    if not isinstance(f0, GaussianData):
        return _wild_gridded(f0, t, histories, rng)
    if t == 0:
        c = f0.cov
        f = gaussian_block_density(c.scaled(0.5), xgrid, vgrid, v_cells)
        return f.with_values(f.values, np.zeros_like(f.values))
    c = f0.drifted(t).cov
    batch = sample_histories(t, histories, rng)
    axx, axv, avv = batch_covariances(batch)
    acc = np.zeros((xgrid.n, vgrid.n))
    acc2 = np.zeros_like(acc)
    X, V = phase_mesh(xgrid, vgrid)
    for a in range(0, histories, chunk):
        sl = slice(a, a + chunk)
        xx, xv, vv = 2 * axx[sl] + c.xx, 2 * axv[sl] + c.xv, 2 * avv[sl] + c.vv
        if v_cells:
            g = _cell_gaussians(xx, xv, vv, xgrid, vgrid)
        else:
            det = xx * vv - xv * xv
            q = (vv[:, None, None] * X * X - 2 * xv[:, None, None] * X * V + xx[:, None, None] * V * V) / det[:, None, None]
            g = np.exp(-0.5 * q) / (2 * math.pi * np.sqrt(det))[:, None, None]
        acc += g.sum(axis=0)
        acc2 += (g * g).sum(axis=0)
    mean = acc / histories
    se = np.sqrt(np.clip(acc2 / histories - mean * mean, 0, None) / max(histories - 1, 1))
    return PhaseSpaceField(xgrid, vgrid, mean, se, {"t": float(t), "histories": histories})


def _wild_gridded(f0, t: float, histories: int, rng: np.random.Generator) -> PhaseSpaceField:
    field = drift_transport(f0.field, t)
    kx = 2 * math.pi * np.fft.fftfreq(field.xgrid.n, field.xgrid.spacing)
    kv = 2 * math.pi * np.fft.fftfreq(field.vgrid.n, field.vgrid.spacing)
    KX, KV = np.meshgrid(kx, kv, indexing="ij")
    batch = sample_histories(t, histories, rng)
    axx, axv, avv = batch_covariances(batch)
    mult = np.zeros(KX.shape)
    for a, b, c in zip(axx, axv, avv):
        mult += np.exp(-(a * KX * KX + 2 * b * KX * KV + c * KV * KV))
    mult /= histories
    out = np.fft.ifft2(np.fft.fft2(field.values) * mult).real
    return field.with_values(out)


def ou_particle_simulate(f0, t: float, count: int, rng: np.random.Generator,
                         history: CollisionHistory | None = None):
    """Exact paths: X += (1 - e^-D) V, V <- e^-D V over flights of length D, V += N(0, 2) at rings.

    With ``history`` every particle uses the given ring times.  ``f0`` provides
    ``sample(rng, count)``, is a callable of that shape, or is None for a point mass at 0.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if f0 is None:
        x0, v0 = np.zeros(count), np.zeros(count)
    elif hasattr(f0, "sample"):
        x0, v0 = f0.sample(rng, count)
    else:
        x0, v0 = f0(rng, count)
    b = math.exp(-t)
    x = np.asarray(x0, float) + (1 - b) * np.asarray(v0, float)
    v = b * np.asarray(v0, float)
    if history is not None:
        if abs(history.horizon - t) > 1e-12:
            raise ValueError("history horizon must equal t")
        for ti in history.times:
            e = math.exp(-(t - ti))
            w = math.sqrt(2.0) * rng.standard_normal(count)
            x += (1 - e) * w
            v += e * w
        return x, v
    batch = sample_histories(t, count, rng)
    e = np.exp(-(t - batch.times))
    w = math.sqrt(2.0) * rng.standard_normal(batch.times.size)
    seg = np.repeat(np.arange(count), batch.counts)
    x += np.bincount(seg, weights=(1 - e) * w, minlength=count)
    v += np.bincount(seg, weights=e * w, minlength=count)
    return x, v


# ---------------------------------------------------------------------------
# distance to u(t, x) F(v)


def default_nlfp_grid(f0, t: float, nx: int = 257, nv: int = 161) -> tuple[GridSpec, GridSpec]:
    sd = math.sqrt(getattr(f0, "x_var", 1.0) + getattr(f0, "v_var", 1.0) + 2 * t)
    xh, vh = 8 * sd, 8.0
    return GridSpec.symmetric(xh, xh / (nx // 2)), GridSpec.symmetric(vh, vh / (nv // 2))


def nlfp_distance(f0: GaussianData, t: float, p: float, r: float = 1.0, histories: int = 10_000,
                  rng: np.random.Generator | None = None, grid=None, chunk: int = 32) -> tuple[float, float]:
    """(distance, noise floor) of ||f(t) - u(t, x) F(v)||_{L^p_x L^r_v}.

    u is N(0, a^2 + 2t).  Each history contributes G(2A + C_t) - u(x) G_v(2 S_2 + e^-2t b^2): the
    second factor averages to the exact v-marginal phi(t), so the estimate is unbiased for
    f - u phi(t), and the deterministic remainder u (phi(t) - F) is added.  Pairing both terms
    on the same history removes most of the Monte Carlo variance.
    """
    if not isinstance(f0, GaussianData):
        raise TypeError("nlfp_distance needs Gaussian initial data")
    rng = rng or np.random.default_rng(0)
    xg, vg = grid if grid is not None else default_nlfp_grid(f0, t)
    c = f0.drifted(t).cov
    batch = sample_histories(t, histories, rng)
    axx, axv, avv = batch_covariances(batch)
    u = gaussian_1d(f0.x_var + 2 * t, xg.points)
    acc = np.zeros((xg.n, vg.n))
    acc2 = np.zeros_like(acc)
    for a in range(0, histories, chunk):
        sl = slice(a, a + chunk)
        xx, xv, vv = 2 * axx[sl] + c.xx, 2 * axv[sl] + c.xv, 2 * avv[sl] + c.vv
        dh = _cell_gaussians(xx, xv, vv, xg, vg) - u[None, :, None] * _cell_gaussians_v(vv, vg)[:, None, :]
        acc += dh.sum(axis=0)
        acc2 += (dh * dh).sum(axis=0)
    mean = acc / histories
    se = np.sqrt(np.clip(acc2 / histories - mean * mean, 0, None) / max(histories - 1, 1))
    phi_t = velocity_cells(vg, t, f0.v_var)
    F = stationary_F(vg).values
    diff = mean + np.outer(u, phi_t - F)
    field = PhaseSpaceField(xg, vg, diff, se)
    dist = mixed_norm(field, p, r)
    scale = math.sqrt(2 / math.pi) if p == 1 and r == 1 else 1.0
    floor = scale * mixed_norm(field.with_values(se), p, r)
    return dist, floor


def nlfp_distance_series(f0: GaussianData, times, p: float, r: float = 1.0,
                         histories: int = 10_000, seed: int = 0) -> DecaySeries:
    times = list(times)
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be strictly increasing")
    streams = np.random.SeedSequence(seed).spawn(len(times))
    series = DecaySeries(meta={"model": "nlfp", "s": 1.0, "d": 1, "p": p, "r": r,
                               "method": "wild", "seed": seed, "budget": histories})
    for t, ss in zip(times, streams):
        dist, floor = nlfp_distance(f0, t, p, r, histories, np.random.default_rng(ss))
        series.append(t, dist, floor)
    return series


# ---------------------------------------------------------------------------
# Gaussian perturbation bound


def perturbation_ratio(A: BlockCovariance, B: BlockCovariance, p: float, r: float,
                       xgrid: GridSpec, vgrid: GridSpec) -> float:
    """||G(A) - G(B)||_{L^p_x L^r_v} / (det-factors ||Delta||_F) for densities of covariance A, B."""
    _, fro, _ = delta_matrix(A, B)
    X, V = phase_mesh(xgrid, vgrid)
    diff = gaussian_pdf(A, X, V) - gaussian_pdf(B, X, V)
    dist = mixed_norm(PhaseSpaceField(xgrid, vgrid, diff), p, r)
    fx = 0.0 if np.isinf(p) else 1 / p
    fr = 0.0 if np.isinf(r) else 1 / r
    scale = B.xx ** (-0.5 * (1 - fx)) * B.vv ** (-0.5 * (1 - fr))
    return dist / (scale * fro) if fro > 0 else 0.0


def random_perturbation_pairs(count: int, rng: np.random.Generator, max_op: float = 0.5):
    """Block-diagonal B and A = B^1/2 (I + D) B^1/2 with ||D||_op <= max_op."""
    pairs = []
    while len(pairs) < count:
        bxx, bvv = np.exp(rng.uniform(-1.5, 1.5, 2))
        D = rng.uniform(-1, 1, (2, 2))
        D = 0.5 * (D + D.T)
        D *= rng.uniform(0.01, max_op) / np.max(np.abs(np.linalg.eigvalsh(D)))
        sq = np.diag(np.sqrt([bxx, bvv]))
        A = sq @ (np.eye(2) + D) @ sq
        pairs.append((BlockCovariance.from_matrix(A), BlockCovariance(bxx, 0.0, bvv)))
    return pairs


def pair_grid(A: BlockCovariance, B: BlockCovariance, n: int = 201):
    sx = 10 * math.sqrt(max(A.xx, B.xx))
    sv = 10 * math.sqrt(max(A.vv, B.vv))
    return GridSpec.symmetric(sx, sx / (n // 2)), GridSpec.symmetric(sv, sv / (n // 2))


def calibrate_perturbation_constant(p: float, r: float, rng: np.random.Generator,
                                    count: int = 100, margin: float = 1.25) -> float:
    """margin times the largest observed ratio over random pairs."""
    worst = 0.0
    for A, B in random_perturbation_pairs(count, rng):
        worst = max(worst, perturbation_ratio(A, B, p, r, *pair_grid(A, B)))
    return margin * worst
