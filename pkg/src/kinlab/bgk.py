"""Linear BGK equation: Wild-sum evaluator, free transport and jump-process particles.

For a history 0 < t_1 < ... < t_n < t the Wild term is

    Phi_n(x, v) = F(v) (K_n * rho[T_{t_1} f0])(x - (t - t_n) v),

where K_n is the law of sum_{i=2}^n (t_i - t_{i-1}) W_i with W_i ~ F i.i.d.  For the
stable equilibrium K_n = M^s_{sigma_n} with sigma_n^(2s) = sum (t_i - t_{i-1})^(2s).
The solution is e^-t T_t f0 + (1 - e^-t) E[Phi_N | N >= 1].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridTooCoarse
from .gaussians import GaussianData, gaussian_1d
from .grids import GridFunction, GridSpec, PhaseSpaceField, lp_sum, phase_mesh
from .histories import CollisionHistory, HistoryBatch, sample_histories
from .metrics import DecaySeries, frac_heat_solution, heat_kernel_scale, mixed_norm
from .stable import StableLaw, check_stability, density, sample as stable_sample, tail_probability

GENERAL_F_MAX_JUMPS = 512


@dataclass
class BGKModel:
    """Equilibrium F: the standard stable law, or a density tabulated on a v-grid."""

    s: float = 1.0
    table: GridFunction | None = None
    d: int = 1
    _hat_k: np.ndarray | None = field(default=None, repr=False)
    _hat_vals: np.ndarray | None = field(default=None, repr=False)
    _cdf: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.s = check_stability(self.s)
        if self.table is not None:
            mass = self.table.mass()
            if abs(mass - 1) > 1e-4:
                raise ValueError(f"tabulated equilibrium has mass {mass:.6f}")
            h = self.table.grid.spacing
            k = np.linspace(0.0, math.pi / h, 4097)
            v = self.table.points
            w = self.table.values * h
            self._hat_k = k
            self._hat_vals = np.cos(np.outer(k, v)) @ w + 0j - 1j * (np.sin(np.outer(k, v)) @ w)
            c = np.cumsum(self.table.values) * h
            self._cdf = c / c[-1]

    @property
    def law(self) -> StableLaw:
        return StableLaw(self.s, 1.0, self.d)

    @property
    def general(self) -> bool:
        return self.table is not None

    def density(self, v) -> np.ndarray:
        if self.table is None:
            return density(self.law, v)
        return np.interp(v, self.table.points, self.table.values, left=0.0, right=0.0)

    def char_fn(self, k) -> np.ndarray:
        if self.table is None:
            return self.law.char_fn(k)
        k = np.asarray(k, dtype=float)
        a = np.abs(k)
        re = np.interp(a, self._hat_k, self._hat_vals.real, right=0.0)
        im = np.interp(a, self._hat_k, self._hat_vals.imag, right=0.0) * np.sign(k)
        return re + 1j * im

    def small_frequency_coefficient(self, k: float = 1e-2) -> float:
        """(1 - Re F^(k)) / |k|^(2s): should approach a positive constant as k -> 0."""
        if self.table is None:
            re = float(self.law.char_fn(k))
        else:  # direct quadrature: interpolating F^ would swamp 1 - F^ at small k
            re = float(np.cos(k * self.table.points) @ self.table.values * self.table.grid.spacing)
        return (1 - re) / abs(k) ** (2 * self.s)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        if self.table is None:
            return stable_sample(self.law, rng, count)
        u = rng.uniform(size=count)
        h = self.table.grid.spacing
        return np.interp(u, self._cdf, self.table.points) + h * (rng.uniform(size=count) - 0.5)


# ---------------------------------------------------------------------------
# transport and macroscopic densities


def transport_apply(f0, t: float):
    """T_t f0: closed-form parameters for Gaussian data, otherwise a pointwise evaluator."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return f0
    if isinstance(f0, GaussianData):
        return f0.transported(t)
    return lambda x, v: f0.density(np.asarray(x) - t * np.asarray(v), v)


def rho_of_transported(f0, t1: float, grid: GridSpec | None = None) -> GridFunction | float:
    """x-marginal of T_{t1} f0: the variance for Gaussian data, a grid density otherwise."""
    if t1 < 0:
        raise ValueError("t1 must be nonnegative")
    if isinstance(f0, GaussianData):
        var = f0.rho_variance(t1)
        if grid is None:
            return var
        return GridFunction(grid, gaussian_1d(var, grid.points))
    rho = f0.rho_of_transported(t1)
    if grid is None:
        return rho
    return GridFunction(grid, np.interp(grid.points, rho.points, rho.values, left=0.0, right=0.0))


def gain_apply(values: np.ndarray, vgrid: GridSpec, F_values: np.ndarray) -> np.ndarray:
    """F(v) times the v-integral of a field sampled on (x, v)."""
    return np.outer(values.sum(axis=1) * vgrid.spacing, F_values)


def sigma_n(h: CollisionHistory, s: float) -> float:
    """(sum_{i>=2} (t_i - t_{i-1})^(2s))^(1/2s); zero when n <= 1."""
    s = check_stability(s)
    if h.n <= 1:
        return 0.0
    return float(np.sum(np.diff(h.times) ** (2 * s)) ** (1 / (2 * s)))


# ---------------------------------------------------------------------------
# Wild terms


LATTICE_MAX_POINTS = 1 << 22
WRAP_TOL = 1e-4


def _stable_reach(s: float, sig: float) -> float:
    """Radius beyond which a stable kernel of scale sig has mass below WRAP_TOL / 2."""
    if sig <= 0 or s == 1.0:
        return 0.0
    law = StableLaw(s, sig)
    r = 10 * sig
    while tail_probability(law, r) > WRAP_TOL / 2:
        r *= 2
    return r


def _lattice(xgrid: GridSpec, vgrid: GridSpec, t: float, width: float | None, kernel_reach: float = 0.0):
    lo, hi = vgrid.extent
    reach = max(abs(xgrid.extent[0]), abs(xgrid.extent[1])) + t * max(abs(lo), abs(hi))
    half = width if width is not None else max(2 * reach, kernel_reach)
    h = min(xgrid.spacing, vgrid.spacing) / 2
    n = 1 << int(math.ceil(math.log2(2 * half / h)))
    if n > LATTICE_MAX_POINTS:
        raise GridTooCoarse(f"lattice of {n} points needed to hold the jump kernel")
    return n, h


def _rho1_hat(f0, t1: float, k: np.ndarray, lattice_pts: np.ndarray) -> np.ndarray:
    if isinstance(f0, GaussianData):
        return np.exp(-0.5 * f0.rho_variance(t1) * k * k)
    rho = f0.rho_of_transported(t1)
    vals = np.interp(lattice_pts, rho.points, rho.values, left=0.0, right=0.0)
    h = lattice_pts[1] - lattice_pts[0]
    # transform of the samples placed with the origin at index 0
    return np.fft.rfft(np.fft.ifftshift(vals)) * h


def _phi_lattice(model: BGKModel, f0, h: CollisionHistory, n_lat: int, h_lat: float):
    """x -> (K_n * rho_1)(x) on a periodic lattice; returns (points, values)."""
    k = 2 * math.pi * np.fft.rfftfreq(n_lat, h_lat)
    pts = (np.arange(n_lat) - n_lat // 2) * h_lat
    g = _rho1_hat(f0, float(h.times[0]), k, pts)
    if model.general:
        if h.n > GENERAL_F_MAX_JUMPS:
            raise ValueError(f"general-F mode handles at most {GENERAL_F_MAX_JUMPS} jumps per history")
        for tau in np.diff(h.times):
            g = g * model.char_fn(tau * k)
    else:
        sig = sigma_n(h, model.s)
        if sig > 0:
            kern = StableLaw(model.s, sig)
            if not model.law.is_gaussian and tail_probability(kern, n_lat * h_lat / 2) > 1e-4:
                raise GridTooCoarse(f"kernel of scale {sig:.3g} wraps around the lattice")
            g = g * kern.char_fn(k)
    vals = np.fft.fftshift(np.fft.irfft(g, n_lat)) / h_lat
    return pts, vals


def phi_n(h: CollisionHistory, model: BGKModel, f0, xgrid: GridSpec, vgrid: GridSpec,
          lattice_width: float | None = None) -> PhaseSpaceField:
    """Phi_n for one history on the phase-space grid (n >= 1)."""
    if h.n < 1:
        raise ValueError("Phi_n needs at least one jump; the n = 0 term is e^-t T_t f0")
    X, V = phase_mesh(xgrid, vgrid)
    tau = h.horizon - h.times[-1]
    Fv = model.density(vgrid.points)[None, :]
    if isinstance(f0, GaussianData) and model.s == 1.0 and not model.general:
        var = sigma_n(h, 1.0) ** 2 + f0.rho_variance(float(h.times[0]))
        return PhaseSpaceField(xgrid, vgrid, Fv * gaussian_1d(var, X - tau * V))
    reach = 0.0 if model.general else _stable_reach(model.s, sigma_n(h, model.s))
    n_lat, h_lat = _lattice(xgrid, vgrid, h.horizon, lattice_width, reach)
    pts, vals = _phi_lattice(model, f0, h, n_lat, h_lat)
    return PhaseSpaceField(xgrid, vgrid, Fv * np.interp(X - tau * V, pts, vals, left=0.0, right=0.0))


def _n0_term(f0, t: float, X, V) -> np.ndarray:
    return f0.density(X - t * V, V)


def _wild_terms(model: BGKModel, f0, batch: HistoryBatch, xgrid: GridSpec, vgrid: GridSpec,
                chunk: int, lattice_width: float | None):
    """Yield Phi_n for consecutive blocks of histories as arrays (block, nx, nv)."""
    t = batch.horizon
    X, V = phase_mesh(xgrid, vgrid)
    Fv = model.density(vgrid.points)[None, None, :]
    if isinstance(f0, GaussianData) and model.s == 1.0 and not model.general:
        first = batch.first()
        var = batch.sigma_power(1.0) + f0.x_var + 2 * first * f0.xv + first**2 * f0.v_var
        tau = t - batch.last()
        for a in range(0, batch.size, chunk):
            sl = slice(a, a + chunk)
            vv = var[sl][:, None, None]
            shift = X[None] - tau[sl][:, None, None] * V[None]
            yield Fv * np.exp(-0.5 * shift * shift / vv) / np.sqrt(2 * math.pi * vv)
        return
    sig_max = 0.0 if model.general else float(batch.sigma_power(model.s).max()) ** (1 / (2 * model.s))
    n_lat, h_lat = _lattice(xgrid, vgrid, t, lattice_width, _stable_reach(model.s, sig_max))
    for i in range(batch.size):
        h = batch[i]
        pts, vals = _phi_lattice(model, f0, h, n_lat, h_lat)
        yield Fv * np.interp(X - (t - h.times[-1]) * V, pts, vals, left=0.0, right=0.0)[None]


def wild_density(model: BGKModel, f0, t: float, xgrid: GridSpec, vgrid: GridSpec,
                 histories: int, rng: np.random.Generator, chunk: int = 64,
                 lattice_width: float | None = None) -> PhaseSpaceField:
    """Monte Carlo Wild sum with per-cell standard errors.

    The n = 0 term enters analytically with weight e^-t; the remaining mass 1 - e^-t is
    the average of Phi_n over histories drawn given n >= 1.
    """
    if histories < 1:
        raise ValueError("histories must be at least 1")
    if t < 0:
        raise ValueError("t must be nonnegative")
    X, V = phase_mesh(xgrid, vgrid)
    base = math.exp(-t) * _n0_term(f0, t, X, V)
    if t == 0:
        return PhaseSpaceField(xgrid, vgrid, base, np.zeros_like(base), {"t": 0.0, "histories": 0})
    batch = sample_histories(t, histories, rng, nonempty=True)
    acc = np.zeros_like(base)
    acc2 = np.zeros_like(base)
    for phi in _wild_terms(model, f0, batch, xgrid, vgrid, chunk, lattice_width):
        acc += phi.sum(axis=0)
        acc2 += (phi * phi).sum(axis=0)
    w = -math.expm1(-t)
    mean = acc / histories
    var_cell = np.clip(acc2 / histories - mean * mean, 0.0, None)
    se = w * np.sqrt(var_cell / max(histories - 1, 1))
    return PhaseSpaceField(xgrid, vgrid, base + w * mean, se,
                           {"t": float(t), "histories": int(histories), "mean_jumps": float(batch.counts.mean())})


def _bin_masses(values: np.ndarray, cell: float, sub: int) -> np.ndarray:
    """Sum (..., nx, nv) samples over sub x sub blocks, times the fine cell area."""
    *lead, nx, nv = values.shape
    b = values.reshape(*lead, nx // sub, sub, nv // sub, sub)
    return b.sum(axis=(-3, -1)) * cell


def wild_cell_masses(model: BGKModel, f0, t: float, xedges: np.ndarray, vedges: np.ndarray,
                     histories: int, rng: np.random.Generator, sub: int = 8,
                     chunk: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities of coarse cells (plus a final 'outside' entry) and their standard errors.

    Cells must be uniform; each is integrated by the midpoint rule on a sub x sub lattice.
    """
    hx, hv = (xedges[1] - xedges[0]) / sub, (vedges[1] - vedges[0]) / sub
    nx, nv = (len(xedges) - 1) * sub, (len(vedges) - 1) * sub
    xg = GridSpec(nx, hx, xedges[0] + hx / 2)
    vg = GridSpec(nv, hv, vedges[0] + hv / 2)
    X, V = phase_mesh(xg, vg)

    def with_outside(m):
        inside = m.reshape(*m.shape[:-2], -1)
        return np.concatenate((inside, 1 - inside.sum(axis=-1, keepdims=True)), axis=-1)

    base = with_outside(_bin_masses(_n0_term(f0, t, X, V), hx * hv, sub))
    if t == 0:
        return base, np.zeros_like(base)
    batch = sample_histories(t, histories, rng, nonempty=True)
    acc = np.zeros_like(base)
    acc2 = np.zeros_like(base)
    for phi in _wild_terms(model, f0, batch, xg, vg, chunk, None):
        m = with_outside(_bin_masses(phi, hx * hv, sub))
        acc += m.sum(axis=0)
        acc2 += (m * m).sum(axis=0)
    w = -math.expm1(-t)
    mean = acc / histories
    se = w * np.sqrt(np.clip(acc2 / histories - mean * mean, 0, None) / max(histories - 1, 1))
    return math.exp(-t) * base + w * mean, se


def particle_cell_masses(x: np.ndarray, v: np.ndarray, xedges: np.ndarray,
                         vedges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Empirical cell probabilities (plus 'outside') with binomial standard errors."""
    H, _, _ = np.histogram2d(x, v, bins=(xedges, vedges))
    p = H.ravel() / x.size
    p = np.append(p, 1 - p.sum())
    return p, np.sqrt(p * (1 - p) / x.size)


def l1_agreement(p1, se1, p2, se2) -> dict:
    """L1 gap between two cell-probability estimates against its null mean + 3 sd."""
    s = np.sqrt(se1**2 + se2**2)
    gap = float(np.abs(p1 - p2).sum())
    mu = float(math.sqrt(2 / math.pi) * s.sum())
    sd = float(math.sqrt((1 - 2 / math.pi) * np.sum(s**2)))
    return {"l1": gap, "null_mean": mu, "null_sd": sd, "threshold": mu + 3 * sd, "pass": gap <= mu + 3 * sd}


# ---------------------------------------------------------------------------
# particles


def _draw_initial(f0, rng, count):
    if callable(f0) and not hasattr(f0, "sample"):
        return f0(rng, count)
    return f0.sample(rng, count)


def particle_simulate(model: BGKModel, f0, t: float, count: int, rng: np.random.Generator,
                      return_counts: bool = False):
    """Exact jump-process paths: free flight between unit-rate rings, V redrawn from F at each ring.

    ``f0`` is initial data with a ``sample(rng, count)`` method or a callable of the same shape.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    x, v = _draw_initial(f0, rng, count)
    x, v = np.array(x, dtype=float), np.array(v, dtype=float)
    batch = sample_histories(t, count, rng)
    counts = batch.counts
    if batch.times.size == 0:
        x = x + t * v
        return (x, v, counts) if return_counts else (x, v)
    seg = np.repeat(np.arange(count), counts)
    # flight after each ring ends at the next ring of the same particle, or at t
    nxt = np.append(batch.times[1:], t)
    last = np.zeros(batch.times.size, bool)
    last[batch.offsets[1:][counts > 0] - 1] = True
    nxt[last] = t
    flight = nxt - batch.times
    w = model.sample(rng, batch.times.size)
    first = np.where(counts > 0, batch.first(), t)
    x = x + first * v + np.bincount(seg, weights=flight * w, minlength=count)
    v = v.copy()
    v[counts > 0] = w[last]
    return (x, v, counts) if return_counts else (x, v)


def particle_histogram(x: np.ndarray, v: np.ndarray, xgrid: GridSpec, vgrid: GridSpec) -> PhaseSpaceField:
    """Normalized 2-d histogram on the grid cells, with multinomial standard errors."""
    ex = np.append(xgrid.points - xgrid.spacing / 2, xgrid.points[-1] + xgrid.spacing / 2)
    ev = np.append(vgrid.points - vgrid.spacing / 2, vgrid.points[-1] + vgrid.spacing / 2)
    H, _, _ = np.histogram2d(x, v, bins=(ex, ev))
    n = x.size
    cell = xgrid.spacing * vgrid.spacing
    p = H / n
    return PhaseSpaceField(xgrid, vgrid, p / cell, np.sqrt(p * (1 - p) / n) / cell, {"particles": n})


# ---------------------------------------------------------------------------
# distances to the macroscopic limit


def default_bgk_grid(f0, t: float, s: float = 1.0, nx: int = 257, nv: int = 97) -> tuple[GridSpec, GridSpec]:
    """Phase-space window sized for the solution at time t."""
    if s == 1.0:
        x_sd = math.sqrt(getattr(f0, "x_var", 1.0) + 2 * t + 1.0)
        xh, vh = 8 * x_sd, 8.0
    else:
        xh = 40 * (heat_kernel_scale(max(t, 1.0), s) + 1.0)
        vh = 40.0
    return GridSpec.symmetric(xh, xh / (nx // 2)), GridSpec.symmetric(vh, vh / (nv // 2))


def macroscopic_density(f0, t: float, s: float, xgrid: GridSpec) -> np.ndarray:
    """u(t, x): the stable heat evolution of the x-marginal of f0, sampled on xgrid."""
    if isinstance(f0, GaussianData) and s == 1.0:
        return gaussian_1d(f0.x_var + 2 * t, xgrid.points)
    if isinstance(f0, GaussianData):
        half = max(abs(xgrid.extent[0]), abs(xgrid.extent[1]))
        law = StableLaw(s, heat_kernel_scale(t, s))
        wide = GridSpec.symmetric(max(2 * half, 40 * law.scale), min(xgrid.spacing, 0.05 * (1 + math.sqrt(f0.x_var))))
        # enlarge until the kernel's wrapped mass is negligible
        while tail_probability(law, wide.extent[1]) > 1e-4:
            wide = GridSpec.symmetric(2 * wide.extent[1], wide.spacing)
        rho0 = GridFunction(wide, gaussian_1d(f0.x_var, wide.points))
    else:
        rho0 = f0.field.marginal_x()
        wide = rho0.grid
    u = frac_heat_solution(rho0, t, s)
    return np.interp(xgrid.points, u.points, u.values, left=0.0, right=0.0)


def limit_field(model: BGKModel, f0, t: float, xgrid: GridSpec, vgrid: GridSpec) -> PhaseSpaceField:
    u = macroscopic_density(f0, t, model.s, xgrid)
    return PhaseSpaceField(xgrid, vgrid, np.outer(u, model.density(vgrid.points)))


def field_distance(f: PhaseSpaceField, g: PhaseSpaceField, p: float, r: float | None = None) -> float:
    diff = f.with_values(f.values - g.values)
    if r is None or r == p:
        return lp_sum(diff.values, diff.cell, p)
    return mixed_norm(diff, p, r)


def noise_floor(f: PhaseSpaceField, p: float, r: float | None = None) -> float:
    """Expected norm of the Monte Carlo noise alone (Gaussian cell errors)."""
    if f.se is None:
        return 0.0
    scale = math.sqrt(2 / math.pi) if p == 1 and (r is None or r == 1) else 1.0
    return scale * field_distance(f.with_values(f.se), f.with_values(np.zeros_like(f.se)), p, r)


def bgk_distance(f0, t: float, p: float, r: float | None = None, s: float = 1.0,
                 model: BGKModel | None = None, method: str = "wild", budget: int = 10_000,
                 rng: np.random.Generator | None = None, grid=None) -> tuple[float, float]:
    """(distance, noise floor) of ||f(t) - M^s(v) u(t, x)|| on the default grid."""
    model = model or BGKModel(s)
    rng = rng or np.random.default_rng(0)
    xg, vg = grid if grid is not None else default_bgk_grid(f0, t, model.s)
    if method == "wild":
        f = wild_density(model, f0, t, xg, vg, budget, rng)
    elif method == "particle":
        x, v = particle_simulate(model, f0, t, budget, rng)
        f = particle_histogram(x, v, xg, vg)
    else:
        raise ValueError(f"unknown method {method!r}")
    g = limit_field(model, f0, t, xg, vg)
    return field_distance(f, g, p, r), noise_floor(f, p, r)


def bgk_distance_series(f0, times, p: float, r: float | None = None, s: float = 1.0,
                        model: BGKModel | None = None, method: str = "wild", budget: int = 10_000,
                        seed: int = 0) -> DecaySeries:
    """Distances at each time, one independent stream per time (spawned from ``seed``)."""
    times = list(times)
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be strictly increasing")
    streams = np.random.SeedSequence(seed).spawn(len(times))
    series = DecaySeries(meta={"model": "bgk", "s": s, "d": 1, "p": p, "r": p if r is None else r,
                               "method": method, "seed": seed, "budget": budget})
    floors = []
    for t, ss in zip(times, streams):
        dist, floor = bgk_distance(f0, t, p, r, s, model, method, budget, np.random.default_rng(ss))
        series.append(t, dist, floor)
        floors.append(floor)
    series.meta["noise_floor"] = floors
    return series
