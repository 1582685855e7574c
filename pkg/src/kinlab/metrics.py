"""Norms, heat benchmark, decay exponents and rate fitting."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import DegenerateFit, GridTooCoarse, OutOfTableRange
from .grids import GridFunction, GridSpec, PhaseSpaceField, lp_sum
from .stable import StableLaw, check_stability, density_grid, tail_probability


def q_exponent(d: int, s: float, p: float) -> float:
    """First-order decay exponent d/(2s) (1 - 1/p)."""
    check_stability(s)
    if p < 1:
        raise ValueError("p must be at least 1")
    return d / (2 * s) * (1 - (0.0 if np.isinf(p) else 1 / p))


def default_nu(s: float) -> float:
    return 1.0 if s > 0.5 else 1.5 * s


def p_max(d: int, s: float) -> float:
    """Largest admissible Lebesgue exponent for low-order stable BGK (inf when unrestricted)."""
    if s >= d / (2 * (d + 1)):
        return math.inf
    return (1 - 2 * s) * d / ((1 - 2 * s) * d - 2 * s)


def gamma_bar(d: int, s: float, p: float) -> float:
    return (1 - q_exponent(d, s, p) * max(1 - 2 * s, 0.0)) / 3


MODELS = ("bgk", "gen-bgk", "nlfp", "kfp", "fkfp")


def gamma_lookup(model: str, s: float, p: float, d: int = 1,
                 nu: float | None = None, delta: float | None = None) -> float:
    """Second-order exponent of the table of results.

    nlfp returns 1/2 although only every exponent below 1/2 is established.
    """
    check_stability(s)
    if model not in MODELS:
        raise OutOfTableRange(f"unknown model {model!r}")
    if p < 1:
        raise OutOfTableRange("p must be at least 1")
    if model in ("bgk", "gen-bgk"):
        if p >= p_max(d, s):
            raise OutOfTableRange(f"p={p} is not below p_max={p_max(d, s):.4g}")
        base = 1 / 3 if s >= 0.5 else gamma_bar(d, s, p)
        if model == "bgk":
            return base
        if delta is None:
            raise OutOfTableRange("gen-bgk needs the CLT rate delta")
        return min(delta / (2 * s), base)
    if model in ("nlfp", "kfp"):
        if s != 1.0:
            raise OutOfTableRange(f"{model} is tabulated for s = 1 only")
        return 0.5
    nu = default_nu(s) if nu is None else nu
    if p >= 2:
        return nu / (2 * s)
    if p > 1:
        return nu / s * (1 - 1 / p)
    raise OutOfTableRange("fkfp has no tabulated exponent at p = 1")


# ---------------------------------------------------------------------------
# norms


def mixed_norm(f: PhaseSpaceField, p: float, r: float) -> float:
    """L^p_x L^r_v: inner L^r in v, outer L^p in x."""
    a = np.abs(f.values)
    hv, hx = f.vgrid.spacing, f.xgrid.spacing
    if np.isinf(r):
        inner = a.max(axis=1)
    elif r == 1:
        inner = a.sum(axis=1) * hv
    else:
        inner = (np.sum(a**r, axis=1) * hv) ** (1 / r)
    return lp_sum(inner, hx, p)


def mixed_norm_v_outer(f: PhaseSpaceField, r: float, p: float) -> float:
    """L^r_v L^p_x: inner L^p in x, outer L^r in v."""
    a = np.abs(f.values)
    hv, hx = f.vgrid.spacing, f.xgrid.spacing
    if np.isinf(p):
        inner = a.max(axis=0)
    elif p == 1:
        inner = a.sum(axis=0) * hx
    else:
        inner = (np.sum(a**p, axis=0) * hx) ** (1 / p)
    return lp_sum(inner, hv, r)


def plain_norm(f: PhaseSpaceField, p: float) -> float:
    return lp_sum(f.values, f.cell, p)


# ---------------------------------------------------------------------------
# heat benchmark


def heat_kernel_scale(t: float, s: float) -> float:
    """Scale (Gamma(2s+1) t)^(1/2s) of the fractional heat kernel at time t."""
    return (gamma_fn(2 * s + 1) * t) ** (1 / (2 * s))


def frac_heat_solution(rho0: GridFunction, t: float, s: float) -> GridFunction:
    """Stable-kernel convolution of rho0, computed on the Fourier side."""
    s = check_stability(s)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return GridFunction(rho0.grid, rho0.values.copy())
    grid = rho0.grid
    if not grid.is_symmetric:
        raise ValueError("frac_heat_solution needs a symmetric grid")
    law = StableLaw(s, heat_kernel_scale(t, s))
    half = grid.extent[1]
    # kernel mass wrapping around the padded period
    if tail_probability(law, half) > 1e-4:
        raise GridTooCoarse(f"heat kernel at t={t} spreads beyond the grid window")
    if float(law.char_fn(math.pi / grid.spacing)) > 1e-8:
        raise GridTooCoarse("grid spacing does not resolve the heat kernel")
    n = grid.n
    nfft = 1 << (2 * n - 1).bit_length()
    k = 2 * math.pi * np.fft.rfftfreq(nfft, d=grid.spacing)
    c = n // 2
    buf = np.zeros(nfft)
    buf[:n - c] = rho0.values[c:]
    buf[nfft - c:] = rho0.values[:c]
    out = np.fft.irfft(np.fft.rfft(buf) * law.char_fn(k), nfft)
    vals = np.concatenate((out[nfft - c:], out[:n - c]))
    return GridFunction(grid, vals)


def self_similar_profile(t: float, s: float, grid: GridSpec, d: int = 1) -> GridFunction:
    """(1+t)^(-d/2s) M^s((1+t)^(-1/2s) x) on a grid (d = 1)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return density_grid(StableLaw(s, (1 + t) ** (1 / (2 * s)), d), grid)


# ---------------------------------------------------------------------------
# decay series and fits


@dataclass
class DecaySeries:
    times: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    se: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, t: float, dist: float, se: float = 0.0):
        if self.times and t <= self.times[-1]:
            raise ValueError("times must be strictly increasing")
        if dist < 0:
            raise ValueError("distances are nonnegative")
        self.times.append(float(t))
        self.distances.append(float(dist))
        self.se.append(float(se))

    def __len__(self) -> int:
        return len(self.times)

    def to_csv(self, manifest_hash: str = "") -> str:
        buf = io.StringIO()
        buf.write(f"# manifest={manifest_hash}\n")
        w = csv.writer(buf, lineterminator="\n")
        cols = ["t", "distance", "se", "model", "s", "d", "p", "r", "method", "seed"]
        w.writerow(cols)
        m = self.meta
        for t, dist, se in zip(self.times, self.distances, self.se):
            w.writerow([repr(t), repr(dist), repr(se), m.get("model", ""), m.get("s", ""),
                        m.get("d", ""), m.get("p", ""), m.get("r", ""), m.get("method", ""),
                        m.get("seed", "")])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DecaySeries":
        rows = list(csv.DictReader(line for line in text.splitlines() if not line.startswith("#")))
        out = cls()
        for row in rows:
            out.append(float(row["t"]), float(row["distance"]), float(row["se"] or 0.0))
        if rows:
            out.meta = {k: rows[0][k] for k in ("model", "s", "d", "p", "r", "method", "seed")}
        return out


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    slope_se: float
    points: int


def rate_fit(series: DecaySeries, window: tuple[float, float] | None = None,
             noise_floor=None) -> RateFit:
    """Least squares of log distance on log t.

    The default window is the last decade of times, ignoring t < 10. Points whose
    distance is below 10 times the noise floor (per-point array or scalar) are dropped.
    """
    t = np.asarray(series.times, dtype=float)
    dist = np.asarray(series.distances, dtype=float)
    if t.size == 0:
        raise DegenerateFit("empty series")
    if window is None:
        hi = t.max()
        window = (max(10.0, hi / 10), hi)
    keep = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12) & (dist > 0)
    if noise_floor is not None:
        keep &= dist >= 10 * np.broadcast_to(np.asarray(noise_floor, dtype=float), t.shape)
    if keep.sum() < 4:
        raise DegenerateFit(f"only {int(keep.sum())} usable points in window {window}")
    x, y = np.log(t[keep]), np.log(dist[keep])
    A = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    m = x.size
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    sxx = float(np.sum((x - x.mean()) ** 2))
    se = math.sqrt(float(np.sum(resid**2)) / (m - 2) / sxx) if m > 2 else 0.0
    return RateFit(float(coef[0]), float(coef[1]), r2, se, int(m))


# ---------------------------------------------------------------------------
# diffusive scaling


def diffusive_rescale(f0, epsilon: float):
    """f0^eps(x, v) = eps^-d f0(x/eps, v)."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if epsilon == 1:
        return f0
    return f0.rescaled(epsilon)


def diffusive_experiment(model: str, f0, epsilons, t: float, p: float, s: float = 1.0,
                         d: int = 1, **solver_kw) -> list[dict]:
    """Distance of the rescaled solution to its macroscopic limit for each eps.

    The rescaled solution at time t is the unscaled one at t/eps^(2s) viewed at x/eps,
    so its L^p distance is eps^(-d(1-1/p)) times the unscaled distance at t/eps^(2s).
    """
    rows = []
    for eps in epsilons:
        T = t / eps ** (2 * s)
        if model in ("kfp", "fkfp"):
            from .spectral import spectral_distance
            dist = spectral_distance(f0.char_fn, T, s, p, **solver_kw)
        elif model == "bgk":
            from .bgk import bgk_distance
            dist = bgk_distance(f0, T, p, s=s, **solver_kw)[0]
        elif model == "nlfp":
            from .nlfp import nlfp_distance
            dist = nlfp_distance(f0, T, p, **solver_kw)[0]
        else:
            raise ValueError(f"unknown model {model!r}")
        factor = eps ** (-d * (1 - (0.0 if np.isinf(p) else 1 / p)))
        rows.append({"epsilon": float(eps), "time": float(T), "distance": float(factor * dist)})
    return rows
