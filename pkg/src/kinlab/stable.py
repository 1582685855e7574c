"""Isotropic 2s-stable laws.

Convention: the law ``M^s_lam`` has characteristic function
``exp(-(lam |eta|)^(2s) / (2s))``, so s = 1 is the centred Gaussian with variance
``lam^2`` per coordinate and s = 1/2 is the Cauchy law of scale ``lam``.

One-dimensional densities for other s are obtained once per s on a fine standard
lattice by FFT inversion of the characteristic function, splined, and rescaled;
the tails beyond the lattice window use the two-term power-law expansion.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import erfc, gamma, gammaln, zeta

from .errors import AliasingDetected, GridTooCoarse, InvalidStability
from .grids import GridFunction, GridSpec

# mass error tolerated on a requested grid before GridTooCoarse is raised
GRID_MASS_TOL = 1e-4


def check_stability(s: float) -> float:
    s = float(s)
    if not (0.0 < s <= 1.0) or math.isnan(s):
        raise InvalidStability(f"stability index s={s} is outside (0, 1]")
    return s


@dataclass(frozen=True)
class StableLaw:
    s: float
    scale: float = 1.0
    dim: int = 1

    def __post_init__(self):
        check_stability(self.s)
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("dimension must be a positive integer")

    @property
    def is_gaussian(self) -> bool:
        return self.s == 1.0

    @property
    def is_cauchy(self) -> bool:
        return self.s == 0.5

    def char_fn(self, eta) -> np.ndarray:
        """Characteristic function at frequencies ``eta`` (norms if d > 1)."""
        k = np.abs(np.asarray(eta, dtype=float)) * self.scale
        return np.exp(-(k ** (2 * self.s)) / (2 * self.s))

    def tail_constant(self) -> float:
        """c with density ~ c |x|^(-1-2s) as |x| -> inf (d = 1; zero for the Gaussian)."""
        s = self.s
        if s == 1.0:
            return 0.0
        return gamma(2 * s) * math.sin(math.pi * s) * self.scale ** (2 * s) / math.pi

    def rescaled(self, scale: float) -> "StableLaw":
        return StableLaw(self.s, scale, self.dim)


def convolve_scale(a: float, b: float, s: float) -> float:
    """Scale of M^s_a * M^s_b."""
    s = check_stability(s)
    if a < 0 or b < 0:
        raise ValueError("scales must be nonnegative")
    return float((a ** (2 * s) + b ** (2 * s)) ** (1 / (2 * s)))


# ---------------------------------------------------------------------------
# standard one-dimensional profile


def _bergstrom(s: float, y: np.ndarray, terms: int = 3) -> np.ndarray:
    """Large-|y| expansion of the standard density (gamma^(2s) = 1/(2s))."""
    a = 2 * s
    y = np.abs(y)
    out = np.zeros_like(y, dtype=float)
    for k in range(1, terms + 1):
        ck = (-1) ** (k + 1) * math.exp(gammaln(a * k + 1) - gammaln(k + 1)) \
            * math.sin(math.pi * s * k) * (1 / a) ** k / math.pi
        out += ck * y ** (-a * k - 1)
    return out


def _bergstrom_tail(s: float, y: float, terms: int = 3) -> float:
    """P(X > y) for large y from the same expansion."""
    a = 2 * s
    out = 0.0
    for k in range(1, terms + 1):
        ck = (-1) ** (k + 1) * math.exp(gammaln(a * k + 1) - gammaln(k + 1)) \
            * math.sin(math.pi * s * k) * (1 / a) ** k / math.pi
        out += ck * y ** (-a * k) / (a * k)
    return out


class _StandardProfile:
    """FFT-tabulated standard density for one s (d = 1)."""

    max_points = 2**22

    def __init__(self, s: float):
        self.s = s
        # Nyquist frequency must sit where the characteristic function is below e^-30
        kmax = (2 * s * 30.0) ** (1 / (2 * s))
        self.h = min(1 / 32, math.pi / kmax)
        c = gamma(2 * s) * math.sin(math.pi * s) / math.pi
        # period so that the wrapped tails cost < 1e-8 pointwise before correction
        period = (2 * c * zeta(1 + 2 * s) / 1e-8) ** (1 / (1 + 2 * s))
        n = 2 ** int(math.ceil(math.log2(max(period / self.h, 2**14))))
        n = min(n, self.max_points)
        self.period = n * self.h
        self.alias = 2 * c * zeta(1 + 2 * s) * self.period ** (-1 - 2 * s)
        k = 2 * math.pi * np.fft.fftfreq(n, d=self.h)
        phi = np.exp(-(np.abs(k) ** (2 * s)) / (2 * s))
        vals = np.fft.fftshift(np.fft.ifft(phi).real) / self.h
        y = (np.arange(n) - n // 2) * self.h
        keep = np.abs(y) <= self.period / 4
        y, vals = y[keep], vals[keep]
        # remove the periodic images of the power tail
        if s < 1.0:
            images = np.zeros_like(y)
            for m in range(1, 17):
                images += _bergstrom(s, y + m * self.period) + _bergstrom(s, y - m * self.period)
            rest = zeta(1 + 2 * s) - np.sum(np.arange(1, 17, dtype=float) ** (-1 - 2 * s))
            images += 2 * c * rest * self.period ** (-1 - 2 * s)
            vals = vals - images
            c2 = abs(_bergstrom(s, np.array([1.0]), 2)[0] - _bergstrom(s, np.array([1.0]), 1)[0])
            self.alias = 2 * c2 * zeta(1 + 4 * s) * self.period ** (-1 - 4 * s) + 1e-16
            # keep the spline only where the residual is negligible against the density
            ok = np.abs(y) <= max(64.0, (c / (1e6 * self.alias)) ** (1 / (1 + 2 * s)))
            y, vals = y[ok], vals[ok]
        self.window = float(y.max())
        self.spline = CubicSpline(y, vals)
        self.antider = self.spline.antiderivative()
        self.truncation = math.exp(-30.0) * kmax / math.pi

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.empty_like(y)
        inside = np.abs(y) <= self.window
        out[inside] = self.spline(y[inside])
        out[~inside] = _bergstrom(self.s, y[~inside])
        return out

    def upper_tail(self, y: float) -> float:
        """P(X > y) for y >= 0."""
        y = abs(float(y))
        if y <= self.window:
            return float(0.5 - (self.antider(y) - self.antider(0.0)))
        return _bergstrom_tail(self.s, y)


@lru_cache(maxsize=32)
def standard_profile(s: float) -> _StandardProfile:
    return _StandardProfile(check_stability(s))


def density(law: StableLaw, x) -> np.ndarray:
    """Pointwise density of ``law``; ``x`` has shape (...,) for d = 1 or (..., d)."""
    x = np.asarray(x, dtype=float)
    lam, d, s = law.scale, law.dim, law.s
    if d == 1:
        r = np.abs(x) / lam
    else:
        if x.shape[-1] != d:
            raise ValueError("last axis of x must have length d")
        r = np.linalg.norm(x, axis=-1) / lam
    if s == 1.0:
        return np.exp(-0.5 * r**2) / (2 * math.pi) ** (d / 2) / lam**d
    if s == 0.5:
        cd = math.exp(gammaln((d + 1) / 2)) / math.pi ** ((d + 1) / 2)
        return cd / (1 + r**2) ** ((d + 1) / 2) / lam**d
    if d != 1:
        raise ValueError("densities for s not in {1/2, 1} are tabulated in one dimension only")
    return standard_profile(s)(r) / lam


def tail_probability(law: StableLaw, radius: float) -> float:
    """P(|X| > radius) in one dimension."""
    if law.dim != 1:
        raise ValueError("tail probability is implemented for d = 1")
    y = abs(radius) / law.scale
    if law.s == 1.0:
        return float(erfc(y / math.sqrt(2)))
    if law.s == 0.5:
        return float(1 - 2 / math.pi * math.atan(y))
    return 2 * standard_profile(law.s).upper_tail(y)


def grid_aliasing_estimate(law: StableLaw, spacing: float) -> float:
    """Mass error of a Riemann sum with this spacing (Poisson summation, first image)."""
    return float(2 * law.char_fn(2 * math.pi / spacing))


def density_grid(law: StableLaw, grid: GridSpec, normalize: bool = False) -> GridFunction:
    """Density of ``law`` sampled on a 1-d grid.

    Values are pointwise exact (closed form or converged FFT inversion); the mass
    outside the window is recorded in ``tail_mass``. With ``normalize`` the samples
    are rescaled to unit trapezoid mass on the window.
    """
    check_stability(law.s)
    if law.dim != 1:
        raise ValueError("density_grid works on one-dimensional grids")
    err = grid_aliasing_estimate(law, grid.spacing)
    if not law.is_gaussian and not law.is_cauchy:
        prof = standard_profile(law.s)
        lo, hi = grid.extent
        err += prof.alias * (hi - lo) / law.scale + prof.truncation
    if err > GRID_MASS_TOL:
        raise GridTooCoarse(
            f"grid spacing {grid.spacing} cannot resolve s={law.s}, scale={law.scale} "
            f"(aliasing estimate {err:.2e})")
    values = density(law, grid.points)
    lo, hi = grid.extent
    tail = tail_probability(law, hi) if grid.is_symmetric else \
        0.5 * (tail_probability(law, lo) + tail_probability(law, hi))
    gf = GridFunction(grid, values, tail_mass=tail)
    if normalize:
        gf = GridFunction(grid, values / gf.mass(), tail_mass=0.0)
    return gf


def default_grid(law: StableLaw, points_per_scale: int = 32) -> GridSpec:
    """Symmetric window wide enough for the heavy tails of the law."""
    s = law.s
    if s == 1.0:
        width = 40.0
    elif s >= 0.5:
        width = 400.0
    else:
        width = 2000.0
    return GridSpec.symmetric(width * law.scale, law.scale / points_per_scale)


# ---------------------------------------------------------------------------
# sampling


def _cms_symmetric(alpha: float, rng: np.random.Generator, size) -> np.ndarray:
    """Chambers-Mallows-Stuck draw with characteristic function exp(-|k|^alpha)."""
    u = rng.uniform(-math.pi / 2, math.pi / 2, size)
    w = rng.exponential(1.0, size)
    if alpha == 1.0:
        return np.tan(u)
    return (np.sin(alpha * u) / np.cos(u) ** (1 / alpha)
            * (np.cos((1 - alpha) * u) / w) ** ((1 - alpha) / alpha))


def positive_stable(s: float, rng: np.random.Generator, size) -> np.ndarray:
    """Kanter draw of A > 0 with E exp(-theta A) = exp(-theta^s), 0 < s < 1."""
    u = rng.uniform(0.0, math.pi, size)
    w = rng.exponential(1.0, size)
    return (np.sin(s * u) / np.sin(u) ** (1 / s)
            * (np.sin((1 - s) * u) / w) ** ((1 - s) / s))


def sample(law: StableLaw, rng: np.random.Generator, count: int) -> np.ndarray:
    """I.i.d. draws; shape (count,) for d = 1 and (count, d) otherwise."""
    check_stability(law.s)
    if count < 1:
        raise ValueError("count must be at least 1")
    s, lam, d = law.s, law.scale, law.dim
    if s == 1.0:
        shape = (count,) if d == 1 else (count, d)
        return lam * rng.standard_normal(shape)
    c = lam * (2 * s) ** (-1 / (2 * s))
    if d == 1:
        return c * _cms_symmetric(2 * s, rng, count)
    a = positive_stable(s, rng, count)
    g = rng.standard_normal((count, d)) * math.sqrt(2.0)
    return c * np.sqrt(a)[:, None] * g


# ---------------------------------------------------------------------------
# norms and distances


def lp_norm(law: StableLaw, p: float, grid: GridSpec | None = None) -> float:
    """L^p norm of the density, from the grid plus the analytic far tail."""
    if law.dim != 1:
        if law.is_gaussian:
            d, lam = law.dim, law.scale
            if np.isinf(p):
                return (2 * math.pi) ** (-d / 2) * lam ** (-d)
            return lam ** (-d * (1 - 1 / p)) * (2 * math.pi) ** (-d / 2 * (1 - 1 / p)) * p ** (-d / (2 * p))
        raise ValueError("lp_norm for d > 1 is available for the Gaussian only")
    grid = grid or default_grid(law)
    gf = density_grid(law, grid)
    if np.isinf(p):
        return float(gf.values.max())
    if p == 1:
        return float(np.sum(gf.values) * grid.spacing + gf.tail_mass)
    base = np.sum(gf.values**p) * grid.spacing
    c = law.tail_constant()
    if c > 0:
        L = max(abs(grid.extent[0]), abs(grid.extent[1])) + grid.spacing / 2
        e = p * (1 + 2 * law.s)
        base += 2 * c**p * L ** (1 - e) / (e - 1)
    return float(base ** (1 / p))


def _pair_grid(lam1: float, lam2: float, s: float) -> GridSpec:
    lo, hi = min(lam1, lam2), max(lam1, lam2)
    width = default_grid(StableLaw(s, hi)).extent[1]
    return GridSpec.symmetric(width, lo / 32)


def exact_scale_distance(lam1: float, lam2: float, s: float, p: float) -> float:
    """Grid value of ||M^s_lam1 - M^s_lam2||_p in d = 1 (far tail added analytically)."""
    if lam1 == lam2:
        return 0.0
    grid = _pair_grid(lam1, lam2, s)
    a, b = StableLaw(s, lam1), StableLaw(s, lam2)
    diff = density(a, grid.points) - density(b, grid.points)
    if np.isinf(p):
        return float(np.abs(diff).max())
    base = np.sum(np.abs(diff) ** p) * grid.spacing
    c = abs(a.tail_constant() - b.tail_constant())
    if c > 0:
        L = grid.extent[1] + grid.spacing / 2
        e = p * (1 + 2 * s)
        base += 2 * c**p * L ** (1 - e) / (e - 1)
    return float(base ** (1 / p))


def _constants_table() -> dict:
    table = {}
    try:
        text = resources.files("kinlab").joinpath("data/stable_constants.csv").read_text()
    except FileNotFoundError:
        return table
    for row in csv.DictReader(line for line in text.splitlines() if not line.startswith("#")):
        key = (float(row["s"]), int(row["d"]), float(row["p"]))
        table[key] = float(row["constant"])
    return table


_CONSTANTS: dict | None = None


def calibrate_constant(s: float, p: float, d: int = 1, points: int = 41) -> float:
    """Measure C with ||M_r - M_1||_p <= C |1 - r| max(r, 1)^(-d(1-1/p)-1)
    over the admissible ratios |1 - r^(2s)| <= 1/2, with 5% headroom."""
    if d != 1:
        raise ValueError("calibration is implemented for d = 1")
    e = d * (1 - 1 / p) + 1 if not np.isinf(p) else d + 1
    rlo, rhi = 0.5 ** (1 / (2 * s)), 1.5 ** (1 / (2 * s))
    worst = 0.0
    for r in np.linspace(rlo, rhi, points):
        if abs(r - 1) < 1e-9:
            continue
        ratio = exact_scale_distance(r, 1.0, s, p) / (abs(1 - r) * max(r, 1.0) ** (-e))
        worst = max(worst, ratio)
    return float(1.05 * worst)


def distance_constant(s: float, p: float, d: int = 1) -> float:
    """Calibrated C_{d,p}(s): stored value if present, otherwise measured now."""
    global _CONSTANTS
    if _CONSTANTS is None:
        _CONSTANTS = _constants_table()
    key = (float(s), int(d), float(p))
    if key not in _CONSTANTS:
        _CONSTANTS[key] = calibrate_constant(s, p, d)
    return _CONSTANTS[key]


def scale_distance(lam1: float, lam2: float, s: float, p: float, d: int = 1) -> tuple[float, float]:
    """(exact grid distance, calibrated perturbation bound) between two scales."""
    s = check_stability(s)
    if lam1 <= 0 or lam2 <= 0:
        raise ValueError("scales must be positive")
    if d != 1:
        raise ValueError("scale_distance is implemented for d = 1")
    exact = exact_scale_distance(lam1, lam2, s, p)
    e = d * (1 - 1 / p) + 1 if not np.isinf(p) else d + 1
    bound = distance_constant(s, p, d) * abs(lam2 - lam1) * max(lam1, lam2) ** (-e)
    return exact, float(bound)


# ---------------------------------------------------------------------------
# convolution helpers


def fft_convolve(f: GridFunction, g: GridFunction) -> GridFunction:
    """Linear convolution of two densities on the same symmetric grid, returned on that grid."""
    if f.grid != g.grid:
        raise ValueError("grids differ")
    if not f.grid.is_symmetric:
        raise ValueError("fft_convolve needs a symmetric grid")
    n = f.grid.n
    m = 2 * n - 1
    nfft = 1 << (m - 1).bit_length()
    full = np.fft.irfft(np.fft.rfft(f.values, nfft) * np.fft.rfft(g.values, nfft), nfft)[:m]
    full *= f.grid.spacing
    c = n // 2
    return GridFunction(f.grid, full[c:c + n])


def clt_iterated_convolution(F: GridFunction, scales, n: int, s: float) -> GridFunction:
    """Rescaled n-fold convolution of scaled copies F_{sigma_i}.

    Returns x -> (n sbar^(2s))^(1/2s) f(n^(1/2s) sbar x) on F's grid, where f is the
    convolution of the F_{sigma_i} and sbar^(2s) is the mean of sigma_i^(2s).
    """
    s = check_stability(s)
    n = int(n)
    if n < 1:
        raise ValueError("n must be at least 1")
    sig = np.asarray(scales, dtype=float).ravel()
    if sig.size == 1:
        sig = np.full(n, sig[0])
    if sig.size != n or np.any(sig <= 0):
        raise ValueError("need n positive scales")
    h = F.grid.spacing
    lo, hi = F.grid.extent
    base = CubicSpline(F.points, F.values)
    sbar = float(np.mean(sig ** (2 * s)) ** (1 / (2 * s)))
    stretch = n ** (1 / (2 * s)) * sbar

    # copies on their own h-lattices; origins add under convolution
    origins, lengths = [], []
    for sg in sig:
        o = math.floor(sg * lo / h)
        origins.append(o)
        lengths.append(math.ceil(sg * hi / h) - o + 1)
    total = sum(lengths) - n + 1
    nfft = 1 << (total - 1).bit_length()

    def sampled(sg, o, ln):
        y = (o + np.arange(ln)) * h / sg
        vals = np.where((y >= lo) & (y <= hi), base(np.clip(y, lo, hi)), 0.0) / sg
        vals = np.clip(vals, 0.0, None)
        return vals / (vals.sum() * h)

    uniq, inverse = np.unique(sig, return_inverse=True)
    spec = np.ones(nfft // 2 + 1, dtype=complex)
    for k, sg in enumerate(uniq):
        idx = int(np.flatnonzero(inverse == k)[0])
        reps = int(np.sum(inverse == k))
        fk = np.fft.rfft(sampled(sg, origins[idx], lengths[idx]) * h, nfft)
        spec *= fk**reps
    conv = np.fft.irfft(spec, nfft)[:total] / h
    y0 = sum(origins) * h
    ygrid = y0 + h * np.arange(total)

    inside = (ygrid >= stretch * lo - h / 2) & (ygrid <= stretch * hi + h / 2)
    outside_mass = 1.0 - float(conv[inside].sum() * h)
    if outside_mass > GRID_MASS_TOL:
        raise AliasingDetected(f"mass {outside_mass:.2e} of the rescaled sum leaves the grid")
    spl = CubicSpline(ygrid, conv)
    out = stretch * spl(stretch * F.points)
    result = GridFunction(F.grid, out, tail_mass=max(outside_mass, 0.0))
    if abs(result.mass() - (1 - outside_mass)) > GRID_MASS_TOL:
        raise GridTooCoarse("grid cannot resolve the rescaled convolution")
    return result
