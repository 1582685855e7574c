"""Collision histories of the unit-rate exponential clock on [0, t].

A history is (n, t_1 <= ... <= t_n) with n ~ Poisson(t) and the jump times
sorted uniforms.  ``HistoryBatch`` stores many histories as one flat array
with per-history offsets so that the sums used by the solvers vectorize.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln

from .stable import check_stability


@dataclass(frozen=True)
class CollisionHistory:
    horizon: float
    times: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).ravel()
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if times.size and (np.any(np.diff(times) < 0) or times[0] < 0 or times[-1] > self.horizon):
            raise ValueError("jump times must be sorted inside [0, horizon]")
        object.__setattr__(self, "times", times)

    @property
    def n(self) -> int:
        return int(self.times.size)


@dataclass(frozen=True)
class GapVector:
    gaps: np.ndarray
    horizon: float


@dataclass(frozen=True)
class EventParams:
    alpha: float
    beta: float
    model: str = "BGK"
    s: float = 1.0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 < self.beta < 0.5:
            raise ValueError("beta must lie in (0, 1/2)")
        if self.model not in ("BGK", "NLFP"):
            raise ValueError("model must be BGK or NLFP")
        if self.model == "BGK" and not self.alpha > self.beta:
            raise ValueError("BGK events need alpha > beta")
        check_stability(self.s)


@dataclass(frozen=True)
class EventFlags:
    e1: bool
    e2: bool
    e3: bool

    @property
    def e(self) -> bool:
        return self.e1 and self.e2 and self.e3


def sample_history(t: float, rng: np.random.Generator) -> CollisionHistory:
    if t < 0:
        raise ValueError("t must be nonnegative")
    n = int(rng.poisson(t))
    return CollisionHistory(float(t), np.sort(rng.uniform(0.0, t, n)))


def history_with_n(t: float, n: int, rng: np.random.Generator) -> CollisionHistory:
    """History conditioned on exactly n jumps."""
    return CollisionHistory(float(t), np.sort(rng.uniform(0.0, t, n)))


def gaps(h: CollisionHistory) -> GapVector:
    edges = np.concatenate(([0.0], h.times, [h.horizon]))
    return GapVector(np.diff(edges), h.horizon)


def s_power_sum(g: GapVector, s: float) -> float:
    s = check_stability(s)
    return float(np.sum(g.gaps ** (2 * s)))


def mean_s_power_sum(n: int, s: float, z: float = 1.0) -> float:
    """E of the sum of (2s)-th powers of the n+1 gaps of a flat Dirichlet on z times the simplex."""
    s = check_stability(s)
    if z <= 0:
        raise ValueError("z must be positive")
    return float(z ** (2 * s) * math.exp(gammaln(2 * s + 1) + gammaln(n + 2) - gammaln(n + 2 * s + 1)))


def var_bound_s_power_sum(n: int, s: float) -> float:
    """Sum of the component variances of X_i^(2s) (covariances dropped; they are <= 0)."""
    a = math.exp(gammaln(n + 1) + gammaln(4 * s + 1) - gammaln(n + 4 * s + 1))
    b = math.exp(gammaln(n + 1) + gammaln(2 * s + 1) - gammaln(n + 2 * s + 1))
    return (n + 1) * (a - b * b)


def var_s1_power_sum(n: int) -> float:
    """Exact variance of the sum of squared flat-Dirichlet gaps."""
    return 4.0 * n / ((n + 2) ** 2 * (n + 3) * (n + 4))


def exp_sums(h: CollisionHistory, k: int) -> float:
    if k < 0:
        raise ValueError("k must be nonnegative")
    return float(np.sum(np.exp(-k * (h.horizon - h.times))))


def sigma_power(h: CollisionHistory, s: float) -> float:
    """Sum over i >= 2 of (t_i - t_{i-1})^(2s); zero when n <= 1."""
    if h.n <= 1:
        return 0.0
    return float(np.sum(np.diff(h.times) ** (2 * s)))


def nlfp_mean_a11(n: float, t: float) -> float:
    """E(S_0 - 2 S_1 + S_2) for n uniform jump times on [0, t]."""
    return float(n + n / t * (-1.5 + 2 * math.exp(-t) - 0.5 * math.exp(-2 * t)))


def event_membership(h: CollisionHistory, params: EventParams) -> EventFlags:
    """Probable-region indicators; histories with n = 0 are outside every event."""
    n, t = h.n, h.horizon
    if n == 0:
        return EventFlags(False, False, False)
    if params.model == "BGK":
        s = params.s
        spread = (h.times[-1] - h.times[0]) ** (2 * s) / n ** (2 * s - 1)
        target = math.gamma(2 * s + 1) * spread
        e1 = h.times[0] <= t / n**params.alpha
        e2 = abs(sigma_power(h, s) - target) <= spread / n**params.beta
        e3 = t - h.times[-1] <= t / n**params.alpha
        return EventFlags(bool(e1), bool(e2), bool(e3))
    s0, s1, s2 = n, exp_sums(h, 1), exp_sums(h, 2)
    ratio = s1 / math.sqrt(s2)
    e1 = ratio < n**params.beta
    e2 = s2 < n ** (2 * params.beta)
    e3 = abs(s0 - 2 * s1 + s2 - nlfp_mean_a11(n, t)) <= n**params.alpha
    return EventFlags(bool(e1), bool(e2), bool(e3))


def default_bgk_event_params(s: float, p: float, d: int = 1) -> EventParams:
    """alpha, beta of the optimized BGK choice, with the default moment order nu."""
    from .metrics import default_nu, q_exponent
    q = q_exponent(d, s, p)
    beta = (1 - q * max(1 - 2 * s, 0.0)) / 3
    alpha = beta + 1 - default_nu(s) / (2 * s)
    alpha = min(max(alpha, beta + 1e-6), 1 - 1e-6)
    return EventParams(alpha, beta, "BGK", s)


def flat_dirichlet(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """count draws of the (n+1)-component flat Dirichlet, by normalized exponential spacings."""
    e = rng.exponential(1.0, (count, n + 1))
    return e / e.sum(axis=1, keepdims=True)


def dirichlet_integral(psi: Callable[[np.ndarray], np.ndarray], n: int, z: float,
                       samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo value and standard error of the integral of psi over z times the simplex.

    ``psi`` receives an array of shape (samples, n+1) of gap vectors summing to z.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    x = z * flat_dirichlet(n, samples, rng)
    vals = np.asarray(psi(x), dtype=float)
    vol = math.exp(n * math.log(z) - gammaln(n + 1))
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    return vol * mean, vol * se


# ---------------------------------------------------------------------------
# batches


@dataclass
class HistoryBatch:
    horizon: float
    counts: np.ndarray  # (H,)
    times: np.ndarray  # flat, sorted within each history
    offsets: np.ndarray  # (H+1,)

    @property
    def size(self) -> int:
        return int(self.counts.size)

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, i: int) -> CollisionHistory:
        return CollisionHistory(self.horizon, self.times[self.offsets[i]:self.offsets[i + 1]])

    def _segments(self) -> np.ndarray:
        return np.repeat(np.arange(self.size), self.counts)

    def _segsum(self, w: np.ndarray, seg: np.ndarray | None = None) -> np.ndarray:
        seg = self._segments() if seg is None else seg
        return np.bincount(seg, weights=w, minlength=self.size)

    def exp_sums(self, k: int) -> np.ndarray:
        return self._segsum(np.exp(-k * (self.horizon - self.times)))

    def first(self) -> np.ndarray:
        out = np.full(self.size, np.nan)
        nz = self.counts > 0
        out[nz] = self.times[self.offsets[:-1][nz]]
        return out

    def last(self) -> np.ndarray:
        out = np.full(self.size, np.nan)
        nz = self.counts > 0
        out[nz] = self.times[self.offsets[1:][nz] - 1]
        return out

    def sigma_power(self, s: float) -> np.ndarray:
        """Per history: sum over i >= 2 of (t_i - t_{i-1})^(2s)."""
        if self.times.size < 2:
            return np.zeros(self.size)
        seg = self._segments()
        same = seg[1:] == seg[:-1]
        d = np.diff(self.times)[same]
        return self._segsum(d ** (2 * s), seg[1:][same])


def sample_histories(t: float, count: int, rng: np.random.Generator,
                     nonempty: bool = False) -> HistoryBatch:
    """count independent histories; with ``nonempty`` n is drawn from Poisson(t) given n >= 1."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    counts = rng.poisson(t, count)
    if nonempty:
        if t == 0:
            raise ValueError("no nonempty histories at t = 0")
        bad = counts == 0
        while bad.any():
            counts[bad] = rng.poisson(t, int(bad.sum()))
            bad = counts == 0
    offsets = np.concatenate(([0], np.cumsum(counts)))
    raw = rng.uniform(0.0, t, int(offsets[-1]))
    seg = np.repeat(np.arange(count), counts)
    order = np.lexsort((raw, seg))
    return HistoryBatch(float(t), counts.astype(np.int64), raw[order], offsets.astype(np.int64))
