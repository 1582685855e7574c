"""Monte Carlo checks of the concentration bounds on collision histories.

Every regime returns rows with the parameter point, the empirical quantity, its
standard error, the bound, and ``pass`` = (empirical - 3 SE <= bound).  Rows are
emitted in sorted parameter order so the table is reproducible for a fixed seed.
"""
from __future__ import annotations

import csv
import io
import math

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .errors import RegimeViolated
from .histories import flat_dirichlet, mean_s_power_sum, var_bound_s_power_sum
from .stable import check_stability, exact_scale_distance

REGIMES = ("dirichlet", "poisson_moment", "poiss2", "bernstein", "ratio", "s2", "easypoisson")
SLACK = 3.0

DESK = {
    "dirichlet": {"n": [10, 100], "s": [0.75, 1.0], "beta": 0.25, "draws": 100_000},
    "poisson_moment": {"lam": [10, 50, 200], "gamma": [-1.0, 0.5, 1.0, 1.5, 2.0], "draws": 100_000},
    "poiss2": {"lam": [10, 50, 200], "s": [0.75, 1.0], "p": [1.0, 2.0], "draws": 20_000},
    "bernstein": {"n": [10, 100], "t": [50.0], "alpha": [0.5, 0.75], "draws": 100_000},
    "ratio": {"n": [10, 100], "t": [50.0], "beta": 0.25, "draws": 100_000},
    "s2": {"n": [10, 100], "t": [50.0], "beta": 0.25, "draws": 100_000},
    "easypoisson": {"t": None, "beta": 0.4, "draws": 100_000},
}


def _row(regime: str, point: dict, empirical: float, se: float, bound: float, **extra) -> dict:
    row = {"regime": regime, **point, "empirical": float(empirical), "bound": float(bound),
           "standard_error": float(se)}
    row.update(extra)
    row["pass"] = bool(empirical - SLACK * se <= bound)
    return row


def _prob(hits: np.ndarray) -> tuple[float, float]:
    m = float(hits.mean())
    return m, math.sqrt(max(m * (1 - m), 0.0) / hits.size)


def _mean(x: np.ndarray) -> tuple[float, float]:
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def _list(v) -> list:
    return sorted(v) if isinstance(v, (list, tuple, np.ndarray)) else [v]


# ---------------------------------------------------------------------------
# Dirichlet power sums


def dirichlet_constant(s: float, beta: float, n_max: int = 100_000) -> float:
    """C_s of the Dirichlet tail bound; 1 at s = 1, else sup over n of the Chebyshev ratio."""
    s = check_stability(s)
    if s == 1.0:
        return 1.0
    n = np.unique(np.concatenate((np.arange(1, 200), np.geomspace(200, n_max, 400).astype(int))))
    r = [var_bound_s_power_sum(int(k), s) * k ** (-2 * (1 - 2 * s - beta)) * (k + 2) ** (1 - 2 * beta)
         for k in n]
    return float(max(r))


def dirichlet_threshold(n: int, s: float, beta: float) -> float:
    return 2.0 / n ** (1 + beta) if s == 1.0 else n ** (1 - 2 * s - beta)


def _dirichlet(params: dict, rng: np.random.Generator) -> list[dict]:
    beta, draws = params["beta"], int(params["draws"])
    if not 0 < beta < 0.5:
        raise RegimeViolated("beta must lie in (0, 1/2)")
    rows = []
    for s in _list(params["s"]):
        c = dirichlet_constant(s, beta)
        for n in _list(params["n"]):
            x = flat_dirichlet(int(n), draws, rng)
            S = np.sum(x ** (2 * s), axis=1)
            m = mean_s_power_sum(int(n), s)
            emp, se = _prob(np.abs(S - m) >= dirichlet_threshold(int(n), s, beta))
            mean, mean_se = _mean(S)
            rows.append(_row("dirichlet", {"n": int(n), "s": s, "beta": beta}, emp, se,
                             c * (n + 2) ** (-(1 - 2 * beta)), mean_empirical=mean, mean_formula=m,
                             mean_se=mean_se, mean_pass=bool(abs(mean - m) <= SLACK * mean_se + 1e-15)))
    return rows


# ---------------------------------------------------------------------------
# Poisson moments


def _bell(m: int) -> int:
    row = [1]
    for _ in range(m):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[0]


def poisson_moment_exact(lam: float, gamma: float) -> float:
    """E[X^gamma 1{X >= 1}] for X ~ Poisson(lam), summed over the effective support."""
    hi = int(lam + 40 * math.sqrt(lam) + 60)
    k = np.arange(1, hi + 1)
    logpmf = -lam + k * math.log(lam) - gammaln(k + 1)
    return float(np.sum(np.exp(logpmf + gamma * np.log(k))))


def poisson_moment_constant(gamma: float, lam_min: float = 1.0) -> float:
    """C_gamma with E[X^gamma 1{X>=1}] <= C_gamma lam^gamma for lam >= lam_min.

    Bell numbers (moment bound by Touchard polynomials) for gamma >= 1, Jensen for
    gamma in (0, 1], and for gamma <= 0 the sup of the exact ratio over lam >= lam_min.
    """
    if 0 < gamma <= 1:
        return 1.0
    if gamma > 1:
        m = math.ceil(gamma)
        return float(_bell(m)) ** (gamma / m)
    lams = np.geomspace(lam_min, 1e4, 400)
    return max(poisson_moment_exact(l, gamma) / l**gamma for l in lams)


def _poisson_moment(params: dict, rng: np.random.Generator) -> list[dict]:
    draws = int(params["draws"])
    rows = []
    for g in _list(params["gamma"]):
        c = poisson_moment_constant(g)
        for lam in _list(params["lam"]):
            X = rng.poisson(lam, draws).astype(float)
            vals = np.where(X >= 1, np.maximum(X, 1.0) ** g, 0.0)
            emp, se = _mean(vals)
            rows.append(_row("poisson_moment", {"lam": float(lam), "gamma": float(g)}, emp, se,
                             c * lam**g, exact=poisson_moment_exact(lam, g)))
    return rows


# ---------------------------------------------------------------------------
# averaged stable-scale distance


def poiss2_h(n: int, lam: float, s: float, p: float) -> float:
    return exact_scale_distance(1.0, (lam / n) ** (1 - 1 / (2 * s)), s, p)


def poiss2_exact(lam: float, s: float, p: float) -> float:
    """E[h(X) 1{X >= 1}] by direct summation over the Poisson mass."""
    lo = max(1, int(lam - 12 * math.sqrt(lam) - 5))
    hi = int(lam + 12 * math.sqrt(lam) + 12)
    k = np.arange(lo, hi + 1)
    w = stats.poisson.pmf(k, lam)
    return float(sum(wi * poiss2_h(int(ki), lam, s, p) for ki, wi in zip(k, w)))


def poiss2_constant(s: float, p: float, lams=(1, 2, 5, 10, 20), margin: float = 1.25) -> float:
    """margin times the largest exact ratio E h(X) / (lam^-1/2 + lam^-1) on calibration lams."""
    return margin * max(poiss2_exact(l, s, p) / (l**-0.5 + 1 / l) for l in lams)


def _poiss2(params: dict, rng: np.random.Generator) -> list[dict]:
    draws = int(params["draws"])
    rows = []
    for s in _list(params["s"]):
        if s <= 0.5:
            raise RegimeViolated("the scale exponent 1 - 1/(2s) degenerates for s <= 1/2")
        for p in _list(params["p"]):
            c = poiss2_constant(s, p)
            for lam in _list(params["lam"]):
                X = rng.poisson(lam, draws)
                uniq, inv = np.unique(X, return_inverse=True)
                h = np.array([poiss2_h(int(k), lam, s, p) if k >= 1 else 0.0 for k in uniq])
                emp, se = _mean(h[inv])
                rows.append(_row("poiss2", {"lam": float(lam), "s": s, "p": p}, emp, se,
                                 c * (lam**-0.5 + 1 / lam), exact=poiss2_exact(lam, s, p)))
    return rows


# ---------------------------------------------------------------------------
# exponential sums of n uniform jump times


def _uniform_sums(n: int, t: float, draws: int, rng: np.random.Generator):
    """S_1 and S_2 for `draws` sets of n uniform jump times on [0, t], in blocks."""
    s1, s2 = np.empty(draws), np.empty(draws)
    block = max(1, 2_000_000 // n)
    for a in range(0, draws, block):
        b = min(draws, a + block)
        e = np.exp(-(t - rng.uniform(0.0, t, (b - a, n))))
        s1[a:b] = e.sum(axis=1)
        s2[a:b] = (e * e).sum(axis=1)
    return s1, s2


def bernstein_bound(n: int, t: float, alpha: float) -> float:
    x = n**alpha
    return float(min(1.0, 2 * math.exp(-(x * x / 2) / (11 * n / (12 * t) + x / 3))))


def _bernstein(params: dict, rng: np.random.Generator) -> list[dict]:
    draws = int(params["draws"])
    rows = []
    for t in _list(params["t"]):
        ex = ((1 - math.exp(-2 * t)) / 2 - 2 * (1 - math.exp(-t))) / t
        for n in _list(params["n"]):
            s1, s2 = _uniform_sums(int(n), t, draws, rng)
            dev = np.abs(s2 - 2 * s1 - n * ex)
            for alpha in _list(params["alpha"]):
                emp, se = _prob(dev > n**alpha)
                rows.append(_row("bernstein", {"n": int(n), "t": float(t), "alpha": alpha}, emp, se,
                                 bernstein_bound(int(n), t, alpha)))
    return rows


def _ratio(params: dict, rng: np.random.Generator, strict: bool) -> list[dict]:
    beta, draws = params["beta"], int(params["draws"])
    rows = []
    for t in _list(params["t"]):
        for n in _list(params["n"]):
            ok = t > math.e**3 * n ** (1 - beta)
            if strict and not ok:
                raise RegimeViolated(f"ratio bound needs t > e^3 n^(1-beta); t={t}, n={n}")
            s1, s2 = _uniform_sums(int(n), t, draws, rng)
            emp, se = _prob(s1 / np.sqrt(s2) > n**beta)
            rows.append(_row("ratio", {"n": int(n), "t": float(t), "beta": beta}, emp, se,
                             6 * math.exp(-n**beta), in_regime=ok))
    return rows


def _s2(params: dict, rng: np.random.Generator, strict: bool) -> list[dict]:
    bt = params.get("beta_tilde", 2 * params["beta"])
    draws = int(params["draws"])
    rows = []
    for t in _list(params["t"]):
        for n in _list(params["n"]):
            ok = t > math.e**2 / 2 * n ** (1 - bt)
            if strict and not ok:
                raise RegimeViolated(f"S_2 bound needs t > e^2/2 n^(1-beta~); t={t}, n={n}")
            _, s2 = _uniform_sums(int(n), t, draws, rng)
            emp, se = _prob(s2 > n**bt)
            rows.append(_row("s2", {"n": int(n), "t": float(t), "beta_tilde": bt}, emp, se,
                             math.exp(-n**bt), in_regime=ok))
    return rows


# ---------------------------------------------------------------------------
# Poisson tail beyond the improbable threshold


def easypoisson_threshold(t: float, beta: float) -> float:
    return math.exp(-3 / (1 - 2 * beta)) * t ** (1 / (1 - 2 * beta))


def easypoisson_t0(beta: float) -> float:
    """Smallest t with threshold >= e t, past which the Chernoff bound gives C = 1."""
    return math.exp((2 - beta) / beta)


def _easypoisson(params: dict, rng: np.random.Generator, strict: bool) -> list[dict]:
    """The tail is far below Monte Carlo resolution, so the empirical column is the
    exact Poisson tail (log-space) and the sampled frequency is kept alongside."""
    beta, draws = params["beta"], int(params["draws"])
    t0 = easypoisson_t0(beta)
    ts = params.get("t") or [t0, 2 * t0, 4 * t0]
    rows = []
    for t in _list(ts):
        ok = t >= t0
        if strict and not ok:
            raise RegimeViolated(f"Poisson tail bound with C = 1 needs t >= {t0:.4g}")
        thr = easypoisson_threshold(t, beta)
        mc, mc_se = _prob(rng.poisson(t, draws) > thr)
        log_tail = float(stats.poisson.logsf(math.floor(thr), t))
        row = _row("easypoisson", {"t": float(t), "beta": beta}, math.exp(log_tail), 0.0,
                   math.exp(-t), monte_carlo=mc, monte_carlo_se=mc_se, log_empirical=log_tail,
                   log_bound=-float(t), in_regime=ok)
        row["pass"] = bool(log_tail <= -t and mc - SLACK * mc_se <= math.exp(-t))
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------


def concentration_report(regime: str, params: dict | None = None,
                         rng: np.random.Generator | None = None, strict: bool = True) -> list[dict]:
    """Empirical quantity against its bound for each parameter point of one regime.

    ``params`` overrides the desk defaults in ``DESK[regime]``.  With ``strict`` a point
    outside the hypotheses of the bound raises RegimeViolated; otherwise it is
    evaluated and flagged ``in_regime = False``.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; choose from {REGIMES}")
    rng = np.random.default_rng() if rng is None else rng
    p = {**DESK[regime], **(params or {})}
    if regime == "dirichlet":
        return _dirichlet(p, rng)
    if regime == "poisson_moment":
        return _poisson_moment(p, rng)
    if regime == "poiss2":
        return _poiss2(p, rng)
    if regime == "bernstein":
        return _bernstein(p, rng)
    if regime == "ratio":
        return _ratio(p, rng, strict)
    if regime == "s2":
        return _s2(p, rng, strict)
    return _easypoisson(p, rng, strict)


def report_csv(rows: list[dict], manifest_hash: str = "") -> str:
    """CSV with the fixed leading columns, then any regime-specific extras."""
    lead = ["regime"]
    fixed = ["empirical", "bound", "standard_error", "pass"]
    params, extras = [], []
    for r in rows:
        for k in r:
            if k in lead or k in fixed:
                continue
            target = extras if k in ("exact", "in_regime", "monte_carlo", "monte_carlo_se",
                                     "log_empirical", "log_bound", "mean_empirical",
                                     "mean_formula", "mean_se", "mean_pass") else params
            if k not in target:
                target.append(k)
    cols = lead + params + fixed + extras
    buf = io.StringIO()
    buf.write(f"# manifest={manifest_hash}\n")
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", restval="")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()
