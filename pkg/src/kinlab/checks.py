"""Invariant suites run by ``kinlab verify``.

Each suite returns rows {suite, check, value, tolerance, pass}; failures are data.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid

from .concentration import REGIMES, concentration_report
from .gaussians import BlockCovariance
from .grids import GridFunction, GridSpec
from .histories import (flat_dirichlet, gaps, mean_s_power_sum, nlfp_mean_a11, sample_history,
                        sample_histories)
from .metrics import frac_heat_solution, mixed_norm, q_exponent
from .nlfp import batch_covariances, gaussian_block_density, marginal_norm
from .spectral import delta_eigenvalues, inequality_probes, psi_fp, sigma_fp
from .stable import (StableLaw, convolve_scale, default_grid, density_grid, fft_convolve, lp_norm,
                     sample)

SUITES = ("stable", "histories", "gaussians", "spectral", "concentration")
STABLE_S = (0.5, 0.75, 1.0)


def _row(suite: str, check: str, value: float, tol: float, ok: bool | None = None) -> dict:
    ok = value <= tol if ok is None else ok
    return {"suite": suite, "check": check, "value": float(value), "tolerance": float(tol), "pass": bool(ok)}


def stable_cdf(law: StableLaw):
    """CDF of a one-dimensional law by cumulative quadrature of its gridded density."""
    grid = GridSpec.symmetric(default_grid(law).extent[1], law.scale / 64)
    pdf = density_grid(law, grid).values
    cdf = cumulative_trapezoid(pdf, grid.points, initial=0.0)
    cdf += 0.5 * (1 - cdf[-1])  # symmetric far tails
    return lambda x: np.interp(x, grid.points, cdf, left=0.0, right=1.0)


def convolution_stability_error(s: float) -> float:
    """L^1 gap between M_1 * M_1 and M_{2^(1/2s)} on a common grid."""
    big = StableLaw(s, convolve_scale(1.0, 1.0, s))
    grid = GridSpec.symmetric(default_grid(big).extent[1], 1 / 32)
    one = density_grid(StableLaw(s, 1.0), grid)
    conv = fft_convolve(one, one)
    ref = density_grid(big, grid)
    return float(np.sum(np.abs(conv.values - ref.values)) * grid.spacing)


def scaling_collapse_error(s: float, p: float, lam: float = 3.0) -> float:
    """Relative gap of ||M_lam||_p against lam^(-(1 - 1/p)) ||M_1||_p."""
    base = lp_norm(StableLaw(s, 1.0), p)
    scaled = lp_norm(StableLaw(s, lam), p)
    e = 1.0 if np.isinf(p) else 1 - 1 / p
    return abs(scaled * lam**e / base - 1)


def sampler_ks(s: float, rng: np.random.Generator, count: int = 100_000) -> float:
    law = StableLaw(s, 1.0)
    return float(stats.kstest(sample(law, rng, count), stable_cdf(law)).statistic)


def suite_stable(rng: np.random.Generator) -> list[dict]:
    rows = []
    for s in STABLE_S:
        rows.append(_row("stable", f"convolution_L1 s={s}", convolution_stability_error(s), 1e-3))
        for p in (1.0, 2.0, math.inf):
            rows.append(_row("stable", f"scaling_collapse s={s} p={p}", scaling_collapse_error(s, p), 1e-5))
        rows.append(_row("stable", f"sampler_ks s={s}", sampler_ks(s, rng), 0.01))
    return rows


def suite_histories(rng: np.random.Generator) -> list[dict]:
    rows = []
    worst = 0.0
    for _ in range(2000):
        h = sample_history(10.0, rng)
        worst = max(worst, abs(gaps(h).gaps.sum() - h.horizon) / h.horizon)
    rows.append(_row("histories", "gap_sum_relative", worst, 1e-12))
    batch = sample_histories(10.0, 100_000, rng)
    n = batch.counts.astype(float)
    rows.append(_row("histories", "poisson_mean_z", abs(n.mean() - 10) / math.sqrt(10 / n.size), 3.0))
    for n_ in (10, 100):
        for s in (0.5, 0.75, 1.0):
            S = np.sum(flat_dirichlet(n_, 100_000, rng) ** (2 * s), axis=1)
            se = S.std(ddof=1) / math.sqrt(S.size)
            z = abs(S.mean() - mean_s_power_sum(n_, s)) / se if se > 1e-14 else 0.0
            rows.append(_row("histories", f"dirichlet_mean_z n={n_} s={s}", z, 3.0))
    # n = 100 jump times on [0, 50]
    e = np.exp(-(50.0 - rng.uniform(0.0, 50.0, (100_000, 100))))
    a11 = 100 - 2 * e.sum(axis=1) + (e * e).sum(axis=1)
    rows.append(_row("histories", "nlfp_mean_a11_z",
                     abs(a11.mean() - nlfp_mean_a11(100, 50.0)) / (a11.std(ddof=1) / math.sqrt(a11.size)), 3.0))
    return rows


def suite_gaussians(rng: np.random.Generator) -> list[dict]:
    rows = []
    batch = sample_histories(10.0, 100_000, rng)
    target = sigma_fp(10.0)
    for name, vals, ref in zip(("xx", "xv", "vv"), batch_covariances(batch),
                               (target.xx, target.xv, target.vv)):
        z = abs(vals.mean() - ref) / (vals.std(ddof=1) / math.sqrt(vals.size))
        rows.append(_row("gaussians", f"mean_A_{name}_z", z, 3.0))
    lam1, _, asym = delta_eigenvalues(1000.0)
    rows.append(_row("gaussians", "eigen_asymptote_ratio", abs(lam1 / asym - 1), 0.04))
    C = BlockCovariance(1.3, 0.4, 0.7)
    xg, vg = GridSpec.symmetric(16.0, 0.02), GridSpec.symmetric(12.0, 0.02)
    f = gaussian_block_density(C, xg, vg)
    for p in (1.0, 2.0, math.inf):
        rel = abs(mixed_norm(f, p, 1.0) / marginal_norm(C, p) - 1)
        rows.append(_row("gaussians", f"schur_marginal p={p}", rel, 1e-4))
    return rows


def heat_self_similarity(s: float, p: float, times=(10, 20, 40, 80)) -> list[float]:
    """||u(t)||_p t^q along a dyadic ladder for delta-like rho0 (width = grid spacing)."""
    h = 0.05 if s == 1 else 0.25
    grid = GridSpec.symmetric(300.0 if s == 1 else 25_000.0, h)
    rho0 = GridFunction(grid, np.exp(-0.5 * (grid.points / h) ** 2) / (math.sqrt(2 * math.pi) * h))
    q = q_exponent(1, s, p)
    return [frac_heat_solution(rho0, t, s).lp_norm(p) * t**q for t in times]


def suite_spectral(rng: np.random.Generator) -> list[dict]:
    rows = []
    xi, eta = rng.normal(0, 2, 200), rng.normal(0, 2, 200)
    for t in (0.5, 5.0, 50.0):
        c = sigma_fp(t)
        exact = c.xx * xi**2 + 2 * c.xv * xi * eta + c.vv * eta**2
        err = np.max(np.abs(psi_fp(xi, eta, t, 1.0) - exact) / np.maximum(exact, 1e-300))
        rows.append(_row("spectral", f"psi_closed_form t={t}", err, 1e-8))
    for s, p in ((1.0, 2.0), (0.75, 2.0), (1.0, math.inf)):
        vals = heat_self_similarity(s, p)
        rows.append(_row("spectral", f"heat_self_similar s={s} p={p}",
                         (max(vals) - min(vals)) / max(vals), 0.02))
    for s in (0.3, 0.75):
        for r in inequality_probes(s, 20_000, rng, psi_samples=200):
            rows.append(_row("spectral", f"{r['quantity']} s={s}", r["value"], r["bound"], r["pass"]))
    return rows


def suite_concentration(rng: np.random.Generator) -> list[dict]:
    rows = []
    for regime in REGIMES:
        for r in concentration_report(regime, rng=rng, strict=regime != "ratio"):
            point = " ".join(f"{k}={r[k]}" for k in r if k not in
                             ("regime", "empirical", "bound", "standard_error", "pass", "exact",
                              "in_regime", "monte_carlo", "monte_carlo_se", "log_empirical",
                              "log_bound", "mean_empirical", "mean_formula", "mean_se", "mean_pass"))
            rows.append(_row("concentration", f"{regime} {point}", r["empirical"], r["bound"], r["pass"]))
            if "mean_pass" in r:
                rows.append(_row("concentration", f"dirichlet_mean {point}",
                                 abs(r["mean_empirical"] - r["mean_formula"]), 3 * r["mean_se"] + 1e-15,
                                 r["mean_pass"]))
    return rows


SUITE_FUNCS = {"stable": suite_stable, "histories": suite_histories, "gaussians": suite_gaussians,
               "spectral": suite_spectral, "concentration": suite_concentration}


def run_suite(name: str, seed: int = 0) -> list[dict]:
    names = SUITES if name == "all" else (name,)
    streams = np.random.SeedSequence(seed).spawn(len(SUITES))
    rows = []
    for k, suite in enumerate(SUITES):
        if suite in names:
            rows.extend(SUITE_FUNCS[suite](np.random.default_rng(streams[k])))
    return rows
