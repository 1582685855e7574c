"""``kinlab simulate|rates|verify|report``.

Run configuration is one JSON file (schema in the README); ``--set key=value``
overrides any top-level key.  Every CSV starts with ``# manifest=<hash>`` where the
hash covers the resolved configuration, seed, budget and package version, so two
runs with the same inputs produce byte-identical CSV files.
"""
from __future__ import annotations

import concurrent.futures
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import click
import numpy as np

from .errors import ConfigInvalid, DegenerateFit, KinlabError, OutOfTableRange
from .gaussians import GaussianData
from .grids import PhaseSpaceField
from .metrics import DecaySeries, default_nu, gamma_lookup, p_max, q_exponent, rate_fit
from .stable import StableLaw, sample as stable_sample

BUDGETS = {
    "smoke": {"histories": 500, "particles": 20_000, "order": 48, "field_n": 64},
    "desk": {"histories": 10_000, "particles": 100_000, "order": 96, "field_n": 128},
    "night": {"histories": 100_000, "particles": 1_000_000, "order": 192, "field_n": 256},
}
DEFAULT_TOLERANCE = {"kfp": 0.05, "fkfp": 0.1, "bgk": 1 / 30, "gen-bgk": 1 / 30, "nlfp": 0.0}
ONE_SIDED = ("bgk", "gen-bgk", "nlfp")
# nlfp is established for every gamma < 1/2; the one-sided target uses 0.40
NLFP_TARGET_GAMMA = 0.40
WORKERS_ENV = "KINLAB_WORKERS"


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


# ---------------------------------------------------------------------------
# initial data with stable velocities


@dataclass(frozen=True)
class StableVelocityData:
    """x ~ N(0, x_var) independent of v ~ M^{v_s}; finite |v|^nu moments only for nu < 2 v_s."""

    x_var: float = 1.0
    v_s: float = 0.75
    d: int = 1

    kind = "stable-v"

    def char_fn(self, xi, eta):
        xi = np.asarray(xi, dtype=float)
        return np.exp(-0.5 * self.x_var * xi * xi) * StableLaw(self.v_s).char_fn(eta)

    def sample(self, rng, count):
        return math.sqrt(self.x_var) * rng.standard_normal(count), stable_sample(StableLaw(self.v_s), rng, count)

    def has_moment(self, nu: float) -> bool:
        return self.v_s == 1.0 or nu < 2 * self.v_s

    def describe(self) -> dict:
        return {"kind": "stable-v", "x_var": self.x_var, "v_s": self.v_s, "d": self.d}


def make_initial(spec: dict):
    kind = spec.get("kind", "gaussian")
    if kind == "gaussian":
        return GaussianData(float(spec.get("x_var", 1.0)), float(spec.get("v_var", 1.0)),
                            float(spec.get("xv", 0.0)))
    if kind == "stable-v":
        return StableVelocityData(float(spec.get("x_var", 1.0)), float(spec.get("v_s", 0.75)))
    raise ConfigInvalid(f"unknown initial data kind {kind!r}")


def _has_moment(f0, nu: float) -> bool:
    return f0.has_moment(nu) if hasattr(f0, "has_moment") else True


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    model: str = "kfp"
    s: float = 1.0
    d: int = 1
    p: float = 2.0
    r: float | None = None
    nu: float | None = None
    method: str = "wild"
    initial: dict = field(default_factory=lambda: {"kind": "gaussian", "x_var": 1.0, "v_var": 1.0})
    times: list = field(default_factory=lambda: [10.0, 20.0, 40.0, 80.0, 160.0])
    budget: str = "desk"
    budget_overrides: dict = field(default_factory=dict)
    seed: int = 0
    tolerance: float | None = None
    fit_window: list | None = None
    dump_field: bool = True
    workers: int = 1

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(raw) - known
        if extra:
            raise ConfigInvalid(f"unknown configuration keys {sorted(extra)}")
        cfg = cls(**raw)
        cfg.times = expand_times(cfg.times)
        cfg.p = _as_exponent(cfg.p)
        cfg.r = None if cfg.r is None else _as_exponent(cfg.r)
        return cfg

    def resolved_budget(self) -> dict:
        if self.budget not in BUDGETS:
            raise ConfigInvalid(f"unknown budget profile {self.budget!r}; choose from {sorted(BUDGETS)}")
        return {**BUDGETS[self.budget], **self.budget_overrides}

    def canonical(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "workers"}
        out["p"] = _exponent_str(self.p)
        out["r"] = None if self.r is None else _exponent_str(self.r)
        out["budget_resolved"] = self.resolved_budget()
        return out

    def manifest_hash(self) -> str:
        blob = json.dumps({"config": self.canonical(), "version": code_version()}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _as_exponent(v) -> float:
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return math.inf
    return float(v)


def _exponent_str(v: float) -> str:
    return "inf" if np.isinf(v) else repr(float(v))


def expand_times(spec) -> list[float]:
    """A list, or {start, stop, count} with geometric spacing."""
    if isinstance(spec, dict):
        try:
            start, stop, count = float(spec["start"]), float(spec["stop"]), int(spec["count"])
        except KeyError as exc:
            raise ConfigInvalid(f"time schedule needs start, stop and count ({exc})") from None
        return [float(f"{x:.12g}") for x in np.geomspace(start, stop, count)]
    times = [float(t) for t in spec]
    if not times or any(b <= a for a, b in zip(times, times[1:])) or times[0] <= 0:
        raise ConfigInvalid("times must be positive and strictly increasing")
    return times


def validate(cfg: RunConfig):
    """Reject configurations outside the hypotheses of the corresponding result."""
    if cfg.model not in ("bgk", "nlfp", "kfp", "fkfp"):
        raise ConfigInvalid(f"model must be bgk, nlfp, kfp or fkfp, not {cfg.model!r}")
    if not 0 < cfg.s <= 1:
        raise ConfigInvalid(f"s={cfg.s} is outside (0, 1]")
    if cfg.d != 1:
        raise ConfigInvalid("the solvers are implemented for d = 1")
    if cfg.p < 1 or (cfg.r is not None and cfg.r < 1):
        raise ConfigInvalid("Lebesgue exponents must be at least 1")
    cfg.resolved_budget()
    f0 = make_initial(cfg.initial)
    if cfg.model in ("kfp", "nlfp") and cfg.s != 1.0:
        raise ConfigInvalid(f"{cfg.model} is defined for s = 1 only")
    if cfg.model == "fkfp" and cfg.s == 1.0:
        raise ConfigInvalid("fkfp needs s < 1; use kfp for s = 1")
    if cfg.model == "bgk":
        pm = p_max(cfg.d, cfg.s)
        if cfg.p >= pm:
            raise ConfigInvalid(f"p={cfg.p} violates p < p_max={pm:.6g} for s={cfg.s}, d={cfg.d}")
        if cfg.method not in ("wild", "particle"):
            raise ConfigInvalid(f"method must be wild or particle, not {cfg.method!r}")
        if not isinstance(f0, GaussianData):
            raise ConfigInvalid("the bgk pathway takes Gaussian initial data")
    if cfg.model == "fkfp" and cfg.p < 2:
        raise ConfigInvalid(f"fkfp rates hold for p in [2, inf]; got p={cfg.p}")
    if cfg.model in ("bgk", "fkfp"):
        nu = default_nu(cfg.s) if cfg.nu is None else cfg.nu
        if cfg.s > 0.5 and nu != 1.0:
            raise ConfigInvalid(f"nu-moment requirement: nu = 1 for s in (1/2, 1], got nu={nu}")
        if cfg.s <= 0.5 and not cfg.s < nu < 2 * cfg.s:
            raise ConfigInvalid(f"nu-moment requirement: nu in (s, 2s) = ({cfg.s}, {2 * cfg.s}), got {nu}")
        if not _has_moment(f0, nu):
            raise ConfigInvalid(f"nu-moment requirement: initial data has no finite |v|^{nu} moment")
    if cfg.model in ("kfp", "nlfp") and not _has_moment(f0, 1.0):
        raise ConfigInvalid("first velocity moment M_1 of the initial data is infinite")
    if cfg.model == "nlfp":
        # the drift-transport semigroup is bounded on L^1_v L^p_x but not on L^p_x L^1_v
        if not isinstance(f0, GaussianData):
            raise ConfigInvalid("nlfp needs initial data in L^1_v L^p_x; only Gaussian data is certified")
        if cfg.r not in (None, 1.0):
            raise ConfigInvalid("nlfp distances are measured in L^p_x L^1_v (r = 1)")
    if cfg.model == "kfp" and not (cfg.p == 2 or np.isinf(cfg.p) or cfg.r in (None, cfg.p)):
        raise ConfigInvalid("kfp distances use the plain L^p norm (leave r unset)")
    return f0


# ---------------------------------------------------------------------------
# runs


def _series_point(cfg: RunConfig, f0, t: float, ss: np.random.SeedSequence) -> tuple[float, float]:
    b = cfg.resolved_budget()
    if cfg.model in ("kfp", "fkfp"):
        from .spectral import spectral_distance
        return spectral_distance(f0.char_fn, t, cfg.s, cfg.p, order=b["order"]), 0.0
    rng = np.random.default_rng(ss)
    if cfg.model == "bgk":
        from .bgk import bgk_distance
        budget = b["histories"] if cfg.method == "wild" else b["particles"]
        return bgk_distance(f0, t, cfg.p, cfg.r, cfg.s, method=cfg.method, budget=budget, rng=rng)
    from .nlfp import nlfp_distance
    return nlfp_distance(f0, t, cfg.p, 1.0, b["histories"], rng)


def run_series(cfg: RunConfig, f0, workers: int = 1) -> DecaySeries:
    """One independent stream per time, spawned from the seed; order of completion is irrelevant."""
    streams = np.random.SeedSequence(cfg.seed).spawn(len(cfg.times))
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            points = list(pool.map(_series_point, [cfg] * len(cfg.times), [f0] * len(cfg.times),
                                   cfg.times, streams))
    else:
        points = [_series_point(cfg, f0, t, ss) for t, ss in zip(cfg.times, streams)]
    r = cfg.r if cfg.r is not None else (1.0 if cfg.model == "nlfp" else cfg.p)
    series = DecaySeries(meta={"model": cfg.model, "s": cfg.s, "d": cfg.d, "p": _exponent_str(cfg.p),
                               "r": _exponent_str(r), "method": cfg.method if cfg.model == "bgk" else
                               ("spectral" if cfg.model in ("kfp", "fkfp") else "wild"), "seed": cfg.seed})
    for t, (dist, floor) in zip(cfg.times, points):
        series.append(t, dist, floor)
    return series


def final_field(cfg: RunConfig, f0) -> PhaseSpaceField:
    """Solution field at the last scheduled time on a budget-sized grid."""
    b = cfg.resolved_budget()
    t = cfg.times[-1]
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(len(cfg.times) + 1)[-1])
    if cfg.model in ("kfp", "fkfp"):
        from .spectral import default_phase_grid, invert_to_grid, solve_hat
        xv = getattr(f0, "x_var", 1.0)
        vv = getattr(f0, "v_var", 1.0)
        xg, vg = default_phase_grid(t, cfg.s, xv, vv, n=b["field_n"])
        return invert_to_grid(solve_hat(f0.char_fn, t, cfg.s), xg, vg)
    hist = max(100, b["histories"] // 10)
    if cfg.model == "bgk":
        from .bgk import BGKModel, default_bgk_grid, wild_density
        xg, vg = default_bgk_grid(f0, t, cfg.s)
        return wild_density(BGKModel(cfg.s), f0, t, xg, vg, hist, rng)
    from .nlfp import default_nlfp_grid, nlfp_wild_density
    xg, vg = default_nlfp_grid(f0, t)
    return nlfp_wild_density(f0, t, xg, vg, hist, rng)


FIELD_MAGIC = b"KINLAB-FIELD"


def write_field(path: Path, f: PhaseSpaceField, t: float, manifest: str):
    """One JSON header line (dims, spacing, origin), then little-endian float64 values, x-major."""
    header = {"dims": [f.xgrid.n, f.vgrid.n], "spacing": [f.xgrid.spacing, f.vgrid.spacing],
              "origin": [f.xgrid.origin, f.vgrid.origin], "dtype": "<f8", "order": "x-major",
              "t": t, "manifest": manifest}
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC + b" " + json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path: Path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        line = fh.readline()
        if not line.startswith(FIELD_MAGIC):
            raise ValueError(f"{path} is not a kinlab field dump")
        header = json.loads(line[len(FIELD_MAGIC):])
        values = np.frombuffer(fh.read(), dtype="<f8").reshape(header["dims"])
    return header, values


# ---------------------------------------------------------------------------
# rate summaries and plot data


def expected_exponent(model: str, s: float, p: float, d: int = 1, nu: float | None = None) -> tuple[float, str]:
    """(-(q + gamma), sidedness) for the rate table."""
    q = q_exponent(d, s, p)
    if model == "nlfp":
        return -(q + NLFP_TARGET_GAMMA), "one-sided"
    g = gamma_lookup(model, s, p, d, nu=nu)
    return -(q + g), "one-sided" if model in ONE_SIDED else "two-sided"


def summarize(series: DecaySeries, tolerance: float | None = None, window=None) -> dict:
    m = series.meta
    model, s, d = m["model"], float(m["s"]), int(float(m["d"]))
    p = _as_exponent(m["p"])
    expected, side = expected_exponent(model, s, p, d)
    tol = DEFAULT_TOLERANCE[model] if tolerance is None else tolerance
    t = np.asarray(series.times)
    floors = np.asarray(series.se) if any(series.se) else None
    fit = rate_fit(series, window=window or (float(t.min()), float(t.max())), noise_floor=floors)
    ok = fit.slope <= expected + tol if side == "one-sided" else abs(fit.slope - expected) <= tol
    return {"model": model, "s": s, "d": d, "p": _exponent_str(p), "r": m.get("r", ""),
            "slope": fit.slope, "slope_se": fit.slope_se, "expected": expected, "side": side,
            "tolerance": tol, "pass": bool(ok)}


def _csv(rows: list[dict], cols: list[str], manifest: str) -> str:
    buf = io.StringIO()
    buf.write(f"# manifest={manifest}\n")
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


SUMMARY_COLS = ["model", "s", "d", "p", "r", "slope", "slope_se", "expected", "side", "tolerance", "pass"]


def plot_data(curves: dict[str, DecaySeries], expected: dict[str, float], outdir: Path, manifest: str):
    """Two-column CSV per curve plus a gnuplot script drawing all of them on log axes."""
    outdir.mkdir(parents=True, exist_ok=True)
    plots = []
    for name in sorted(curves):
        s = curves[name]
        rows = [{"t": t, "distance": d} for t, d in zip(s.times, s.distances)]
        (outdir / f"{name}.csv").write_text(_csv(rows, ["t", "distance"], manifest))
        plots.append(f"'{name}.csv' using 1:2 with linespoints title '{name}'")
        if name in expected and s.times:
            t0, d0 = s.times[0], s.distances[0]
            ref = [{"t": t, "distance": d0 * (t / t0) ** expected[name]} for t in s.times]
            (outdir / f"{name}_reference.csv").write_text(_csv(ref, ["t", "distance"], manifest))
            plots.append(f"'{name}_reference.csv' using 1:2 with lines dt 2 "
                         f"title '{name} t^{{{expected[name]:.3f}}}'")
    script = [f"# manifest={manifest}", "set datafile separator ','", "set datafile commentschars '#'",
              "set key autotitle columnhead", "set logscale xy", "set xlabel 't'",
              "set ylabel 'distance'", "set terminal pngcairo size 900,600",
              "set output 'rates.png'", "plot " + ", \\\n     ".join(plots)]
    (outdir / "rates.gp").write_text("\n".join(script) + "\n")


# ---------------------------------------------------------------------------
# commands


def _load_config(path: str | None, overrides: tuple[str, ...], seed: int | None, budget: str | None) -> RunConfig:
    raw = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{path}: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise click.UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            raw[k] = json.loads(v)
        except json.JSONDecodeError:
            raw[k] = v
    if seed is not None:
        raw["seed"] = seed
    if budget is not None:
        raw["budget"] = budget
    return RunConfig.from_dict(raw)


def _workers(cfg: RunConfig) -> int:
    env = os.environ.get(WORKERS_ENV)
    return max(1, int(env)) if env and cfg.workers == 1 else max(1, cfg.workers)


def _write_manifest(out: Path, manifest: str, cfg: RunConfig | None, artifacts: list[str], started: str):
    doc = {"config_hash": manifest, "code_version": code_version(),
           "seed": None if cfg is None else cfg.seed,
           "config": None if cfg is None else cfg.canonical(),
           "started": started, "finished": _now(), "artifacts": sorted(artifacts)}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


common = [
    click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
                 help="JSON run configuration."),
    click.option("--seed", type=int, default=None, help="Override the configured seed."),
    click.option("--budget", type=click.Choice(sorted(BUDGETS)), default=None, help="Budget profile."),
    click.option("--out", type=click.Path(file_okay=False), default="kinlab-out", show_default=True,
                 help="Output directory."),
]


def with_common(fn):
    for opt in reversed(common):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Long-time and diffusive-limit experiments for linear kinetic equations."""


@main.command()
@with_common
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE", help="Override a config key (JSON value).")
def simulate(config_path, seed, budget, out, overrides):
    """Run the configured solver over the time schedule."""
    started = _now()
    try:
        cfg = _load_config(config_path, overrides, seed, budget)
        f0 = validate(cfg)
    except ConfigInvalid as exc:
        click.echo(f"ConfigInvalid: {exc}", err=True)
        sys.exit(2)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = cfg.manifest_hash()
    try:
        series = run_series(cfg, f0, _workers(cfg))
    except KinlabError as exc:
        click.echo(f"{type(exc).__name__}: {exc}", err=True)
        sys.exit(1)
    (out / "series.csv").write_text(series.to_csv(manifest))
    artifacts = ["series.csv"]
    if cfg.dump_field:
        try:
            write_field(out / "field.bin", final_field(cfg, f0), cfg.times[-1], manifest)
            artifacts.append("field.bin")
        except KinlabError as exc:
            click.echo(f"field dump skipped: {exc}", err=True)
    try:
        expected = expected_exponent(cfg.model, cfg.s, cfg.p, cfg.d, cfg.nu)[0]
    except OutOfTableRange:
        expected = None
    plot_data({cfg.model: series}, {} if expected is None else {cfg.model: expected}, out / "plot", manifest)
    artifacts.append("plot/")
    _write_manifest(out, manifest, cfg, artifacts, started)
    click.echo(str(out / "series.csv"))


@main.command()
@with_common
@click.argument("series_paths", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--tolerance", type=float, default=None, help="Slope tolerance (default per model).")
def rates(config_path, seed, budget, out, series_paths, tolerance):
    """Fit decay slopes of series CSVs and compare with the expected exponents."""
    if not series_paths:
        raise click.UsageError("give at least one series CSV")
    cfg = None
    if config_path:
        cfg = _load_config(config_path, (), seed, budget)
        tolerance = cfg.tolerance if tolerance is None else tolerance
    rows = []
    for path in series_paths:
        series = DecaySeries.from_csv(Path(path).read_text())
        try:
            rows.append(summarize(series, tolerance))
        except DegenerateFit as exc:
            click.echo(f"DegenerateFit in {path}: {exc}", err=True)
            sys.exit(1)
    rows.sort(key=lambda r: (r["model"], r["s"], _as_exponent(r["p"])))
    manifest = hashlib.sha256("".join(Path(p).read_text() for p in sorted(series_paths)).encode()).hexdigest()[:16]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rates.csv").write_text(_csv(rows, SUMMARY_COLS, manifest))
    for r in rows:
        click.echo(f"{r['model']} s={r['s']} p={r['p']}: slope {r['slope']:.4f} vs {r['expected']:.4f} "
                   f"({r['side']}) {'pass' if r['pass'] else 'FAIL'}")
    sys.exit(0 if all(r["pass"] for r in rows) else 1)


@main.command()
@with_common
@click.option("--suite", type=click.Choice(["stable", "histories", "gaussians", "spectral",
                                            "concentration", "all"]), default="all", show_default=True)
def verify(config_path, seed, budget, out, suite):
    """Run the invariant suites and write a pass/fail report."""
    from .checks import run_suite
    seed = 0 if seed is None else seed
    rows = run_suite(suite, seed)
    manifest = hashlib.sha256(json.dumps({"suite": suite, "seed": seed, "version": code_version()},
                                         sort_keys=True).encode()).hexdigest()[:16]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"verify_{suite}.csv").write_text(
        _csv(rows, ["suite", "check", "value", "tolerance", "pass"], manifest))
    failed = [r for r in rows if not r["pass"]]
    for r in failed:
        click.echo(f"FAIL {r['suite']}: {r['check']} value={r['value']:.4g} tol={r['tolerance']:.4g}")
    click.echo(f"{len(rows) - len(failed)}/{len(rows)} checks passed")
    sys.exit(1 if failed else 0)


@main.command()
@with_common
@click.argument("run_dirs", nargs=-1, type=click.Path(exists=True, file_okay=False))
def report(config_path, seed, budget, out, run_dirs):
    """Collect run directories into one rate summary and one set of plot data."""
    if not run_dirs:
        raise click.UsageError("give at least one run directory")
    curves, expected, rows = {}, {}, []
    texts = []
    for k, d in enumerate(sorted(run_dirs)):
        text = (Path(d) / "series.csv").read_text()
        texts.append(text)
        series = DecaySeries.from_csv(text)
        m = series.meta
        name = f"{m['model']}_s{m['s']}_p{m['p']}_{k}"
        curves[name] = series
        try:
            row = summarize(series)
            expected[name] = row["expected"]
            rows.append(row)
        except (DegenerateFit, OutOfTableRange) as exc:
            click.echo(f"{d}: {exc}", err=True)
    manifest = hashlib.sha256("".join(texts).encode()).hexdigest()[:16]
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows.sort(key=lambda r: (r["model"], r["s"], _as_exponent(r["p"])))
    (out / "summary.csv").write_text(_csv(rows, SUMMARY_COLS, manifest))
    plot_data(curves, expected, out / "plot", manifest)
    click.echo(str(out / "summary.csv"))
    sys.exit(0 if all(r["pass"] for r in rows) else 1)


if __name__ == "__main__":
    main()
