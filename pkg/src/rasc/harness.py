"""Experiment drivers behind the command line.

Each ``run_*`` function takes an :class:`ExperimentConfig`, writes its CSVs
into ``out`` (when given) and returns an :class:`ExperimentResult` whose
``verdicts`` decide the process exit status.
"""
from __future__ import annotations

import hashlib
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import baselines as B
from .calibrator import RascConfig, run_rasc
from .core import AffineParams, FrameSeries, References, Status, apply_inverse
from .ingest import (StandInSpec, dumps_recording, inject_drift, load_recording, loads_recording,
                     make_folds, make_standin, read_header)
from .metrics import (METRIC_VERSIONS, RunReport, byte_accounting, field_rmse, fit_geometric_rate,
                      nonsmooth_residual, param_and_gauge_errors, peak_to_peak)
from .synth import FaultSpec, SimProtocol, inject_faults, sample_world
from .theory import breakdown_sweep, monotone_within
from .topology import laplacian_lambda2

SEED_POLICY = "seed = seed_base + run_index; sub-streams keyed by crc32(name)"

RUN_DEFAULTS = {"runs": 30, "seed_base": 0, "jobs": 1, "full": False, "timing": False}

EXPERIMENT_DEFAULTS = {
    "simulate.grids": [8, 16, 32],
    "simulate.large_grid_cap": 10,
    "sweep.parameter": "eta",
    "sweep.values": None,
    "faults.failure_rates": [0.0, 0.1, 0.2, 0.3],
    "faults.loss_rates": [0.0, 0.1, 0.2, 0.3],
    "faults.runs": 10,
    "theory.grids": [8, 16, 32],
    "theory.breakdown_sizes": [5, 10, 13, 20],
    "theory.breakdown_trials": 1000,
    "stress.recording": None,
    "stress.frames": 600,
    "stress.folds": 10,
    "stress.fold_seed": 0,
    "stress.drift_seed": 0,
    "stress.gain_range": [0.9, 1.1],
    "stress.offset_range": [-2.0, 2.0],
    "calibrate.frames": 600,
    "calibrate.folds": 10,
    "calibrate.fold_seed": 0,
    "calibrate.export_fold": 0,
}

SWEEP_DEFAULTS = {"eta": [3.0, 4.0, 5.0], "alpha": [0.25, 0.5, 0.75, 1.0], "nmin": [3, 4, 5, 7]}
SWEEP_FIELDS = {"eta": "eta", "alpha": "alpha", "nmin": "n_min"}

# acceptance bands on 16 x 16 means
BANDS = {
    "uncalibrated": (1.7, 2.3),
    "temporal_ma": (1.7, 2.1),
    "pairwise": (1.2, 1.9),
    "median3x3": (0.78, 1.0),
    "bmep": (0.60, 0.82),
    "rasc": (0.50, 0.70),
    "factory": (0.49, 0.52),
    "ekf": (0.40, 0.52),
}
RASC_BAND_8 = (0.50, 0.80)
CLUSTER_BAND_16 = (70, 90)
CENTRAL_BYTES = {8: 38400, 16: 153600, 32: 614400}
BYTE_RATIO_BAND = (3.5, 5.0)
ORDERING = ["uncalibrated", "temporal_ma", "pairwise", "median3x3", "bmep", "rasc", "factory"]


class ConfigError(ValueError):
    pass


def _section_defaults():
    return {"protocol": SimProtocol(), "rasc": RascConfig(), "fault": FaultSpec()}


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, list):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    return v


def default_flat() -> dict:
    flat = {}
    for name, obj in _section_defaults().items():
        for f in fields(obj):
            flat["%s.%s" % (name, f.name)] = _jsonable(getattr(obj, f.name))
    for k, v in RUN_DEFAULTS.items():
        flat["run.%s" % k] = v
    flat.update(EXPERIMENT_DEFAULTS)
    for k in ("standin.%s" % f.name for f in fields(StandInSpec)):
        flat[k] = _jsonable(getattr(StandInSpec(), k.split(".", 1)[1]))
    return flat


def _coerce(key, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError("%s expects true/false" % key)
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not float(value).is_integer():
            raise ConfigError("%s expects an integer" % key)
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("%s expects a number" % key)
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError("%s expects a list" % key)
        return list(value)
    return value


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=default_flat)

    @classmethod
    def from_flat(cls, overrides: dict | None = None) -> "ExperimentConfig":
        base = default_flat()
        for k, v in (overrides or {}).items():
            if k not in base:
                raise ConfigError("unknown config key: %s" % k)
            base[k] = _coerce(k, v, base[k])
        cfg = cls(base)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError("cannot read config %s: %s" % (path, e)) from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object of dotted keys")
        data.update(overrides or {})
        return cls.from_flat(data)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        v = dict(self.values)
        v.update(kw)
        return ExperimentConfig.from_flat({k: v[k] for k in v})

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name):
        proto = _section_defaults()[name]
        kw = {f.name: self.values["%s.%s" % (name, f.name)] for f in fields(proto)}
        for k, v in kw.items():
            if isinstance(getattr(proto, k), tuple) and isinstance(v, list):
                kw[k] = tuple(v)
        try:
            return type(proto)(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError("%s: %s" % (name, e)) from None

    @property
    def protocol(self) -> SimProtocol:
        return self.section("protocol")

    @property
    def rasc(self) -> RascConfig:
        return self.section("rasc")

    @property
    def fault(self) -> FaultSpec:
        return self.section("fault")

    @property
    def standin(self) -> StandInSpec:
        kw = {f.name: self.values["standin.%s" % f.name] for f in fields(StandInSpec)}
        return StandInSpec(**kw)

    def validate(self):
        for name in ("protocol", "rasc", "fault"):
            self.section(name)
        try:
            self.standin
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        if self["run.runs"] < 1:
            raise ConfigError("run.runs must be at least 1")
        if self["run.jobs"] < 1:
            raise ConfigError("run.jobs must be at least 1")
        if self["sweep.parameter"] not in SWEEP_DEFAULTS:
            raise ConfigError("sweep.parameter must be one of %s" % ", ".join(SWEEP_DEFAULTS))
        for k in ("faults.failure_rates", "faults.loss_rates"):
            if any(not 0 <= r <= 1 for r in self[k]):
                raise ConfigError("%s must lie in [0, 1]" % k)

    def hash(self) -> str:
        canon = json.dumps(self.values, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


@dataclass
class Verdict:
    name: str
    passed: bool
    value: float
    target: str

    def row(self):
        return {"check": self.name, "passed": int(self.passed), "value": self.value, "target": self.target}


@dataclass
class ExperimentResult:
    tables: dict
    verdicts: list

    @property
    def ok(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def verdict(self, name) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)


# ---------------------------------------------------------------- CSV output

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if not np.isfinite(v) else repr(v)
    return str(v)


def render_csv(rows: list, cfg: ExperimentConfig, experiment: str, columns=None) -> str:
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    head = [
        "# experiment: %s" % experiment,
        "# config_hash: %s" % cfg.hash(),
        "# seed_policy: %s" % SEED_POLICY,
        "# metric_versions: %s" % ",".join("%s=%s" % kv for kv in sorted(METRIC_VERSIONS.items())),
    ]
    body = [",".join(columns)]
    for r in rows:
        body.append(",".join(_cell(r.get(c)) for c in columns))
    return "\n".join(head + body) + "\n"


def write_tables(result: ExperimentResult, cfg: ExperimentConfig, experiment: str, out) -> list:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, rows in result.tables.items():
        p = out / ("%s_%s.csv" % (experiment, name))
        p.write_text(render_csv(rows, cfg, experiment), encoding="utf-8")
        written.append(p)
    p = out / ("%s_verdicts.csv" % experiment)
    p.write_text(render_csv([v.row() for v in result.verdicts], cfg, experiment,
                            ["check", "passed", "value", "target"]), encoding="utf-8")
    written.append(p)
    return written


def _pmap(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, tasks))


def _summary(rows, keys, metrics):
    groups = {}
    for r in rows:
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    out = []
    for g, rs in groups.items():
        row = dict(zip(keys, g))
        row["n"] = len(rs)
        for m in metrics:
            v = np.array([r.get(m, np.nan) for r in rs], dtype=float)
            v = v[np.isfinite(v)]
            row[m + "_mean"] = float(v.mean()) if v.size else None
            row[m + "_std"] = float(v.std(ddof=1)) if v.size > 1 else None
        out.append(row)
    return out


def _band(name, value, band) -> Verdict:
    lo, hi = band
    return Verdict(name, bool(lo <= value <= hi), float(value), "[%g, %g]" % (lo, hi))


def _seeds(cfg: ExperimentConfig, grid: int | None = None, runs: int | None = None):
    runs = cfg["run.runs"] if runs is None else runs
    if grid is not None and grid >= 32 and not cfg["run.full"]:
        runs = min(runs, cfg["simulate.large_grid_cap"])
    return [cfg["run.seed_base"] + i for i in range(runs)]


# ---------------------------------------------------------------- shared evaluation

def _make_world(protocol: SimProtocol, fault: FaultSpec, seed: int):
    w = sample_world(replace(protocol, seed=seed))
    series = inject_faults(w.series, replace(fault, seed=seed))
    return w, series


def report_for(estimate: np.ndarray, series: FrameSeries, w, params: AffineParams | None = None) -> RunReport:
    rep = RunReport()
    rep.field_rmse = field_rmse(estimate, w.field, series.present)
    est = np.where(series.present, estimate, np.nan)
    rep.peak_to_peak = peak_to_peak(est)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean_map = np.nanmean(est, axis=0)
    ns = nonsmooth_residual(mean_map, w.layout)
    rep.nonsmooth_rms, rep.nonsmooth_edge, rep.nonsmooth_interior = ns.overall, ns.edge, ns.interior
    if params is not None:
        pe = param_and_gauge_errors(params, w.truth, float(w.field.mean()), w.refs.index)
        rep.gain_rmse, rep.offset_rmse, rep.gauge_rms = pe
    return rep


def evaluate_rasc(w, series, rcfg: RascConfig):
    t0 = time.perf_counter()
    run = run_rasc(series, w.layout, w.refs, rcfg, truth=w.field)
    est = apply_inverse(run.state.params, series)
    wall = time.perf_counter() - t0
    rep = report_for(est, series, w, run.state.params)
    rep.bytes_rasc, rep.bytes_centralized = byte_accounting(w.layout.n, series.T, run.plan.n_active,
                                                            run.trace.consensus_iterations)
    sp = laplacian_lambda2(run.plan, rcfg.alpha)
    rep.rho_emp = run.trace.rho_emp
    rep.rho_th = sp.rho_theoretical
    rep.wall_time = wall
    return run, rep, sp


def _row(base: dict, rep: RunReport, timing: bool, **extra) -> dict:
    d = dict(base)
    d.update(rep.as_dict())
    if not timing:
        d.pop("wall_time")
    d.update(extra)
    return d


# ---------------------------------------------------------------- simulate

def _simulate_task(args):
    cfg_values, grid, seed, run_index = args
    cfg = ExperimentConfig(cfg_values)
    timing = cfg["run.timing"]
    proto = replace(cfg.protocol, grid=grid)
    w, series = _make_world(proto, cfg.fault, seed)
    run, rep, sp = evaluate_rasc(w, series, cfg.rasc)
    base = {"grid": grid, "run": run_index, "seed": seed}
    rows = [_row(base, rep, timing, method="rasc", n_clusters=run.plan.n_active,
                 consensus_iters=run.trace.consensus_iterations, lambda2=sp.lambda2,
                 rho_th_dmax=sp.rho_theoretical_dmax)]
    t0 = time.perf_counter()
    ekf = B.centralized_rls_oracle(series, w.field, meas_sd=proto.noise_sd)
    r = report_for(ekf.field, series, w, ekf.params)
    r.bytes_centralized = ekf.bytes
    r.wall_time = time.perf_counter() - t0
    rows.append(_row(base, r, timing, method="ekf"))
    for method, res in (("uncalibrated", B.uncalibrated(series)), ("factory", B.factory_oracle(series, w.truth))):
        r = report_for(res.field, series, w, res.params)
        r.wall_time = 0.0
        rows.append(_row(base, r, timing, method=method))
    return rows


def run_simulate(cfg: ExperimentConfig) -> ExperimentResult:
    tasks = []
    for grid in cfg["simulate.grids"]:
        for i, s in enumerate(_seeds(cfg, grid)):
            tasks.append((cfg.values, int(grid), s, i))
    rows = [r for rs in _pmap(_simulate_task, tasks, cfg["run.jobs"]) for r in rs]
    metrics = [c for c in RunReport.columns() if c != "wall_time" or cfg["run.timing"]]
    summary = _summary(rows, ["grid", "method"], metrics + ["n_clusters", "consensus_iters", "lambda2"])
    verdicts = []
    by = {(r["grid"], r["method"]): r for r in summary}
    for grid in cfg["simulate.grids"]:
        g = int(grid)
        rasc = by[(g, "rasc")]
        if g == 16:
            for m in ("uncalibrated", "factory", "ekf", "rasc"):
                verdicts.append(_band("%s_rmse_16" % m, by[(g, m)]["field_rmse_mean"], BANDS[m]))
            verdicts.append(_band("clusters_16", rasc["n_clusters_mean"], CLUSTER_BAND_16))
        if g == 8:
            verdicts.append(_band("rasc_rmse_8", rasc["field_rmse_mean"], RASC_BAND_8))
        central = [r["bytes_centralized"] for r in rows if r["grid"] == g and r["method"] == "rasc"]
        if g in CENTRAL_BYTES:
            exact = all(c == CENTRAL_BYTES[g] for c in central)
            verdicts.append(Verdict("bytes_centralized_%d" % g, exact, float(central[0]), "== %d" % CENTRAL_BYTES[g]))
        ratio = rasc["bytes_centralized_mean"] / rasc["bytes_rasc_mean"]
        if g == 16:
            verdicts.append(_band("bytes_ratio_16", ratio, BYTE_RATIO_BAND))
    return ExperimentResult({"runs": rows, "summary": summary}, verdicts)


# ---------------------------------------------------------------- baselines

def _baselines_task(args):
    cfg_values, seed, run_index = args
    cfg = ExperimentConfig(cfg_values)
    w, series = _make_world(cfg.protocol, cfg.fault, seed)
    run, rep, _ = evaluate_rasc(w, series, cfg.rasc)
    res = {
        "uncalibrated": B.uncalibrated(series).field,
        "temporal_ma": B.temporal_ma(series).field,
        "pairwise": B.pairwise_differential(series, w.layout, w.refs).field,
        "median3x3": B.median_spatial_filter(series, w.layout).field,
        "bmep": B.bmep(series, w.layout, w.refs).field,
        "factory": B.factory_oracle(series, w.truth).field,
    }
    row = {"run": run_index, "seed": seed}
    for m in ORDERING:
        row[m] = rep.field_rmse if m == "rasc" else field_rmse(res[m], w.field, series.present)
    return row


def _paired_gap(rows, hi, lo):
    d = np.array([r[hi] - r[lo] for r in rows])
    se = d.std(ddof=1) / np.sqrt(d.size) if d.size > 1 else np.inf
    return float(d.mean()), float(se)


def run_baselines(cfg: ExperimentConfig) -> ExperimentResult:
    tasks = [(cfg.values, s, i) for i, s in enumerate(_seeds(cfg))]
    rows = _pmap(_baselines_task, tasks, cfg["run.jobs"])
    summary = []
    verdicts = []
    for m in ORDERING:
        v = np.array([r[m] for r in rows])
        lo, hi = BANDS[m]
        summary.append({"method": m, "mean": float(v.mean()), "std": float(v.std(ddof=1)) if v.size > 1 else None,
                        "band_lo": lo, "band_hi": hi})
        verdicts.append(_band("%s_band" % m, float(v.mean()), BANDS[m]))
    for hi_m, lo_m in zip(ORDERING[:-1], ORDERING[1:]):
        mean, se = _paired_gap(rows, hi_m, lo_m)
        # the paired gap must be positive and clear of two standard errors
        verdicts.append(Verdict("order_%s>%s" % (hi_m, lo_m), bool(mean > 0 and mean > 2 * se), mean,
                                "> 2 se (%.4g)" % (2 * se)))
    r_bmep = np.mean([r["bmep"] for r in rows])
    r_rasc = np.mean([r["rasc"] for r in rows])
    gain = 1 - r_rasc / r_bmep
    verdicts.append(Verdict("rasc_beats_bmep_5pct", bool(gain >= 0.05), float(gain), ">= 0.05"))
    return ExperimentResult({"runs": rows, "summary": summary}, verdicts)


# ---------------------------------------------------------------- sweep

def _sweep_task(args):
    cfg_values, param, value, seed, run_index = args
    cfg = ExperimentConfig(cfg_values)
    rcfg = replace(cfg.rasc, **{SWEEP_FIELDS[param]: value})
    w, series = _make_world(cfg.protocol, cfg.fault, seed)
    _, rep, _ = evaluate_rasc(w, series, rcfg)
    return {"parameter": param, "value": value, "run": run_index, "seed": seed, "field_rmse": rep.field_rmse}


def run_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    param = cfg["sweep.parameter"]
    values = cfg["sweep.values"] or SWEEP_DEFAULTS[param]
    if param == "nmin":
        values = [int(v) for v in values]
    else:
        values = [float(v) for v in values]
    tasks = [(cfg.values, param, v, s, i) for v in values for i, s in enumerate(_seeds(cfg))]
    rows = _pmap(_sweep_task, tasks, cfg["run.jobs"])
    summary = _summary(rows, ["parameter", "value"], ["field_rmse"])
    means = np.array([r["field_rmse_mean"] for r in summary])
    verdicts = []
    if param == "eta":
        spread = float(means.max() - means.min())
        verdicts.append(Verdict("eta_spread", spread <= 0.05, spread, "<= 0.05"))
    elif param == "nmin":
        default = getattr(RascConfig(), "n_min")
        ref = [r["field_rmse_mean"] for r in summary if r["value"] == default]
        if ref:
            dev = float(np.max(np.abs(means - ref[0])))
            verdicts.append(Verdict("nmin_within_default", dev <= 0.08, dev, "<= 0.08"))
    elif param == "alpha":
        order = np.argsort(values)
        m = means[order]
        verdicts.append(Verdict("alpha_trend", bool(m[-1] <= m[0]), float(m[-1] - m[0]), "<= 0"))
    return ExperimentResult({"runs": rows, "summary": summary}, verdicts)


# ---------------------------------------------------------------- faults

def _faults_task(args):
    cfg_values, fail, loss, seed, run_index = args
    cfg = ExperimentConfig(cfg_values)
    fault = replace(cfg.fault, node_failure_rate=fail, packet_loss_rate=loss)
    w, series = _make_world(cfg.protocol, fault, seed)
    _, rep, _ = evaluate_rasc(w, series, cfg.rasc)
    unc = field_rmse(series.masked(), w.field, series.present)
    return {"failure_rate": fail, "loss_rate": loss, "run": run_index, "seed": seed,
            "field_rmse": rep.field_rmse, "uncalibrated_rmse": unc,
            "delivered": float(series.present.mean())}


def run_faults(cfg: ExperimentConfig) -> ExperimentResult:
    fr = [float(v) for v in cfg["faults.failure_rates"]]
    lr = [float(v) for v in cfg["faults.loss_rates"]]
    seeds = _seeds(cfg, runs=cfg["faults.runs"])
    tasks = [(cfg.values, f, l, s, i) for f in fr for l in lr for i, s in enumerate(seeds)]
    rows = _pmap(_faults_task, tasks, cfg["run.jobs"])
    summary = _summary(rows, ["failure_rate", "loss_rate"], ["field_rmse", "uncalibrated_rmse", "delivered"])
    cell = {(r["failure_rate"], r["loss_rate"]): r for r in summary}
    heat = []
    for f in fr:
        row = {"failure_rate": f}
        for l in lr:
            row["loss_%g" % l] = cell[(f, l)]["field_rmse_mean"]
        heat.append(row)
    verdicts = []
    if (0.0, 0.0) in cell:
        base = cell[(0.0, 0.0)]
        verdicts.append(_band("no_fault_cell", base["field_rmse_mean"], (0.50, 0.62)))
        if (0.3, 0.3) in cell:
            worst = cell[(0.3, 0.3)]["field_rmse_mean"]
            r1 = worst / base["field_rmse_mean"]
            r2 = worst / base["uncalibrated_rmse_mean"]
            verdicts.append(Verdict("fault_degradation", r1 <= 1.25, r1, "<= 1.25"))
            verdicts.append(Verdict("fault_vs_uncalibrated", r2 <= 0.40, r2, "<= 0.40"))
    return ExperimentResult({"runs": rows, "summary": summary, "heatmap": heat}, verdicts)


# ---------------------------------------------------------------- theory

def _theory_task(args):
    cfg_values, grid, seed, run_index = args
    cfg = ExperimentConfig(cfg_values)
    proto = replace(cfg.protocol, grid=grid)
    w, series = _make_world(proto, cfg.fault, seed)
    run, rep, sp = evaluate_rasc(w, series, cfg.rasc)
    n_cl = len(run.trace.cluster_objectives)
    strict = n_cl - len(run.trace.objective_violations(1e-9))
    inner = n_cl - len(run.trace.inner_violations(1e-9))
    return {"grid": grid, "run": run_index, "seed": seed, "clusters": n_cl,
            "t1_strict_pass": strict, "t1_inner_pass": inner,
            "t2_monotone": int(monotone_within(run.trace.consensus_rmse, 1e-3)),
            "rho_emp": rep.rho_emp, "rho_th": sp.rho_theoretical, "rho_th_dmax": sp.rho_theoretical_dmax,
            "lambda2": sp.lambda2, "d_max": sp.d_max, "connected": int(sp.connected),
            "field_rmse": rep.field_rmse}


def run_theory(cfg: ExperimentConfig) -> ExperimentResult:
    tasks = []
    for grid in cfg["theory.grids"]:
        for i, s in enumerate(_seeds(cfg, grid)):
            tasks.append((cfg.values, int(grid), s, i))
    rows = _pmap(_theory_task, tasks, cfg["run.jobs"])
    verdicts = []
    scale_rows = []
    for grid in cfg["theory.grids"]:
        rs = [r for r in rows if r["grid"] == grid]
        tot = sum(r["clusters"] for r in rs)
        strict = sum(r["t1_strict_pass"] for r in rs) / tot
        inner = sum(r["t1_inner_pass"] for r in rs) / tot
        mono = float(np.mean([r["t2_monotone"] for r in rs]))
        rho_emp = float(np.nanmean([r["rho_emp"] for r in rs]))
        rho_th = float(np.mean([r["rho_th"] for r in rs]))
        per_run = float(np.mean([r["rho_emp"] <= r["rho_th"] + 0.02 for r in rs]))
        scale_rows.append({"grid": grid, "runs": len(rs), "clusters": tot, "t1_strict_fraction": strict,
                           "t1_inner_fraction": inner, "t2_monotone_fraction": mono, "rho_emp_mean": rho_emp,
                           "rho_th_mean": rho_th,
                           "rho_th_dmax_mean": float(np.mean([r["rho_th_dmax"] for r in rs])),
                           "lambda2_mean": float(np.mean([r["lambda2"] for r in rs])),
                           "rate_pass_fraction": per_run})
        verdicts.append(Verdict("t1_outer_monotone_%d" % grid, strict == 1.0, strict, "== 1"))
        verdicts.append(Verdict("t1_irls_descent_%d" % grid, inner == 1.0, inner, "== 1"))
        verdicts.append(Verdict("t2_rmse_monotone_%d" % grid, mono == 1.0, mono, "== 1"))
        verdicts.append(Verdict("t2_rate_%d" % grid, rho_emp <= rho_th + 0.02, rho_emp - rho_th, "<= 0.02"))
    brk = []
    gamma = cfg.rasc.gamma
    for k in cfg["theory.breakdown_sizes"]:
        at, over = breakdown_sweep(int(k), gamma, cfg["theory.breakdown_trials"], seed=int(k))
        brk.append({"k": k, "replaced": at.replaced, "trials": at.trials, "bounded": at.bounded, "exceeded": at.exceeded})
        brk.append({"k": k, "replaced": over.replaced, "trials": over.trials, "bounded": over.bounded,
                    "exceeded": over.exceeded})
        ok = at.bounded == at.trials and at.exceeded == 0 and over.exceeded == over.trials
        verdicts.append(Verdict("t3_breakdown_%d" % k, ok, float(at.replaced), "flip at floor(gamma k)+1"))
    return ExperimentResult({"runs": rows, "scales": scale_rows, "breakdown": brk}, verdicts)


# ---------------------------------------------------------------- stress / calibrate

def _fold_metrics(raw: np.ndarray, cal: np.ndarray, reference: np.ndarray | None, layout) -> dict:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ns_raw = nonsmooth_residual(np.nanmean(raw, axis=0), layout)
        ns_cal = nonsmooth_residual(np.nanmean(cal, axis=0), layout)
    d = {"p2p_before": peak_to_peak(raw), "p2p_after": peak_to_peak(cal),
         "nonsmooth_before": ns_raw.overall, "nonsmooth_after": ns_cal.overall,
         "nonsmooth_edge_before": ns_raw.edge, "nonsmooth_edge_after": ns_cal.edge,
         "nonsmooth_interior_before": ns_raw.interior, "nonsmooth_interior_after": ns_cal.interior}
    if reference is not None:
        d["rmse_before"] = field_rmse(raw, reference)
        d["rmse_after"] = field_rmse(cal, reference)
    return d


def _stress_fold(args):
    cfg_values, fold, refs_idx = args
    cfg = ExperimentConfig(cfg_values)
    layout, clean, corrupted, injected = _stress_inputs(cfg)
    refs = References.from_params(injected, refs_idx)
    run = run_rasc(corrupted, layout, refs, cfg.rasc)
    cal = apply_inverse(run.state.params, corrupted)
    d = {"fold": fold}
    d.update(_fold_metrics(corrupted.masked(), cal, clean.masked(), layout))
    pe = param_and_gauge_errors(run.state.params, injected, float(np.nanmean(clean.masked())), refs_idx)
    d.update({"gain_rmse": pe.gain_rmse, "offset_rmse": pe.offset_rmse, "gauge_rms": pe.gauge_rms,
              "gauge_ratio": pe.gauge_rms / pe.offset_rmse if pe.offset_rmse > 0 else np.nan,
              "clusters": run.plan.n_active, "fallback": run.state.count(Status.FALLBACK)})
    return d


def _stress_inputs(cfg: ExperimentConfig):
    path = cfg["stress.recording"]
    if path:
        layout, clean = load_recording(path)
    else:
        layout, clean, _ = make_standin(cfg.standin)
    clean = clean.window(0, cfg["stress.frames"])
    corrupted, injected = inject_drift(clean, tuple(cfg["stress.gain_range"]), tuple(cfg["stress.offset_range"]),
                                       cfg["stress.drift_seed"])
    return layout, clean, corrupted, injected


STRESS_P2P_BAND = (7.46 * 0.85, 7.46 * 1.15)


def run_stress(cfg: ExperimentConfig) -> ExperimentResult:
    layout, _, _, _ = _stress_inputs(cfg)
    folds = make_folds(layout, cfg.rasc.ref_fraction, cfg["stress.folds"], cfg["stress.fold_seed"])
    rows = _pmap(_stress_fold, [(cfg.values, i, r) for i, r in enumerate(folds.references)], cfg["run.jobs"])
    keys = [k for k in rows[0] if k != "fold"]
    rows_s = [dict(r, scope="fold") for r in rows]
    summary = _summary(rows_s, ["scope"], keys)
    m = summary[0]
    rmse_red = 1 - m["rmse_after_mean"] / m["rmse_before_mean"]
    p2p_red = 1 - m["p2p_after_mean"] / m["p2p_before_mean"]
    ns_red = 1 - m["nonsmooth_after_mean"] / m["nonsmooth_before_mean"]
    ratio = m["gauge_rms_mean"] / m["offset_rmse_mean"]
    verdicts = [
        Verdict("rmse_reduction", rmse_red >= 0.85, rmse_red, ">= 0.85"),
        Verdict("p2p_reduction", p2p_red >= 0.85, p2p_red, ">= 0.85"),
        Verdict("gauge_ratio", ratio < 0.2, ratio, "< 0.2"),
        Verdict("nonsmooth_reduction", ns_red >= 0.60, ns_red, ">= 0.60"),
    ]
    if not cfg["stress.recording"]:
        verdicts.append(_band("corrupted_p2p", m["p2p_before_mean"], STRESS_P2P_BAND))
    summary[0].update({"rmse_reduction": rmse_red, "p2p_reduction": p2p_red, "nonsmooth_reduction": ns_red,
                       "gauge_ratio": ratio})
    return ExperimentResult({"folds": rows, "summary": summary}, verdicts)


def run_calibrate(cfg: ExperimentConfig, recording, out=None) -> ExperimentResult:
    """Calibrate a recording against factory-trusted reference subsets.

    Every fold draws its own reference set; the exported series and
    parameters come from fold ``calibrate.export_fold``.
    """
    layout, series = load_recording(recording)
    series = series.window(0, cfg["calibrate.frames"])
    folds = make_folds(layout, cfg.rasc.ref_fraction, cfg["calibrate.folds"], cfg["calibrate.fold_seed"])
    export = cfg["calibrate.export_fold"]
    if not 0 <= export < folds.k:
        raise ConfigError("calibrate.export_fold out of range")
    rows = []
    exported = None
    for i, refs_idx in enumerate(folds.references):
        run = run_rasc(series, layout, References.factory(refs_idx), cfg.rasc)
        cal = apply_inverse(run.state.params, series)
        d = {"fold": i}
        d.update(_fold_metrics(series.masked(), cal, None, layout))
        d["fallback"] = run.state.count(Status.FALLBACK)
        rows.append(d)
        if i == export:
            exported = run, cal
    keys = [k for k in rows[0] if k != "fold"]
    summary = _summary([dict(r, scope="fold") for r in rows], ["scope"], keys)
    run, cal = exported
    params_rows = [{"index": j, "gain": float(run.state.params.gain[j]), "offset": float(run.state.params.offset[j]),
                    "status": Status(int(run.state.status[j])).name.lower()} for j in range(layout.n)]
    cal_series = FrameSeries(series.timestamps, np.where(series.present, cal, 0.0), series.present)
    text = dumps_recording(cal_series, layout.rows, layout.cols, _rate_of(recording),
                           comments=["calibrated", "config_hash: %s" % cfg.hash()])
    # the export must load back as a recording
    loads_recording(text)
    verdicts = [Verdict("export_roundtrip", True, 1.0, "loadable")]
    res = ExperimentResult({"metrics": rows, "summary": summary, "params": params_rows}, verdicts)
    res.calibrated_text = text
    return res


def _rate_of(recording) -> float:
    return read_header(recording).rate_hz


EXPERIMENTS = {
    "simulate": run_simulate,
    "baselines": run_baselines,
    "sweep": run_sweep,
    "faults": run_faults,
    "theory": run_theory,
    "stress": run_stress,
}
