"""Reported quantities: reconstruction error, spatial spread, local
non-smoothness, communication volume, parameter errors and contraction rates."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

# bumped whenever a metric definition changes; written into every report header
METRIC_VERSIONS = {
    "field_rmse": "1",
    "peak_to_peak": "1-per-frame",
    "nonsmooth": "1-center-minus-8nbr-median",
    "bytes": "1-per-cluster-consensus",
    "rho_emp": "1-successive-differences",
}

FLOAT_BYTES = 4
STATE_BYTES = 8


@dataclass
class RunReport:
    field_rmse: float = np.nan
    peak_to_peak: float = np.nan
    nonsmooth_rms: float = np.nan
    nonsmooth_edge: float = np.nan
    nonsmooth_interior: float = np.nan
    gain_rmse: float = np.nan
    offset_rmse: float = np.nan
    gauge_rms: float = np.nan
    bytes_rasc: float = np.nan
    bytes_centralized: float = np.nan
    rho_emp: float = np.nan
    rho_th: float = np.nan
    wall_time: float = np.nan

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def columns(cls):
        return list(cls.__dataclass_fields__)


def field_rmse(estimate, truth, present=None) -> float:
    """RMS of ``estimate - truth`` over delivered samples."""
    e = np.asarray(estimate, dtype=float)
    t = np.asarray(truth, dtype=float)
    if e.shape != t.shape:
        raise ValueError("estimate and truth shapes differ")
    m = np.isfinite(e) & np.isfinite(t)
    if present is not None:
        m &= np.asarray(present, dtype=bool)
    if not m.any():
        return float("nan")
    d = (e - t)[m]
    return float(np.sqrt(np.mean(d * d)))


def peak_to_peak(estimate, present=None) -> float:
    """Mean over frames of the spatial range among delivered samples."""
    e = np.atleast_2d(np.asarray(estimate, dtype=float))
    m = np.isfinite(e)
    if present is not None:
        m &= np.asarray(present, dtype=bool)
    rows = m.any(axis=1)
    if not rows.any():
        return float("nan")
    hi = np.where(m, e, -np.inf).max(axis=1)
    lo = np.where(m, e, np.inf).min(axis=1)
    return float(np.mean((hi - lo)[rows]))


class NonSmooth(NamedTuple):
    per_sensor: np.ndarray
    overall: float
    edge: float
    interior: float


def edge_mask(rows: int, cols: int, depth: int = 2) -> np.ndarray:
    """Sensors in the first and last ``depth`` rows."""
    r = np.arange(rows * cols) // cols
    return (r < depth) | (r >= rows - depth)


def nonsmooth_residual(mean_map, layout) -> NonSmooth:
    """Centre value minus the median of its 8-connected neighbours.

    Neighbourhoods are clipped at the boundary; sensors with a NaN mean are
    skipped as neighbours and get a NaN residual themselves.
    """
    rows, cols = layout.rows, layout.cols
    v = np.asarray(mean_map, dtype=float).reshape(rows, cols)
    pad = np.pad(v, 1, constant_values=np.nan)
    shifts = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    stack = np.stack([pad[1 + dr:1 + dr + rows, 1 + dc:1 + dc + cols] for dr, dc in shifts])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(stack, axis=0)
    d = (v - med).ravel()
    em = edge_mask(rows, cols)

    def rms(x):
        x = x[np.isfinite(x)]
        return float(np.sqrt(np.mean(x * x))) if x.size else float("nan")

    return NonSmooth(d, rms(d), rms(d[em]), rms(d[~em]))


def byte_accounting(n: int, T: int, n_clusters: int, consensus_iters: int) -> tuple:
    """Bytes moved in one calibration epoch, ``(rasc, centralized)``.

    Centralized: every sample uploaded as a float32 plus a two-component
    float64 state update. RASC: float32 upload of every sample to its head,
    a float64 (gain, offset) broadcast per sensor, and one float64 offset
    exchange per active cluster per consensus round.
    """
    n, T, n_clusters, consensus_iters = int(n), int(T), int(n_clusters), int(consensus_iters)
    central = n * T * (FLOAT_BYTES + 2 * STATE_BYTES)
    rasc = n * T * FLOAT_BYTES + 2 * STATE_BYTES * n + STATE_BYTES * n_clusters * consensus_iters
    return rasc, central


def byte_accounting_edges(n: int, T: int, n_edges: int, consensus_iters: int) -> tuple:
    """Variant charging one float64 exchange per overlap edge per round."""
    rasc, central = byte_accounting(n, T, 0, 0)
    return rasc + STATE_BYTES * int(n_edges) * int(consensus_iters), central


class ParamErrors(NamedTuple):
    gain_rmse: float
    offset_rmse: float
    gauge_rms: float


def param_and_gauge_errors(est, truth, field_mean: float, exclude=None) -> ParamErrors:
    """RMS gain, offset and gauge-line errors, skipping ``exclude`` (references)."""
    keep = np.ones(est.gain.size, dtype=bool)
    if exclude is not None:
        keep[np.asarray(list(exclude), dtype=int)] = False
    if not keep.any():
        return ParamErrors(0.0, 0.0, 0.0)
    da = (est.gain - truth.gain)[keep]
    db = (est.offset - truth.offset)[keep]
    g = da * field_mean + db
    r = lambda x: float(np.sqrt(np.mean(x * x)))
    return ParamErrors(r(da), r(db), r(g))


class RateFit(NamedTuple):
    rate: float
    ok: bool
    points: int


def fit_geometric_rate(errors, rel_floor: float = 1e-12) -> RateFit:
    """Contraction factor of a sequence converging geometrically to an unknown limit.

    Fits ``log |e[k+1] - e[k]|`` against ``k`` by least squares; the slope is
    the log rate. Successive differences of ``e_inf + C rho^k`` are exactly
    geometric, so no estimate of the limit is needed. Differences below
    ``rel_floor`` times the first one, or within round-off of the sequence
    magnitude, are treated as converged and dropped.
    Fewer than two usable differences (e.g. a constant sequence) gives
    ``rate = nan`` with ``ok = False``.
    """
    e = np.asarray(errors, dtype=float)
    e = e[np.isfinite(e)]
    if e.size < 3:
        return RateFit(float("nan"), False, 0)
    d = np.abs(np.diff(e))
    if not d[0] > 0:
        return RateFit(float("nan"), False, 0)
    k = np.arange(d.size)
    floor = max(rel_floor * d[0], 1e-9 * float(np.max(np.abs(e))))
    ok = d > floor
    # stop at the first converged difference so a flat tail cannot bend the fit
    if not ok.all():
        last = np.argmin(ok)
        ok[last:] = False
    if ok.sum() < 2:
        return RateFit(float("nan"), False, int(ok.sum()))
    slope = np.polyfit(k[ok], np.log(d[ok]), 1)[0]
    return RateFit(float(np.exp(slope)), True, int(ok.sum()))
