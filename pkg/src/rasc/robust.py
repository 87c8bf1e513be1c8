"""Robust scalar estimators and the Huber IRLS affine fit."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EmptySampleError

MAD_CONSISTENCY = 1.4826
# guards floor(gamma * k) against 0.29 * 100 == 28.999...
_TRIM_EPS = 1e-9


def _as_sample(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptySampleError("empty sample")
    return v


def median(values) -> float:
    """Median; even-sized samples average the two middle values."""
    return float(np.median(_as_sample(values)))


def scaled_mad(values) -> float:
    """1.4826 * median absolute deviation (consistent for the Gaussian SD)."""
    v = _as_sample(values)
    return float(MAD_CONSISTENCY * np.median(np.abs(v - np.median(v))))


def trim_count(k: int, gamma: float) -> int:
    return int(np.floor(gamma * k + _TRIM_EPS))


def trimmed_mean(values, gamma: float) -> float:
    """Drop ``floor(gamma * k)`` values from each tail and average the rest."""
    if not 0 <= gamma < 0.5:
        raise ValueError("gamma must lie in [0, 0.5)")
    v = np.sort(_as_sample(values))
    g = trim_count(v.size, gamma)
    if v.size - 2 * g < 1:
        raise EmptySampleError("nothing left after trimming")
    return float(v[g:v.size - g].mean())


def trimmed_mean_rows(X: np.ndarray, present: np.ndarray, gamma: float) -> np.ndarray:
    """Row-wise trimmed mean over the present entries of each row.

    The trim count follows each row's own present count. Rows with nothing
    left after trimming give NaN.
    """
    X = np.asarray(X, dtype=float)
    present = np.asarray(present, dtype=bool)
    k = present.sum(axis=1)
    g = np.floor(gamma * k + _TRIM_EPS).astype(int)
    S = np.sort(np.where(present, X, np.inf), axis=1)
    j = np.arange(X.shape[1])[None, :]
    keep = (j >= g[:, None]) & (j < (k - g)[:, None])
    cnt = keep.sum(axis=1)
    tot = np.where(keep, S, 0.0).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = tot / cnt
    out[cnt < 1] = np.nan
    return out


def huber_rho(z, c: float) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    return np.where(az <= c, 0.5 * z * z, c * az - 0.5 * c * c)


@dataclass(frozen=True)
class HuberConfig:
    tuning_c: float = 1.345
    irls_iterations: int = 4
    scale_floor: float = 1e-6
    degenerate_range: float = 1e-6
    #: re-estimate the scale from the current residuals before every reweighting
    #: instead of once per fit; the objective is then no longer guaranteed monotone
    rescale_each_iteration: bool = False

    def __post_init__(self):
        if not self.tuning_c > 0:
            raise ValueError("tuning_c must be positive")
        if self.irls_iterations < 1:
            raise ValueError("need at least one IRLS iteration")
        if not self.scale_floor > 0:
            raise ValueError("scale_floor must be positive")


@dataclass(frozen=True)
class AffineFit:
    gain: float
    offset: float
    final_objective: float
    samples_used: int
    initial_objective: float
    objective_trace: tuple
    scale: float
    degenerate: bool


def _masked_mad_columns(R: np.ndarray, M: np.ndarray) -> np.ndarray:
    Rn = np.where(M, R, np.nan)
    with np.errstate(all="ignore"):
        med = np.nanmedian(Rn, axis=0)
        return MAD_CONSISTENCY * np.nanmedian(np.abs(Rn - med), axis=0)


def huber_fit_columns(x: np.ndarray, Y: np.ndarray, M: np.ndarray, a0: np.ndarray, b0: np.ndarray,
                      cfg: HuberConfig):
    """Huber IRLS of every column of ``Y`` on the shared regressor ``x``.

    ``M`` marks usable entries. The robust scale of each column is the scaled
    MAD of its residuals at the starting parameters, floored at
    ``cfg.scale_floor``, and held fixed for the IRLS pass so that each
    reweighted solve is a majorize-minimize step on one fixed objective.

    Returns ``(gain, offset, scale, objective_trace, used, degenerate)`` where
    ``objective_trace`` has shape ``(irls_iterations + 1, k)``.
    """
    x = np.asarray(x, dtype=float)
    Y = np.asarray(Y, dtype=float)
    M = np.asarray(M, dtype=bool) & np.isfinite(x)[:, None]
    c = cfg.tuning_c
    a = np.array(a0, dtype=float, copy=True)
    b = np.array(b0, dtype=float, copy=True)
    X = np.where(M, x[:, None], 0.0)
    Yz = np.where(M, Y, 0.0)
    used = M.sum(axis=0)

    xmax = np.where(M, X, -np.inf).max(axis=0)
    xmin = np.where(M, X, np.inf).min(axis=0)
    degenerate = ~(xmax - xmin >= cfg.degenerate_range)

    R = Yz - a * X - b
    s = np.maximum(np.nan_to_num(_masked_mad_columns(R, M), nan=cfg.scale_floor), cfg.scale_floor)

    def objective(R):
        return np.where(M, huber_rho(R / s, c), 0.0).sum(axis=0)

    trace = [objective(R)]
    for _ in range(cfg.irls_iterations):
        if cfg.rescale_each_iteration:
            s = np.maximum(np.nan_to_num(_masked_mad_columns(R, M), nan=cfg.scale_floor), cfg.scale_floor)
        aR = np.abs(R)
        with np.errstate(divide="ignore"):
            w = np.where(aR <= c * s, 1.0, c * s / aR)
        w = np.where(M, w, 0.0)
        sw = w.sum(axis=0)
        ok = sw > 0
        swd = np.where(ok, sw, 1.0)
        xm = (w * X).sum(axis=0) / swd
        ym = (w * Yz).sum(axis=0) / swd
        dx = np.where(M, X - xm, 0.0)
        sxx = (w * dx * dx).sum(axis=0)
        sxy = (w * dx * (Yz - ym)).sum(axis=0)
        solvable = ok & ~degenerate & (sxx > 0)
        a_new = np.where(solvable, sxy / np.where(solvable, sxx, 1.0), a)
        b_new = np.where(ok, ym - a_new * xm, b)
        a, b = a_new, b_new
        R = Yz - a * X - b
        trace.append(objective(R))
    return a, b, s, np.array(trace), used, degenerate


def huber_affine_fit(regressor, response, cfg: HuberConfig = HuberConfig(),
                     initial=(1.0, 0.0)) -> AffineFit:
    """Fit ``response ~ gain * regressor + offset`` under the Huber loss.

    Runs exactly ``cfg.irls_iterations`` reweighted least-squares passes from
    ``initial``. A regressor whose range is below ``cfg.degenerate_range`` is
    flagged ``degenerate``; the gain is then held at its initial value and only
    the offset is refit.
    """
    x = np.asarray(regressor, dtype=float).ravel()
    y = np.asarray(response, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError("regressor and response differ in length")
    if x.size < 2:
        raise ValueError("need at least two samples")
    a, b, s, tr, used, deg = huber_fit_columns(
        x, y[:, None], np.ones((x.size, 1), bool), np.array([initial[0]]), np.array([initial[1]]), cfg)
    return AffineFit(float(a[0]), float(b[0]), float(tr[-1, 0]), int(used[0]), float(tr[0, 0]),
                     tuple(float(v) for v in tr[:, 0]), float(s[0]), bool(deg[0]))
