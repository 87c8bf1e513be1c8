"""Comparison methods: oracles, temporal smoothing, pairwise offsets, spatial
median and the edge-pairwise least-squares offset solver."""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import spsolve

from .core import AffineParams, ArrayLayout, FrameSeries, References, Status, apply_inverse
from .metrics import byte_accounting


@dataclass(frozen=True, eq=False)
class BaselineResult:
    method: str
    field: np.ndarray
    params: AffineParams | None = None
    bytes: int | None = None
    status: np.ndarray | None = None


def uncalibrated(series: FrameSeries) -> BaselineResult:
    return BaselineResult("uncalibrated", series.masked())


def factory_oracle(series: FrameSeries, truth: AffineParams) -> BaselineResult:
    return BaselineResult("factory", apply_inverse(truth, series), truth)


def centralized_rls_oracle(series: FrameSeries, field: np.ndarray, prior_sd=(0.1, 2.0),
                           meas_sd: float = 0.5, forgetting: float = 1.0,
                           prior_mean=(1.0, 0.0)) -> BaselineResult:
    """Per-sensor Kalman filter on the state ``(a, b)`` with the true field as regressor.

    Each delivered sample is one scalar update with measurement variance
    ``meas_sd**2``; ``forgetting < 1`` inflates the covariance before every
    frame. All sensors are filtered together, frame by frame.
    """
    x = np.asarray(field, dtype=float)
    T, n = series.readings.shape
    if x.shape != (T, n):
        raise ValueError("field must be T x n")
    if not 0 < forgetting <= 1:
        raise ValueError("forgetting must lie in (0, 1]")
    r2 = float(meas_sd) ** 2
    th = np.tile(np.asarray(prior_mean, dtype=float), (n, 1))
    P = np.zeros((n, 2, 2))
    P[:, 0, 0] = prior_sd[0] ** 2
    P[:, 1, 1] = prior_sd[1] ** 2
    for t in range(T):
        m = series.present[t]
        if forgetting < 1:
            P = P / forgetting
        h = np.stack([x[t], np.ones(n)], axis=1)
        Ph = np.einsum("nij,nj->ni", P, h)
        S = np.einsum("ni,ni->n", h, Ph) + r2
        K = Ph / S[:, None]
        innov = series.readings[t] - np.einsum("ni,ni->n", h, th)
        upd = m[:, None]
        th = np.where(upd, th + K * innov[:, None], th)
        P = np.where(upd[:, :, None], P - np.einsum("ni,nj->nij", K, Ph), P)
    gain = th[:, 0]
    if np.any(gain <= 0):
        gain = np.where(gain > 0, gain, 1.0)
    params = AffineParams(gain, th[:, 1])
    _, central = byte_accounting(n, T, 0, 0)
    return BaselineResult("ekf", apply_inverse(params, series), params, central)


def batch_map_affine(series: FrameSeries, field: np.ndarray, prior_sd=(0.1, 2.0), meas_sd: float = 0.5,
                     prior_mean=(1.0, 0.0)) -> np.ndarray:
    """Closed-form posterior mean of ``(a, b)`` per sensor; n x 2."""
    x = np.asarray(field, dtype=float)
    n = series.n
    Pinv = np.diag(1.0 / np.square(prior_sd))
    out = np.zeros((n, 2))
    for i in range(n):
        m = series.present[:, i]
        H = np.c_[x[m, i], np.ones(m.sum())]
        A = Pinv + H.T @ H / meas_sd ** 2
        rhs = Pinv @ np.asarray(prior_mean) + H.T @ series.readings[m, i] / meas_sd ** 2
        out[i] = np.linalg.solve(A, rhs)
    return out


def temporal_ma(series: FrameSeries, window: int = 5) -> BaselineResult:
    """Centered moving average per sensor over delivered samples, truncated at the ends."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    h = window // 2
    P = series.present
    Y = np.where(P, series.readings, 0.0)
    cs = np.vstack([np.zeros((1, series.n)), np.cumsum(Y, axis=0)])
    cc = np.vstack([np.zeros((1, series.n)), np.cumsum(P, axis=0)])
    t = np.arange(series.T)
    lo = np.clip(t - h, 0, series.T)
    hi = np.clip(t + h + 1, 0, series.T)
    s = cs[hi] - cs[lo]
    c = cc[hi] - cc[lo]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = s / c
    return BaselineResult("temporal_ma", np.where(P, out, np.nan))


def grid_edges(rows: int, cols: int) -> np.ndarray:
    """4-connected adjacency as (i, j) pairs with i < j."""
    idx = np.arange(rows * cols).reshape(rows, cols)
    h = np.c_[idx[:, :-1].ravel(), idx[:, 1:].ravel()]
    v = np.c_[idx[:-1, :].ravel(), idx[1:, :].ravel()]
    e = np.r_[h, v]
    return e[np.lexsort((e[:, 1], e[:, 0]))]


def _edge_differences(series: FrameSeries, E: np.ndarray) -> tuple:
    P = series.present
    both = P[:, E[:, 0]] & P[:, E[:, 1]]
    d = np.where(both, series.readings[:, E[:, 0]] - series.readings[:, E[:, 1]], 0.0)
    cnt = both.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        delta = d.sum(axis=0) / cnt
    return delta, cnt > 0


def _offset_result(method, series, b, status) -> BaselineResult:
    params = AffineParams(np.ones(series.n), b)
    return BaselineResult(method, series.masked() - b, params, status=status)


def pairwise_differential(series: FrameSeries, layout: ArrayLayout, refs: References) -> BaselineResult:
    """Offsets chained outward from the references along one BFS tree.

    Gains are taken as 1. The first visit fixes a sensor's offset; queue order
    and neighbour order are both by ascending index.
    """
    n = layout.n
    E = grid_edges(layout.rows, layout.cols)
    delta, ok = _edge_differences(series, E)
    adj = [[] for _ in range(n)]
    for (i, j), d, good in zip(E, delta, ok):
        if good:
            adj[i].append((j, -d))  # b_j = b_i + (y_j - y_i)
            adj[j].append((i, d))
    b = np.zeros(n)
    seen = np.zeros(n, dtype=bool)
    q = deque()
    for r, off in sorted(zip(refs.index.tolist(), refs.offset.tolist())):
        b[r] = off
        seen[r] = True
        q.append(r)
    while q:
        j = q.popleft()
        for i, d in sorted(adj[j]):
            if not seen[i]:
                b[i] = b[j] + d
                seen[i] = True
                q.append(i)
    status = np.where(seen, Status.CALIBRATED, Status.FALLBACK).astype(np.int8)
    status[refs.index] = Status.REFERENCE
    return _offset_result("pairwise", series, b, status)


def median_spatial_filter(series: FrameSeries, layout: ArrayLayout) -> BaselineResult:
    """Per-frame 3 x 3 median over in-bounds delivered neighbours (centre included)."""
    R, C = layout.rows, layout.cols
    Y = series.masked().reshape(-1, R, C)
    pad = np.pad(Y, ((0, 0), (1, 1), (1, 1)), constant_values=np.nan)
    stack = np.stack([pad[:, 1 + dr:1 + dr + R, 1 + dc:1 + dc + C] for dr in (-1, 0, 1) for dc in (-1, 0, 1)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        med = np.nanmedian(stack, axis=0)
    out = med.reshape(series.T, -1)
    return BaselineResult("median3x3", np.where(series.present, out, np.nan))


def bmep(series: FrameSeries, layout: ArrayLayout, refs: References) -> BaselineResult:
    """Least-squares offsets over all grid edges with reference offsets clamped.

    Minimizes ``sum (b_i - b_j - delta_ij)^2`` with gains fixed at 1 by solving
    the normal equations of the free nodes. Components of the edge graph that
    hold no reference cannot be pinned and fall back to offset 0.
    """
    n = layout.n
    E = grid_edges(layout.rows, layout.cols)
    delta, ok = _edge_differences(series, E)
    E, delta = E[ok], delta[ok]
    m = len(E)
    B = sparse.csr_matrix((np.r_[np.ones(m), -np.ones(m)], (np.r_[np.arange(m), np.arange(m)], np.r_[E[:, 0], E[:, 1]])),
                          shape=(m, n))
    adj = sparse.csr_matrix((np.ones(m), (E[:, 0], E[:, 1])), shape=(n, n))
    _, comp = connected_components(adj, directed=False)
    is_ref = np.zeros(n, dtype=bool)
    is_ref[refs.index] = True
    pinned = np.isin(comp, np.unique(comp[is_ref]))
    b = np.zeros(n)
    b[refs.index] = refs.offset
    free = np.flatnonzero(pinned & ~is_ref)
    if free.size:
        A = B[:, free]
        rhs = delta - B[:, refs.index] @ refs.offset
        b[free] = spsolve((A.T @ A).tocsc(), A.T @ rhs)
    status = np.where(pinned, Status.CALIBRATED, Status.FALLBACK).astype(np.int8)
    status[is_ref] = Status.REFERENCE
    return _offset_result("bmep", series, b, status)
