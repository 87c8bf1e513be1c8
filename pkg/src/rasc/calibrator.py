"""Per-cluster alternating estimation, overlap averaging and offset consensus,
plus the end-to-end driver that chains all five stages."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, fields
from typing import NamedTuple, Sequence

import numpy as np

from .core import AffineParams, ArrayLayout, CalibState, FrameSeries, References, Status
from .metrics import field_rmse, fit_geometric_rate
from .robust import HuberConfig, huber_fit_columns, huber_rho, trimmed_mean_rows
from .topology import (ClusterPlan, build_neighborhoods, elect_cluster_heads, screen_consistency,
                       screening_snapshot)


@dataclass(frozen=True)
class RascConfig:
    r_c: float = 0.10
    eta: float = 3.0
    alpha: float = 0.5
    n_min: int = 4
    gamma: float = 0.20
    n_em: int = 5
    n_irls: int = 4
    huber_c: float = 1.345
    k_max: int = 10
    tol: float = 0.01
    ref_fraction: float = 0.05
    screen_frame: int | None = None
    scale_floor: float = 1e-6
    rescale_each_iteration: bool = False
    #: when members miss frames, shift each member by its median deviation from
    #: the per-frame median before trimming, so the changing set of members
    #: present in each frame does not inject offset noise into the field estimate
    align_missing: bool = True

    def __post_init__(self):
        for name in ("r_c", "eta", "huber_c", "tol", "scale_floor"):
            if not getattr(self, name) > 0:
                raise ValueError("%s must be positive" % name)
        for name in ("n_min", "n_em", "n_irls", "k_max"):
            if int(getattr(self, name)) < 1:
                raise ValueError("%s must be at least 1" % name)
        if not 0 < self.gamma < 0.5:
            raise ValueError("gamma must lie in (0, 0.5)")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not 0 < self.ref_fraction <= 1:
            raise ValueError("ref_fraction must lie in (0, 1]")

    @property
    def huber(self) -> HuberConfig:
        return HuberConfig(self.huber_c, self.n_irls, self.scale_floor,
                           rescale_each_iteration=self.rescale_each_iteration)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass(frozen=True, eq=False)
class ClusterFit:
    """Outcome of the alternating loop on one cluster.

    ``objective[it]`` is the cluster Huber loss (non-reference members) at the
    end of outer iteration ``it``; ``inner[it]`` holds the loss before and after
    every reweighting inside that iteration, all at that iteration's scale.
    ``field`` is the last ``x_c(t)`` the members were refit against (NaN on
    dropped frames).
    """

    members: np.ndarray
    params: AffineParams
    fallback: np.ndarray
    objective: np.ndarray
    inner: np.ndarray
    frames_used: np.ndarray
    field: np.ndarray = None


@dataclass
class ConvergenceTrace:
    cluster_objectives: dict = field(default_factory=dict)
    cluster_inner: dict = field(default_factory=dict)
    consensus_delta: list = field(default_factory=list)
    consensus_rmse: list = field(default_factory=list)
    consensus_iterations: int = 0
    converged: bool = False

    @property
    def rho_emp(self) -> float:
        return fit_geometric_rate(self.consensus_rmse).rate

    def objective_violations(self, rtol: float = 1e-9) -> dict:
        """Clusters whose outer-iteration objective ever rises by more than ``rtol``."""
        out = {}
        for cid, L in self.cluster_objectives.items():
            L = np.asarray(L)
            bad = np.flatnonzero(L[1:] > L[:-1] * (1 + rtol) + 1e-300)
            if bad.size:
                out[cid] = bad + 1
        return out

    def inner_violations(self, rtol: float = 1e-9) -> dict:
        """Clusters where some reweighting step raised its own objective."""
        out = {}
        for cid, I in self.cluster_inner.items():
            I = np.asarray(I)
            if np.any(I[:, 1:] > I[:, :-1] * (1 + rtol) + 1e-300):
                out[cid] = True
        return out


def _reference_lookup(refs: References | None):
    if refs is None or len(refs.index) == 0:
        return {}
    return {int(i): (float(a), float(b)) for i, a, b in zip(refs.index, refs.gain, refs.offset)}


def _cluster_field(Y, P, gain, offset, gamma, align=False):
    with np.errstate(invalid="ignore"):
        Z = (Y - offset) / gain
    if align and not P.all():
        Zn = np.where(P, Z, np.nan)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            dev = np.nanmedian(Zn - np.nanmedian(Zn, axis=1)[:, None], axis=0)
        dev = np.nan_to_num(dev)
        Z = Z - (dev - np.median(dev))
    return trimmed_mean_rows(np.where(P, Z, 0.0), P, gamma)


def cluster_alternating_estimation(series: FrameSeries, members, refs: References | None,
                                   cfg: RascConfig = RascConfig(),
                                   init: AffineParams | None = None) -> ClusterFit:
    """Alternate robust field reconstruction and per-member Huber refits.

    Each outer iteration forms ``x_c(t)`` as the trimmed mean over delivered
    members of ``(y_j(t) - b_j) / a_j`` and then refits every non-reference
    member against it. Frames where trimming leaves nothing are dropped. With
    ``cfg.align_missing`` and incomplete frames, members are first shifted by
    their median deviation from the per-frame median (see ``RascConfig``). A
    member left with fewer than two usable frames, or whose gain stops being
    positive, is reset to ``init`` and flagged as fallback.
    """
    members = np.asarray(members, dtype=int)
    k = members.size
    if init is None:
        init = AffineParams.identity(k)
    a = np.array(init.gain, dtype=float)
    b = np.array(init.offset, dtype=float)
    if a.size != k:
        raise ValueError("init must carry one entry per member")
    lookup = _reference_lookup(refs)
    is_ref = np.array([int(j) in lookup for j in members], dtype=bool)
    for x, j in enumerate(members):
        if is_ref[x]:
            a[x], b[x] = lookup[int(j)]

    Y = series.readings[:, members]
    P = series.present[:, members]
    fallback = np.zeros(k, dtype=bool)
    fallback[~is_ref & (P.sum(axis=0) < 2)] = True
    a[fallback], b[fallback] = init.gain[fallback], init.offset[fallback]
    hc = cfg.huber

    objective, inner = [], []
    used = np.zeros(k, dtype=int)
    xh = np.full(series.T, np.nan)
    for _ in range(cfg.n_em):
        xh = _cluster_field(Y, P & ~fallback, a, b, cfg.gamma, cfg.align_missing)
        fit = ~is_ref & ~fallback
        M = P & np.isfinite(xh)[:, None]
        used = M.sum(axis=0)
        short = fit & (used < 2)
        if short.any():
            fallback |= short
            a[short], b[short] = init.gain[short], init.offset[short]
            fit &= ~short
        if not fit.any():
            objective.append(0.0)
            inner.append(np.zeros(cfg.n_irls + 1))
            continue
        cols = np.flatnonzero(fit)
        an, bn, s, tr, _, _ = huber_fit_columns(xh, Y[:, cols], M[:, cols], a[cols], b[cols], hc)
        bad = ~(np.isfinite(an) & np.isfinite(bn) & (an > 0))
        if bad.any():
            fallback[cols[bad]] = True
            an[bad], bn[bad] = init.gain[cols[bad]], init.offset[cols[bad]]
            tr = tr[:, ~bad]
        a[cols], b[cols] = an, bn
        inner.append(tr.sum(axis=1))
        objective.append(float(tr[-1].sum()))
    return ClusterFit(members, AffineParams(a, b), fallback, np.array(objective), np.array(inner), used, xh)


def merge_overlaps(plan: ClusterPlan, fits: Sequence, refs: References | None = None,
                   n: int | None = None) -> CalibState:
    """Average each sensor's estimates over the active clusters covering it.

    ``fits`` is indexed by cluster id; entries may be ``ClusterFit``,
    ``AffineParams`` (aligned with that cluster's members) or ``None`` for
    skipped clusters. Sensors no cluster could calibrate fall back to (1, 0);
    references are clamped to their supplied values.
    """
    n = len(plan.sensor_to_clusters) if n is None else n
    sa = np.zeros(n)
    sb = np.zeros(n)
    cnt = np.zeros(n, dtype=int)
    # accumulate in cluster-id order so the sums do not depend on how fits were produced
    for cid in plan.active:
        f = fits[cid]
        if f is None:
            continue
        if isinstance(f, ClusterFit):
            m, p, ok = f.members, f.params, ~f.fallback
        else:
            m, p, ok = plan.members[cid], f, np.ones(len(plan.members[cid]), dtype=bool)
        np.add.at(sa, m[ok], p.gain[ok])
        np.add.at(sb, m[ok], p.offset[ok])
        np.add.at(cnt, m[ok], 1)
    covered = cnt > 0
    a = np.where(covered, sa / np.maximum(cnt, 1), 1.0)
    b = np.where(covered, sb / np.maximum(cnt, 1), 0.0)
    status = np.where(covered, Status.CALIBRATED, Status.FALLBACK).astype(np.int8)
    if refs is not None and len(refs.index):
        a[refs.index] = refs.gain
        b[refs.index] = refs.offset
        status[refs.index] = Status.REFERENCE
    return CalibState(AffineParams(a, b), status)


def consensus_refine(series: FrameSeries, plan: ClusterPlan, state: CalibState,
                     cfg: RascConfig = RascConfig(), truth: np.ndarray | None = None,
                     order=None) -> tuple:
    """Synchronous offset consensus over the active clusters.

    Every round rebuilds ``x_c(t)`` from the current parameters, forms for each
    calibrated sensor the mean disagreement ``y_j - a_j x_c - b_j`` over its
    covering clusters and delivered frames, and moves the offset by ``alpha``
    times that amount. Gains stay fixed, references stay clamped, fallback
    sensors neither move nor feed the reconstruction. Stops once the largest
    move is below ``tol`` or after ``k_max`` rounds.

    ``order`` permutes the cluster evaluation order; the result must not depend
    on it, since contributions are always summed in cluster-id order.
    """
    n = series.n
    a = np.array(state.params.gain)
    b = np.array(state.params.offset)
    movable = state.status == Status.CALIBRATED
    usable = state.status != Status.FALLBACK
    active = plan.active
    eval_order = active if order is None else np.asarray(order, dtype=int)
    if sorted(eval_order.tolist()) != sorted(active.tolist()):
        raise ValueError("order must be a permutation of the active cluster ids")
    ref_b = b[~movable & usable].copy()

    trace = ConvergenceTrace()
    Ym = series.masked()

    def rmse_now():
        if truth is not None:
            trace.consensus_rmse.append(field_rmse((Ym - b) / a, truth, series.present))

    rmse_now()
    for _ in range(cfg.k_max):
        contrib = {}
        for cid in eval_order:
            m = plan.members[cid]
            Y = series.readings[:, m]
            P = series.present[:, m]
            xh = _cluster_field(Y, P & usable[m], a[m], b[m], cfg.gamma, cfg.align_missing)
            M = P & np.isfinite(xh)[:, None]
            R = np.where(M, Y - a[m] * np.where(np.isfinite(xh), xh, 0.0)[:, None] - b[m], 0.0)
            contrib[int(cid)] = (R.sum(axis=0), M.sum(axis=0))
        tot = np.zeros(n)
        cnt = np.zeros(n, dtype=int)
        for cid in active:
            r, c = contrib[int(cid)]
            m = plan.members[cid]
            tot[m] += r
            cnt[m] += c
        delta = np.where(movable & (cnt > 0), tot / np.maximum(cnt, 1), 0.0)
        b = b + cfg.alpha * delta
        b[~movable & usable] = ref_b
        d_inf = float(np.max(np.abs(delta))) if n else 0.0
        trace.consensus_delta.append(d_inf)
        trace.consensus_iterations += 1
        rmse_now()
        if d_inf < cfg.tol:
            trace.converged = True
            break
    return CalibState(AffineParams(a, b), state.status), trace


class RascRun(NamedTuple):
    state: CalibState
    plan: ClusterPlan
    trace: ConvergenceTrace
    fits: tuple


def build_plan(series: FrameSeries, layout: ArrayLayout, cfg: RascConfig = RascConfig()) -> ClusterPlan:
    """Stages 1-3: neighbourhoods, consistency screen and head election."""
    nbhd = build_neighborhoods(layout, cfg.r_c)
    snap = screening_snapshot(series, cfg.screen_frame)
    screened = screen_consistency(snap, nbhd, cfg.eta)
    return elect_cluster_heads(nbhd, screened, layout, cfg.r_c, cfg.n_min)


def run_rasc(series: FrameSeries, layout: ArrayLayout, refs: References | None,
             cfg: RascConfig = RascConfig(), truth: np.ndarray | None = None) -> RascRun:
    """All five stages from the (1, 0) initialization.

    ``truth`` (the true field, simulation only) adds the per-round field RMSE
    to the consensus trace.
    """
    if series.T < 2:
        raise ValueError("need at least two frames")
    if series.n != layout.n:
        raise ValueError("series and layout disagree on the sensor count")
    plan = build_plan(series, layout, cfg)
    fits = [None] * len(plan.heads)
    trace_objs, trace_inner = {}, {}
    for cid in plan.active:
        f = cluster_alternating_estimation(series, plan.members[cid], refs, cfg)
        fits[cid] = f
        trace_objs[int(cid)] = f.objective
        trace_inner[int(cid)] = f.inner
    state = merge_overlaps(plan, fits, refs, layout.n)
    state, trace = consensus_refine(series, plan, state, cfg, truth)
    trace.cluster_objectives = trace_objs
    trace.cluster_inner = trace_inner
    return RascRun(state, plan, trace, tuple(fits))


def cluster_objective(series: FrameSeries, members, params: AffineParams, field_est, scale,
                      c: float = 1.345) -> float:
    """Huber loss of members against a given field estimate at fixed scales."""
    members = np.asarray(members, dtype=int)
    Y = series.readings[:, members]
    M = series.present[:, members] & np.isfinite(field_est)[:, None]
    R = (Y - params.gain * np.asarray(field_est)[:, None] - params.offset) / scale
    return float(np.where(M, huber_rho(np.where(M, R, 0.0), c), 0.0).sum())
