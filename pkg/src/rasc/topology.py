"""Neighbourhoods, consistency screening, cluster-head election and the
spectrum of the cluster-overlap graph."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .core import ArrayLayout, FrameSeries
from .robust import MAD_CONSISTENCY

# relative slack for "distance <= radius" so that lattice points lying exactly
# on the circle are counted regardless of float rounding
RADIUS_RTOL = 1e-9


def _within(dist: np.ndarray, radius: float) -> np.ndarray:
    return dist <= radius * (1.0 + RADIUS_RTOL)


@dataclass(frozen=True, eq=False)
class NeighborhoodIndex:
    members: tuple
    radius: float

    def __len__(self):
        return len(self.members)

    def __getitem__(self, i) -> np.ndarray:
        return self.members[i]

    def sizes(self) -> np.ndarray:
        return np.array([m.size for m in self.members])


def build_neighborhoods(layout: ArrayLayout, r_c: float) -> NeighborhoodIndex:
    """Closed Euclidean balls of radius ``r_c`` around each sensor (self included)."""
    if not r_c > 0:
        raise ValueError("r_c must be positive")
    D = cdist(layout.positions, layout.positions)
    members = tuple(np.flatnonzero(_within(D[i], r_c)) for i in range(layout.n))
    return NeighborhoodIndex(members, float(r_c))


def screening_snapshot(series: FrameSeries, frame: int | None = None) -> np.ndarray:
    """Per-sensor reading used by the consistency screen.

    Defaults to the middle frame. A sensor that missed that frame contributes
    its delivered sample closest in time (earlier on ties); sensors that never
    delivered anything get NaN.
    """
    T = series.T
    t_hat = T // 2 if frame is None else int(frame)
    if not 0 <= t_hat < T:
        raise ValueError("screening frame out of range")
    dist = np.abs(np.arange(T) - t_hat).astype(float)
    # ties resolve to the earlier frame
    key = np.where(series.present, dist[:, None] + np.arange(T)[:, None] * 1e-9, np.inf)
    best = np.argmin(key, axis=0)
    snap = series.readings[best, np.arange(series.n)]
    snap = np.where(np.isfinite(key[best, np.arange(series.n)]), snap, np.nan)
    return snap


def screen_consistency(snapshot, nbhd: NeighborhoodIndex, eta: float) -> tuple:
    """One-shot MAD screen of every neighbourhood.

    Keeps ``j`` in the screened set of ``i`` when its snapshot lies within
    ``eta`` scaled MADs of the neighbourhood median. A zero MAD keeps only the
    values equal to the median. NaN snapshots are never kept.
    """
    if not eta > 0:
        raise ValueError("eta must be positive")
    y = np.asarray(snapshot, dtype=float)
    out = []
    for i in range(len(nbhd)):
        nb = nbhd[i]
        v = y[nb]
        ok = np.isfinite(v)
        if not ok.any():
            out.append(np.empty(0, dtype=int))
            continue
        vv = v[ok]
        med = np.median(vv)
        dev = np.abs(vv - med)
        s = MAD_CONSISTENCY * np.median(dev)
        keep = dev <= eta * s if s > 0 else vv == med
        out.append(nb[ok][keep])
    return tuple(out)


@dataclass(frozen=True, eq=False)
class ClusterPlan:
    heads: np.ndarray
    members: tuple
    skipped: np.ndarray
    sensor_to_clusters: tuple
    overlap_edges: np.ndarray
    unclustered: np.ndarray
    r_c: float
    n_min: int

    @property
    def active(self) -> np.ndarray:
        """Ids of clusters that take part in estimation and consensus."""
        return np.flatnonzero(~self.skipped)

    @property
    def n_active(self) -> int:
        return int((~self.skipped).sum())

    @property
    def self_screened(self) -> np.ndarray:
        """Cluster ids whose head was screened out of its own member set.

        Such a head still leads its cluster; the flag is informational.
        """
        return np.array([cid for cid, (h, m) in enumerate(zip(self.heads, self.members))
                         if h >= 0 and h not in m], dtype=int)

    def degree(self) -> np.ndarray:
        deg = np.zeros(len(self.heads), dtype=int)
        for c1, c2 in self.overlap_edges:
            deg[c1] += 1
            deg[c2] += 1
        return deg


def elect_cluster_heads(nbhd: NeighborhoodIndex, screened, layout: ArrayLayout, r_c: float,
                        n_min: int) -> ClusterPlan:
    """Deterministic greedy maximal independent set at radius ``r_c / sqrt(2)``.

    Candidates are visited by decreasing screened-set size, lowest index first
    among ties; each accepted head excludes every sensor within the head radius.
    A cluster's members are its head's screened set; clusters smaller than
    ``n_min`` are kept in the plan but marked skipped.
    """
    n = layout.n
    score = np.array([len(s) for s in screened])
    order = np.lexsort((np.arange(n), -score))
    r_ch = r_c / np.sqrt(2.0)
    D = cdist(layout.positions, layout.positions)
    excluded = np.zeros(n, dtype=bool)
    heads = []
    for i in order:
        if excluded[i]:
            continue
        heads.append(int(i))
        excluded |= _within(D[i], r_ch)
    heads = np.array(heads, dtype=int)
    members = [np.asarray(screened[h], dtype=int) for h in heads]
    return plan_from_members(members, n, n_min, heads, r_c)


def plan_from_members(members, n: int, n_min: int = 1, heads=None, r_c: float = float("nan")) -> ClusterPlan:
    """Assemble a plan from explicit member lists (cluster id = list position).

    Clusters smaller than ``n_min`` are marked skipped and left out of the
    sensor map and the overlap graph.
    """
    members = tuple(np.unique(np.asarray(m, dtype=int)) for m in members)
    if heads is None:
        heads = np.array([m[0] if m.size else -1 for m in members], dtype=int)
    skipped = np.array([m.size < n_min for m in members], dtype=bool)

    s2c = [[] for _ in range(n)]
    for cid, m in enumerate(members):
        if skipped[cid]:
            continue
        for j in m:
            s2c[j].append(cid)
    s2c = tuple(np.array(c, dtype=int) for c in s2c)
    unclustered = np.array([j for j in range(n) if s2c[j].size == 0], dtype=int)

    active = np.flatnonzero(~skipped)
    edges = []
    msets = [set(m.tolist()) for m in members]
    for x, c1 in enumerate(active):
        for c2 in active[x + 1:]:
            if msets[c1] & msets[c2]:
                edges.append((int(c1), int(c2)))
    edges = np.array(edges, dtype=int).reshape(-1, 2)
    return ClusterPlan(np.asarray(heads, dtype=int), members, skipped, s2c, edges, unclustered,
                       float(r_c), int(n_min))


@dataclass(frozen=True)
class SpectralSummary:
    lambda2: float
    d_max: int
    alpha: float
    rho_theoretical: float
    rho_theoretical_dmax: float
    connected: bool
    n_clusters: int
    eigenvalues: tuple = ()


def overlap_laplacian(plan: ClusterPlan) -> np.ndarray:
    """Unweighted Laplacian of the overlap graph restricted to active clusters."""
    active = plan.active
    pos = {int(c): k for k, c in enumerate(active)}
    m = active.size
    L = np.zeros((m, m))
    for c1, c2 in plan.overlap_edges:
        i, j = pos[int(c1)], pos[int(c2)]
        L[i, j] = L[j, i] = -1.0
    L[np.diag_indices(m)] = -L.sum(axis=1)
    return L


def laplacian_lambda2(plan: ClusterPlan, alpha: float = 0.5) -> SpectralSummary:
    """Algebraic connectivity of the overlap graph and the consensus rate bound.

    ``rho_theoretical`` uses the supplied step size; ``rho_theoretical_dmax``
    uses the step ``1 / d_max``, the largest one the rate bound admits.
    A disconnected graph reports ``lambda2 = 0`` and ``connected = False``.
    """
    if plan.n_active < 1:
        raise ValueError("no active clusters")
    L = overlap_laplacian(plan)
    w = np.linalg.eigvalsh(L)
    w = np.clip(w, 0.0, None)
    m = L.shape[0]
    lam2 = float(w[1]) if m > 1 else 0.0
    connected = _connected(plan)
    if not connected:
        lam2 = 0.0
    d_max = int(np.max(np.diag(L))) if m else 0
    rho_dmax = 1.0 - lam2 / d_max if d_max > 0 else 1.0
    return SpectralSummary(lam2, d_max, float(alpha), 1.0 - alpha * lam2, rho_dmax, connected, m,
                           tuple(float(v) for v in w))


def _connected(plan: ClusterPlan) -> bool:
    active = plan.active
    if active.size <= 1:
        return True
    parent = {int(c): int(c) for c in active}

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    for c1, c2 in plan.overlap_edges:
        parent[find(int(c1))] = find(int(c2))
    return len({find(int(c)) for c in active}) == 1
