"""Executable checks of the convergence and robustness guarantees."""
from __future__ import annotations

from itertools import combinations
from typing import NamedTuple

import numpy as np

from .robust import trim_count, trimmed_mean

BREAKDOWN_BOUND = 1e6


class BreakdownVerdict(NamedTuple):
    k: int
    replaced: int
    trials: int
    bounded: int
    exceeded: int


def _positions(k: int, m: int, trials: int, rng, exhaustive_upto: int):
    if k <= exhaustive_upto:
        return list(combinations(range(k), m))
    return [tuple(rng.choice(k, m, replace=False)) for _ in range(trials)]


def breakdown_sweep(k: int, gamma: float = 0.2, trials: int = 1000, seed: int = 0,
                    exhaustive_upto: int = 10, bound: float = BREAKDOWN_BOUND) -> tuple:
    """Replace ``floor(gamma k)`` and ``floor(gamma k) + 1`` inliers by adversarial values.

    Returns one verdict for each replacement count. With ``floor(gamma k)``
    replacements (random huge values of either sign) the trimmed mean must
    stay within the range of the surviving inliers; with one more, all pushed
    the same way, it must move past ``bound``. Positions are enumerated
    exhaustively for ``k <= exhaustive_upto`` and sampled otherwise.
    """
    rng = np.random.default_rng(seed)
    g = trim_count(k, gamma)
    out = []
    for m in (g, g + 1):
        pos = _positions(k, m, trials, rng, exhaustive_upto) if m > 0 else [()]
        bounded = exceeded = 0
        for p in pos:
            v = rng.normal(25.0, 1.0, size=k)
            keep = np.setdiff1d(np.arange(k), p)
            if m == g:
                v[list(p)] = rng.choice([-1.0, 1.0], size=m) * 10.0 ** rng.uniform(7, 12, size=m)
            else:
                # enough mass that one surviving value drags the mean past the bound
                v[list(p)] = bound * k * 10.0
            tm = trimmed_mean(v, gamma)
            inl = v[keep]
            if inl.min() <= tm <= inl.max():
                bounded += 1
            if abs(tm) > bound:
                exceeded += 1
        out.append(BreakdownVerdict(k, m, len(pos), bounded, exceeded))
    return tuple(out)


def monotone_within(seq, slack: float) -> bool:
    s = np.asarray(seq, dtype=float)
    return bool(np.all(np.diff(s) <= slack)) if s.size > 1 else True
