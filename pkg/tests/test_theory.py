import math

import pytest

from rasc.theory import breakdown_sweep, monotone_within


@pytest.mark.parametrize("k", [5, 9, 10, 13, 25])
def test_breakdown_flips_at_trim_count_plus_one(k):
    at, past = breakdown_sweep(k, 0.2, trials=300, seed=k)
    g = math.floor(0.2 * k + 1e-9)
    assert at.replaced == g and past.replaced == g + 1
    assert at.bounded == at.trials and at.exceeded == 0
    assert past.exceeded == past.trials
    if k <= 10:
        assert at.trials == math.comb(k, g)


def test_breakdown_deterministic():
    assert breakdown_sweep(13, seed=4, trials=50) == breakdown_sweep(13, seed=4, trials=50)


def test_monotone_within():
    assert monotone_within([3, 2, 2, 1], 0.0)
    assert not monotone_within([3, 2, 2.01, 1], 1e-3)
    assert monotone_within([3, 2, 2.0005, 1], 1e-3)
    assert monotone_within([1.0], 0.0) and monotone_within([], 0.0)
