import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rasc.core import ArrayLayout
from rasc.synth import FaultSpec, SimProtocol, derive_rng, inject_faults, reference_count, sample_world, true_field


def test_field_examples():
    assert true_field([[0.5, 0.5]], [0.0])[0, 0] == pytest.approx(25.0, abs=1e-12)
    assert true_field([[0.5, 0.0]], [0.0])[0, 0] == pytest.approx(25.5, abs=1e-12)
    uv = np.random.default_rng(0).random((20, 2))
    spatial = true_field(uv, [0.0])[0] - 25.0
    assert np.allclose(true_field(uv, [150.0])[0], 25.0 + spatial + 5.0, atol=1e-12)
    lay = ArrayLayout.grid(1)
    assert true_field(lay, [0.0])[0, 0] == pytest.approx(25.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 12), st.lists(st.floats(0, 1e5), min_size=1, max_size=10))
def test_field_bounds(grid, ts):
    x = true_field(ArrayLayout.grid(grid), ts)
    assert x.shape == (len(ts), grid * grid)
    assert np.all((x >= 19.5 - 1e-12) & (x <= 30.5 + 1e-12))


def test_sub_streams_are_independent_and_stable():
    a = derive_rng(3, "params").random(4)
    assert np.array_equal(a, derive_rng(3, "params").random(4))
    assert not np.array_equal(a, derive_rng(3, "noise").random(4))
    assert not np.array_equal(a, derive_rng(4, "params").random(4))


def test_seed_repeat_bit_identical():
    w1, w2 = sample_world(SimProtocol(seed=9)), sample_world(SimProtocol(seed=9))
    assert w1.series.readings.tobytes() == w2.series.readings.tobytes()
    assert w1.truth == w2.truth
    assert w1.refs.index.tolist() == w2.refs.index.tolist()
    w3 = sample_world(SimProtocol(seed=10))
    assert not np.array_equal(w1.series.readings, w3.series.readings)


def test_changing_noise_leaves_params_and_refs():
    """Named sub-streams: the noise level does not perturb the parameter draw."""
    w1 = sample_world(SimProtocol(seed=2, noise_sd=0.5))
    w2 = sample_world(SimProtocol(seed=2, noise_sd=0.0))
    assert w1.truth == w2.truth and w1.refs.index.tolist() == w2.refs.index.tolist()


@pytest.mark.parametrize("grid", [8, 16, 32])
def test_world_shapes_and_ranges(grid):
    w = sample_world(SimProtocol(grid=grid, seed=grid))
    n = grid * grid
    assert w.series.readings.shape == (30, n) and w.field.shape == (30, n)
    assert np.all((w.truth.gain >= 0.9) & (w.truth.gain <= 1.1))
    assert np.all((w.truth.offset >= -2) & (w.truth.offset <= 2))
    assert len(w.refs.index) == reference_count(n, 0.05) == round(0.05 * n)
    assert np.array_equal(w.layout.references, w.refs.index)
    assert np.allclose(np.diff(w.series.timestamps), 1 / 4.241)


def test_uncalibrated_rmse_matches_table():
    r = []
    for seed in range(30):
        w = sample_world(SimProtocol(seed=seed))
        r.append(np.sqrt(np.mean((w.series.readings - w.field) ** 2)))
    assert 1.7 <= np.mean(r) <= 2.3


def test_protocol_validation():
    for bad in ({"gain_range": (1.1, 0.9)}, {"gain_range": (0, 1)}, {"noise_sd": -1}, {"ref_fraction": 2},
                {"grid": 0}):
        with pytest.raises(ValueError):
            SimProtocol(**bad)
    with pytest.raises(ValueError):
        FaultSpec(node_failure_rate=1.5)


def test_fault_examples():
    s = sample_world(SimProtocol(grid=8)).series
    assert inject_faults(s, FaultSpec()) is s
    dead = inject_faults(s, FaultSpec(node_failure_rate=1.0))
    assert not dead.present.any()
    assert dead.readings.tobytes() == s.readings.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.integers(0, 1000))
def test_masking_monotone(f1, f2, l1, l2, seed):
    s = sample_world(SimProtocol(grid=8, frames=10)).series
    lo = inject_faults(s, FaultSpec(min(f1, f2), min(l1, l2), seed))
    hi = inject_faults(s, FaultSpec(max(f1, f2), max(l1, l2), seed))
    assert not np.any(hi.present & ~lo.present)


@pytest.mark.parametrize("rate", [0.05, 0.3, 0.6])
def test_loss_rate_within_three_sigma(rate):
    s = sample_world(SimProtocol(grid=32, frames=30)).series
    out = inject_faults(s, FaultSpec(packet_loss_rate=rate, seed=4))
    m = out.present.size
    lost = m - out.present.sum()
    assert abs(lost - rate * m) <= 3 * np.sqrt(m * rate * (1 - rate))


def test_failed_nodes_silent_for_all_frames():
    s = sample_world(SimProtocol(grid=16)).series
    out = inject_faults(s, FaultSpec(node_failure_rate=0.3, seed=1))
    col = out.present.any(axis=0)
    dead = ~col
    assert dead.sum() > 0
    assert abs(dead.mean() - 0.3) <= 3 * np.sqrt(0.3 * 0.7 / s.n)
    babble = inject_faults(s, FaultSpec(node_failure_rate=0.3, seed=1, babbling=True))
    assert babble.present.all()
    assert not np.array_equal(babble.readings[:, dead], s.readings[:, dead])
