import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rasc.core import AffineParams, ArrayLayout
from rasc.metrics import (RunReport, byte_accounting, edge_mask, field_rmse, fit_geometric_rate, nonsmooth_residual,
                          param_and_gauge_errors, peak_to_peak)

vals = st.floats(-100, 100, allow_nan=False)


def test_rmse_examples():
    x = np.random.default_rng(0).normal(size=(4, 5))
    assert field_rmse(x, x) == 0
    assert field_rmse(x + 1, x) == pytest.approx(1.0)
    p = np.ones_like(x, bool)
    p[0] = False
    y = x.copy()
    y[0] += 50
    assert field_rmse(y, x, p) == 0
    assert np.isnan(field_rmse(x, x, np.zeros_like(p)))
    with pytest.raises(ValueError):
        field_rmse(x, x[:2])


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, (3, 4), elements=vals), arrays(np.float64, (3, 4), elements=vals),
       arrays(np.float64, (3, 4), elements=vals))
def test_rmse_triangle(x, y, z):
    assert field_rmse(x, z) <= field_rmse(x, y) + field_rmse(y, z) + 1e-9


def test_peak_to_peak_examples():
    assert peak_to_peak(np.full((3, 4), 7.0)) == 0
    assert peak_to_peak(np.array([[20.0, 20.5, 21.0]])) == 1.0
    f = np.array([[0.0, 4.0], [1.0, 1.0]])
    assert peak_to_peak(f) == 2.0
    assert peak_to_peak(f, np.array([[True, False], [True, True]])) == 0.0


def test_nonsmooth_examples():
    lay = ArrayLayout.grid(6)
    flat = np.full(36, 22.0)
    ns = nonsmooth_residual(flat, lay)
    assert ns.overall == 0 and np.all(ns.per_sensor == 0)
    bump = flat.copy()
    bump[14] += 1
    ns = nonsmooth_residual(bump, lay)
    assert ns.per_sensor[14] == 1.0
    assert np.all(np.abs(np.delete(ns.per_sensor, 14)) <= 1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-50, 50), st.floats(-2, 2), st.floats(-2, 2), st.integers(3, 10))
def test_nonsmooth_invariances(c, gr, gc, size):
    lay = ArrayLayout.grid(size)
    base = np.random.default_rng(size).normal(0, 1, lay.n)
    d0 = nonsmooth_residual(base, lay).per_sensor
    d1 = nonsmooth_residual(base + c, lay).per_sensor
    assert np.allclose(d0, d1, atol=1e-9 * (1 + abs(c)))
    rc = lay.row_col
    ramp = c + gr * rc[:, 0] + gc * rc[:, 1]
    d = nonsmooth_residual(ramp, lay).per_sensor.reshape(size, size)
    assert np.max(np.abs(d[1:-1, 1:-1])) <= 1e-9 * (1 + abs(c) + 10 * (abs(gr) + abs(gc)))


def test_edge_interior_partition():
    m = edge_mask(16, 16)
    assert m.sum() == 4 * 16
    r = np.arange(256) // 16
    assert set(r[m]) == {0, 1, 14, 15}


def test_byte_accounting():
    assert byte_accounting(64, 30, 16, 10)[1] == 38_400
    assert byte_accounting(256, 30, 60, 10)[1] == 153_600
    assert byte_accounting(1024, 30, 0, 0)[1] == 614_400
    rasc, central = byte_accounting(256, 30, 63, 10)
    assert rasc == 256 * 30 * 4 + 16 * 256 + 8 * 63 * 10
    assert 3.5 <= central / rasc <= 5.0


def test_param_and_gauge_errors():
    t = AffineParams([1.0, 1.1, 0.9], [0.0, 1.0, -1.0])
    assert param_and_gauge_errors(t, t, 25.0) == (0.0, 0.0, 0.0)
    e = AffineParams(t.gain, t.offset + 0.5)
    pe = param_and_gauge_errors(e, t, 25.0)
    assert pe.offset_rmse == pytest.approx(0.5) and pe.gauge_rms == pytest.approx(0.5)
    # movement along the gauge line leaves the gauge error at zero
    g = AffineParams(t.gain + 0.1, t.offset - 2.5)
    pe = param_and_gauge_errors(g, t, 25.0, exclude=[0])
    assert pe.gauge_rms == pytest.approx(0.0, abs=1e-12) and pe.offset_rmse == pytest.approx(2.5)


def test_rate_examples():
    k = np.arange(12)
    assert fit_geometric_rate(3.0 + 0.5 ** k).rate == pytest.approx(0.5, abs=1e-6)
    f = fit_geometric_rate(np.full(8, 1.0))
    assert not f.ok and np.isnan(f.rate)
    assert not fit_geometric_rate([1.0, 0.5]).ok


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(-5, 5), st.floats(0.01, 10), st.integers(4, 15))
def test_rate_recovers_geometric(rho, e_inf, c, K):
    e = e_inf + c * rho ** np.arange(K)
    f = fit_geometric_rate(e)
    if f.ok:
        assert f.rate == pytest.approx(rho, rel=1e-5)


def test_report_columns():
    cols = RunReport.columns()
    assert cols[0] == "field_rmse" and "wall_time" in cols
    assert set(RunReport().as_dict()) == set(cols)
