import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rasc.core import FrameSeries, default_timestamps
from rasc.ingest import (RecordingFormatError, StandInSpec, dumps_recording, inject_drift, load_recording,
                         loads_recording, make_folds, make_standin, quantize, read_header, save_recording)
from rasc.metrics import field_rmse

FIXTURE = """# rows=2 cols=2 rate_hz=4.241
frame,t_s,s_0_0,s_0_1,s_1_0,s_1_1
0,0.0,21.5,22.25,20,19.125
1,0.2358,21.75,,20.5,19
"""


def test_handwritten_fixture():
    lay, s, hdr = loads_recording(FIXTURE)
    assert (lay.rows, lay.cols, hdr.rate_hz) == (2, 2, 4.241)
    assert s.timestamps.tolist() == [0.0, 0.2358]
    assert s.readings[0].tolist() == [21.5, 22.25, 20.0, 19.125]
    assert s.present.tolist() == [[True] * 4, [True, False, True, True]]
    assert s.readings[1, [0, 2, 3]].tolist() == [21.75, 20.5, 19.0]


def test_comment_lines_skipped():
    text = FIXTURE.replace("\nframe", "\n# captured on bench 3\nframe", 1)
    assert loads_recording(text)[1].T == 2


@pytest.mark.parametrize("text,line", [
    ("", 1),
    ("rows=2 cols=2\n", 1),
    (FIXTURE.replace("rows=2 cols=2", "rows=2 cols=3"), 2),
    (FIXTURE.replace("19.125", "19.125,7"), 3),
    (FIXTURE.replace("0.2358", "0.0"), 4),
    (FIXTURE.replace("20.5", "abc"), 4),
    (FIXTURE.replace("20.5", "inf"), 4),
    ("# rows=2 cols=2 rate_hz=4\n", 2),
])
def test_malformed_files_report_line(text, line):
    with pytest.raises(RecordingFormatError) as e:
        loads_recording(text)
    assert e.value.line == line


def _nine(v):
    return np.array([float(format(x, ".9g")) for x in np.ravel(v)]).reshape(np.shape(v))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.just(6)), elements=st.floats(-1e6, 1e6)),
       st.integers(0, 2**31 - 1))
def test_roundtrip_at_nine_digits(Y, seed):
    P = np.random.default_rng(seed).random(Y.shape) > 0.2
    s = FrameSeries(default_timestamps(Y.shape[0]), Y, P)
    text = dumps_recording(s, 2, 3)
    _, back, _ = loads_recording(text)
    assert np.array_equal(back.present, P)
    assert np.array_equal(back.readings[P], _nine(Y[P]))
    assert np.array_equal(back.timestamps, s.timestamps)
    # a second pass is exact
    assert dumps_recording(back, 2, 3) == text


def test_save_load_files(tmp_path, monkeypatch):
    lay, s, _ = make_standin(StandInSpec(rows=3, cols=4, frames=5))
    p = save_recording(tmp_path / "sub" / "rec.csv", s, lay, rate_hz=8.0, comments=["note"])
    lay2, s2 = load_recording(p)
    assert lay2 == lay and np.array_equal(s2.readings, _nine(s.readings))
    assert read_header(p).rate_hz == 8.0
    monkeypatch.setenv("RASC_DATA_DIR", str(tmp_path / "sub"))
    assert load_recording("rec.csv")[1].T == 5
    with pytest.raises(ValueError):
        dumps_recording(s, 2, 2)


def test_folds():
    f = make_folds(256, 0.05, 10, seed=3)
    assert f.k == 10 and all(len(r) == 12 for r in f.references)
    assert all(np.all(np.diff(r) > 0) for r in f.references)
    g = make_folds(256, 0.05, 10, seed=3)
    assert all(np.array_equal(a, b) for a, b in zip(f.references, g.references))
    assert len({tuple(r) for r in f.references}) > 1
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            make_folds(256, bad)
    with pytest.raises(ValueError):
        make_folds(10, 0.01)


def test_drift_examples():
    _, s, _ = make_standin(StandInSpec(rows=4, cols=4, frames=10))
    same, p = inject_drift(s, (1, 1), (0, 0))
    assert np.array_equal(same.readings, s.readings)
    out, p = inject_drift(s, (0.9, 1.1), (-2, 2), seed=5)
    assert np.all((p.gain >= 0.9) & (p.gain <= 1.1) & (p.offset >= -2) & (p.offset <= 2))
    assert np.allclose(out.readings, p.gain * s.readings + p.offset)


def test_drift_error_grows_with_offset_range():
    _, s, _ = make_standin(StandInSpec(frames=20))
    errs = [field_rmse(inject_drift(s, (1, 1), (-w, w), seed=2)[0].readings, s.readings)
            for w in (0.5, 1.0, 2.0, 4.0)]
    assert np.all(np.diff(errs) > 0)


def test_standin_and_quantize():
    lay, s, x = make_standin(StandInSpec(frames=50, seed=1))
    assert s.readings.shape == (50, 256) and x.shape == (50, 256)
    assert np.std(s.readings - x) == pytest.approx(0.092, rel=0.05)
    q = quantize(s)
    assert np.all(np.abs(q.readings * 256 - np.round(q.readings * 256)) < 1e-9)
    assert np.max(np.abs(q.readings - s.readings)) <= 1 / 512 + 1e-12
    lay2, s2, _ = make_standin(StandInSpec(frames=50, seed=1))
    assert s2.readings.tobytes() == s.readings.tobytes()
