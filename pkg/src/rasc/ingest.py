"""Recording files, reference-subset folds and drift injection.

Recording format (UTF-8 CSV)::

    # rows=16 cols=16 rate_hz=4.241
    # any further comment lines
    frame,t_s,s_0_0,s_0_1,...,s_15_15
    0,0,22.0312,...

Sensor columns are row-major. Readings carry up to 9 significant digits; an
empty cell is a missing sample.
"""
from __future__ import annotations

import csv
import io
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DEFAULT_RATE_HZ, AffineParams, ArrayLayout, FrameSeries, default_timestamps
from .synth import derive_rng, true_field

DATA_DIR_ENV = "RASC_DATA_DIR"
QUANTUM = 1.0 / 256.0
_HEADER_RE = re.compile(r"^#\s*rows=(\d+)\s+cols=(\d+)\s+rate_hz=([0-9.eE+-]+)\s*$")


class RecordingFormatError(ValueError):
    def __init__(self, msg, line=None):
        super().__init__(msg if line is None else "line %d: %s" % (line, msg))
        self.line = line


@dataclass(frozen=True)
class RecordingHeader:
    rows: int
    cols: int
    rate_hz: float

    @property
    def columns(self):
        return ["frame", "t_s"] + ["s_%d_%d" % (r, c) for r in range(self.rows) for c in range(self.cols)]


def resolve_recording(path) -> Path:
    """``path`` as given, else relative to ``$RASC_DATA_DIR``."""
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    base = os.environ.get(DATA_DIR_ENV)
    if base and (Path(base) / p).exists():
        return Path(base) / p
    return p


def _fmt(v: float) -> str:
    return format(float(v), ".9g")


def dumps_recording(series: FrameSeries, rows: int, cols: int, rate_hz: float = DEFAULT_RATE_HZ,
                    comments=()) -> str:
    if series.n != rows * cols:
        raise ValueError("series has %d sensors, header says %d" % (series.n, rows * cols))
    hdr = RecordingHeader(rows, cols, rate_hz)
    buf = io.StringIO()
    buf.write("# rows=%d cols=%d rate_hz=%r\n" % (rows, cols, float(rate_hz)))
    for c in comments:
        buf.write("# %s\n" % c)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(hdr.columns)
    for t in range(series.T):
        vals = [_fmt(v) if p else "" for v, p in zip(series.readings[t], series.present[t])]
        w.writerow([t, repr(float(series.timestamps[t]))] + vals)
    return buf.getvalue()


def save_recording(path, series: FrameSeries, layout_or_rows, cols: int | None = None,
                   rate_hz: float = DEFAULT_RATE_HZ, comments=()) -> Path:
    if isinstance(layout_or_rows, ArrayLayout):
        rows, cols = layout_or_rows.rows, layout_or_rows.cols
    else:
        rows = int(layout_or_rows)
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(dumps_recording(series, rows, cols, rate_hz, comments), encoding="utf-8")
    return p


def loads_recording(text: str) -> tuple:
    """Parse recording text into ``(layout, series, header)``."""
    lines = text.splitlines()
    if not lines:
        raise RecordingFormatError("empty file", 1)
    m = _HEADER_RE.match(lines[0])
    if not m:
        raise RecordingFormatError("expected '# rows=R cols=C rate_hz=H'", 1)
    hdr = RecordingHeader(int(m.group(1)), int(m.group(2)), float(m.group(3)))
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        i += 1
    if i >= len(lines):
        raise RecordingFormatError("missing column header", i + 1)
    cols = next(csv.reader([lines[i]]))
    if cols != hdr.columns:
        raise RecordingFormatError("column header does not match %dx%d grid (%d columns, expected %d)"
                                   % (hdr.rows, hdr.cols, len(cols), len(hdr.columns)), i + 1)
    n = hdr.rows * hdr.cols
    ts, vals, pres = [], [], []
    for ln, row in enumerate(csv.reader(lines[i + 1:]), start=i + 2):
        if not row:
            continue
        if len(row) != n + 2:
            raise RecordingFormatError("expected %d fields, got %d" % (n + 2, len(row)), ln)
        try:
            t = float(row[1])
            v = [float(x) if x.strip() else np.nan for x in row[2:]]
        except ValueError as e:
            raise RecordingFormatError(str(e), ln) from None
        if ts and not t > ts[-1]:
            raise RecordingFormatError("timestamps must be strictly increasing", ln)
        v = np.array(v)
        if np.any(np.isinf(v)) or not np.isfinite(t):
            raise RecordingFormatError("non-finite value", ln)
        ts.append(t)
        pres.append(np.isfinite(v))
        vals.append(np.nan_to_num(v, nan=0.0))
    if not ts:
        raise RecordingFormatError("no frames", len(lines))
    series = FrameSeries(np.array(ts), np.array(vals), np.array(pres))
    return ArrayLayout.grid(hdr.rows, hdr.cols), series, hdr


def load_recording(path) -> tuple:
    """Read a recording file; returns ``(layout, series)``."""
    layout, series, _ = loads_recording(resolve_recording(path).read_text(encoding="utf-8"))
    return layout, series


def read_header(path) -> RecordingHeader:
    return loads_recording(resolve_recording(path).read_text(encoding="utf-8"))[2]


@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    references: tuple
    seed: int
    rho: float


def make_folds(n_or_layout, rho: float, k: int = 10, seed: int = 0) -> FoldPlan:
    """``k`` independent uniform reference-set draws of size ``floor(rho * n)``.

    Rounding down keeps 12 of 256 sensors at 5%, the count used for recorded
    arrays; synthetic worlds round to nearest instead.
    """
    n = n_or_layout.n if isinstance(n_or_layout, ArrayLayout) else int(n_or_layout)
    if not 0 < rho <= 1:
        raise ValueError("rho must lie in (0, 1]")
    size = int(np.floor(rho * n + 1e-9))
    if size < 1:
        raise ValueError("rho * n rounds to zero references")
    if k < 1:
        raise ValueError("need at least one fold")
    rng = derive_rng(seed, "folds")
    refs = tuple(np.sort(rng.choice(n, size, replace=False)) for _ in range(k))
    return FoldPlan(k, refs, seed, rho)


def inject_drift(series: FrameSeries, gain_range=(0.9, 1.1), offset_range=(-2.0, 2.0),
                 seed: int = 0) -> tuple:
    """Apply per-sensor ``a * y + b`` on top of recorded readings.

    Returns the corrupted series and the injected parameters.
    """
    rng = derive_rng(seed, "drift")
    gain = rng.uniform(*gain_range, size=series.n)
    offset = rng.uniform(*offset_range, size=series.n)
    p = AffineParams(gain, offset)
    y = np.where(series.present, series.readings * gain + offset, 0.0)
    return FrameSeries(series.timestamps, y, series.present), p


def quantize(series: FrameSeries, step: float = QUANTUM) -> FrameSeries:
    return FrameSeries(series.timestamps, np.round(series.readings / step) * step, series.present)


@dataclass(frozen=True)
class StandInSpec:
    """Drift-free recording that stands in for a real array capture."""

    rows: int = 16
    cols: int = 16
    frames: int = 600
    rate_hz: float = DEFAULT_RATE_HZ
    noise_sd: float = 0.092
    base: float = 22.0
    spatial_amp: float = 0.2
    temporal_amp: float = 0.08
    period_s: float = 600.0
    quantize: bool = False
    seed: int = 0


def make_standin(spec: StandInSpec = StandInSpec()) -> tuple:
    """Returns ``(layout, series, field)`` for a clean synthetic capture."""
    layout = ArrayLayout.grid(spec.rows, spec.cols)
    ts = default_timestamps(spec.frames, spec.rate_hz)
    x = true_field(layout, ts, spec.period_s, spec.base, spec.spatial_amp, spec.temporal_amp)
    y = x + derive_rng(spec.seed, "standin-noise").normal(0.0, spec.noise_sd, size=x.shape)
    s = FrameSeries(ts, y)
    if spec.quantize:
        s = quantize(s)
    return layout, s, x
