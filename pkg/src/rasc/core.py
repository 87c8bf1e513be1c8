"""Shared domain types and the affine sensor model.

Every sensor reports ``y = a * x + b + noise`` for the local field value ``x``.
Positions live on a regular grid with a fixed cell pitch so that the neighbourhood
radius means the same number of cells at every array scale.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

#: Cell pitch in normalized length units; the default neighbourhood radius 0.10
#: therefore spans two pitches at every array size.
DEFAULT_PITCH = 0.05
DEFAULT_RATE_HZ = 4.241


class InvalidParamsError(ValueError):
    """Raised for non-finite parameters or non-positive gains."""


class EmptySampleError(ValueError):
    """Raised when a statistic is requested on no data."""


class Status(enum.IntEnum):
    REFERENCE = 0
    CALIBRATED = 1
    FALLBACK = 2


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ArrayLayout:
    """Grid geometry plus the set of trusted reference sensors.

    Sensor ``i`` sits at row ``i // cols``, column ``i % cols`` (row-major), at
    ``((c + 0.5) * pitch, (r + 0.5) * pitch)``.
    """

    rows: int
    cols: int
    pitch: float = DEFAULT_PITCH
    reference_set: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid needs at least one row and one column")
        if not self.pitch > 0:
            raise ValueError("pitch must be positive")
        refs = frozenset(int(i) for i in self.reference_set)
        if refs and (min(refs) < 0 or max(refs) >= self.n):
            raise ValueError("reference index out of range")
        object.__setattr__(self, "reference_set", refs)
        r, c = np.divmod(np.arange(self.n), self.cols)
        object.__setattr__(self, "_rc", _frozen(np.c_[r, c], int))
        object.__setattr__(self, "_pos", _frozen(np.c_[(c + 0.5) * self.pitch, (r + 0.5) * self.pitch]))

    @classmethod
    def grid(cls, rows: int, cols: int | None = None, pitch: float = DEFAULT_PITCH,
             reference_set: Iterable[int] = ()) -> "ArrayLayout":
        return cls(rows, rows if cols is None else cols, pitch, frozenset(reference_set))

    def with_references(self, reference_set: Iterable[int]) -> "ArrayLayout":
        return ArrayLayout(self.rows, self.cols, self.pitch, frozenset(reference_set))

    @property
    def n(self) -> int:
        return self.rows * self.cols

    @property
    def positions(self) -> np.ndarray:
        return self._pos

    @property
    def unit_positions(self) -> np.ndarray:
        """Positions rescaled so the array spans the unit square."""
        return self._pos / np.array([self.cols * self.pitch, self.rows * self.pitch])

    @property
    def row_col(self) -> np.ndarray:
        return self._rc

    @property
    def references(self) -> np.ndarray:
        return np.array(sorted(self.reference_set), dtype=int)

    @property
    def reference_mask(self) -> np.ndarray:
        m = np.zeros(self.n, dtype=bool)
        m[self.references] = True
        return m

    def __eq__(self, other):
        if not isinstance(other, ArrayLayout):
            return NotImplemented
        return (self.rows, self.cols, self.pitch, self.reference_set) == (
            other.rows, other.cols, other.pitch, other.reference_set)

    def __hash__(self):
        return hash((self.rows, self.cols, self.pitch, self.reference_set))


@dataclass(frozen=True, eq=False)
class AffineParams:
    """Per-sensor gain (dimensionless) and offset (deg C)."""

    gain: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        g = _frozen(np.atleast_1d(self.gain))
        o = _frozen(np.atleast_1d(self.offset))
        if g.shape != o.shape or g.ndim != 1:
            raise InvalidParamsError("gain and offset must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(o))):
            raise InvalidParamsError("parameters must be finite")
        if np.any(g <= 0):
            raise InvalidParamsError("gains must be strictly positive")
        object.__setattr__(self, "gain", g)
        object.__setattr__(self, "offset", o)

    @classmethod
    def identity(cls, n: int) -> "AffineParams":
        return cls(np.ones(n), np.zeros(n))

    @property
    def n(self) -> int:
        return self.gain.size

    def subset(self, idx) -> "AffineParams":
        return AffineParams(self.gain[idx], self.offset[idx])

    def __eq__(self, other):
        if not isinstance(other, AffineParams):
            return NotImplemented
        return np.array_equal(self.gain, other.gain) and np.array_equal(self.offset, other.offset)


class References(NamedTuple):
    """Known parameters of the anchor sensors."""

    index: np.ndarray
    gain: np.ndarray
    offset: np.ndarray

    @classmethod
    def from_params(cls, params: AffineParams, index) -> "References":
        index = np.array(sorted(int(i) for i in index), dtype=int)
        return cls(index, params.gain[index].copy(), params.offset[index].copy())

    @classmethod
    def factory(cls, index) -> "References":
        """Anchors trusted to still hold factory values (gain 1, offset 0)."""
        index = np.array(sorted(int(i) for i in index), dtype=int)
        return cls(index, np.ones(index.size), np.zeros(index.size))


@dataclass(frozen=True, eq=False)
class FrameSeries:
    """T x n readings with timestamps in seconds and a delivery mask."""

    timestamps: np.ndarray
    readings: np.ndarray
    present: np.ndarray = None

    def __post_init__(self):
        ts = _frozen(self.timestamps)
        y = _frozen(np.atleast_2d(self.readings))
        p = np.ones(y.shape, dtype=bool) if self.present is None else np.array(self.present, dtype=bool)
        if ts.ndim != 1 or ts.size != y.shape[0]:
            raise ValueError("need one timestamp per frame")
        if p.shape != y.shape:
            raise ValueError("present mask must match readings")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if np.any(~np.isfinite(y[p])):
            raise ValueError("delivered samples must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "readings", y)
        object.__setattr__(self, "present", p)

    @property
    def T(self) -> int:
        return self.readings.shape[0]

    @property
    def n(self) -> int:
        return self.readings.shape[1]

    def masked(self) -> np.ndarray:
        """Readings with undelivered samples replaced by NaN."""
        return np.where(self.present, self.readings, np.nan)

    def window(self, start: int = 0, stop: int | None = None) -> "FrameSeries":
        sl = slice(start, stop)
        return FrameSeries(self.timestamps[sl], self.readings[sl], self.present[sl])


@dataclass(frozen=True, eq=False)
class CalibState:
    params: AffineParams
    status: np.ndarray

    def __post_init__(self):
        st = _frozen(self.status, np.int8)
        if st.shape != self.params.gain.shape:
            raise ValueError("one status per sensor")
        object.__setattr__(self, "status", st)

    def count(self, status: Status) -> int:
        return int(np.sum(self.status == status))


def default_timestamps(T: int, rate_hz: float = DEFAULT_RATE_HZ) -> np.ndarray:
    return np.arange(T) / rate_hz


def apply_forward(params: AffineParams, field: np.ndarray, noise_sd: float,
                  rng_seed=0, timestamps=None) -> FrameSeries:
    """Synthesize readings ``a * field + b + N(0, noise_sd^2)``.

    ``rng_seed`` may be an integer, a ``SeedSequence`` or a ``Generator``.
    """
    if not isinstance(params, AffineParams):
        params = AffineParams(*params)
    field = np.atleast_2d(np.asarray(field, dtype=float))
    if field.shape[1] != params.n:
        raise ValueError("field has %d sensors, params have %d" % (field.shape[1], params.n))
    if not np.all(np.isfinite(field)):
        raise ValueError("field must be finite")
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    y = params.gain * field + params.offset
    if noise_sd > 0:
        y = y + np.random.default_rng(rng_seed).normal(0.0, noise_sd, size=field.shape)
    if timestamps is None:
        timestamps = default_timestamps(field.shape[0])
    return FrameSeries(timestamps, y)


def apply_inverse(params: AffineParams, series: FrameSeries) -> np.ndarray:
    """Calibrated field ``(y - b) / a``; undelivered samples come back as NaN."""
    return (series.masked() - params.offset) / params.gain


def gauge_distance(est: AffineParams, truth: AffineParams, field_mean: float) -> np.ndarray:
    """Predicted-output error ``|da * field_mean + db|`` per sensor."""
    return np.abs((est.gain - truth.gain) * field_mean + (est.offset - truth.offset))
