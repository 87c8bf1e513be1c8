"""Synthetic world: smooth field, drifted sensors, reference draw and faults.

Every random consumer draws from its own named sub-stream of the run seed, so
adding a consumer later never perturbs existing draws.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import (DEFAULT_PITCH, DEFAULT_RATE_HZ, AffineParams, ArrayLayout, FrameSeries, References,
                   apply_forward, default_timestamps)


def derive_rng(seed: int, name: str) -> np.random.Generator:
    """Generator for the sub-stream ``name`` of root ``seed``."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(key,)))


def true_field(layout, timestamps, period_s: float = 600.0, base: float = 25.0,
               spatial_amp: float = 0.5, temporal_amp: float = 5.0) -> np.ndarray:
    """``base + A sin(pi u) cos(pi v) + B sin(2 pi t / period)`` on unit-square coords.

    ``layout`` is an ArrayLayout or an (n, 2) array of unit coordinates.
    Returns a T x n array; ``timestamps`` are seconds.
    """
    t = np.atleast_1d(np.asarray(timestamps, dtype=float))
    if isinstance(layout, ArrayLayout):
        uv = layout.unit_positions
    else:
        uv = np.asarray(layout, dtype=float).reshape(-1, 2)
    spatial = spatial_amp * np.sin(np.pi * uv[:, 0]) * np.cos(np.pi * uv[:, 1])
    temporal = temporal_amp * np.sin(2 * np.pi * t / period_s)
    return base + spatial[None, :] + temporal[:, None]


@dataclass(frozen=True)
class SimProtocol:
    grid: int = 16
    gain_range: tuple = (0.9, 1.1)
    offset_range: tuple = (-2.0, 2.0)
    noise_sd: float = 0.5
    frames: int = 30
    rate_hz: float = DEFAULT_RATE_HZ
    ref_fraction: float = 0.05
    seed: int = 0
    #: temporal period of the field counted in frames
    field_period_frames: float = 600.0
    pitch: float = DEFAULT_PITCH
    field_base: float = 25.0
    field_spatial_amp: float = 0.5
    field_temporal_amp: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "gain_range", tuple(float(v) for v in self.gain_range))
        object.__setattr__(self, "offset_range", tuple(float(v) for v in self.offset_range))
        if self.grid < 1 or self.frames < 1:
            raise ValueError("grid and frames must be positive")
        if not (self.gain_range[0] <= self.gain_range[1] and self.offset_range[0] <= self.offset_range[1]):
            raise ValueError("ranges must be ordered")
        if self.gain_range[0] <= 0:
            raise ValueError("gains must be positive")
        if self.noise_sd < 0 or not 0 <= self.ref_fraction <= 1:
            raise ValueError("bad noise_sd or ref_fraction")
        if not (self.rate_hz > 0 and self.field_period_frames > 0):
            raise ValueError("rate and period must be positive")

    @property
    def period_s(self) -> float:
        return self.field_period_frames / self.rate_hz


class World(NamedTuple):
    layout: ArrayLayout
    truth: AffineParams
    series: FrameSeries
    field: np.ndarray
    refs: References


def reference_count(n: int, fraction: float) -> int:
    return int(round(fraction * n))


def draw_references(n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    return np.sort(rng.choice(n, reference_count(n, fraction), replace=False))


def sample_world(protocol: SimProtocol = SimProtocol()) -> World:
    p = protocol
    layout = ArrayLayout.grid(p.grid, p.grid, p.pitch)
    n = layout.n
    rng = derive_rng(p.seed, "params")
    gain = rng.uniform(*p.gain_range, size=n)
    offset = rng.uniform(*p.offset_range, size=n)
    truth = AffineParams(gain, offset)
    ref_idx = draw_references(n, p.ref_fraction, derive_rng(p.seed, "refs"))
    layout = layout.with_references(ref_idx)
    ts = default_timestamps(p.frames, p.rate_hz)
    x = true_field(layout, ts, p.period_s, p.field_base, p.field_spatial_amp, p.field_temporal_amp)
    series = apply_forward(truth, x, p.noise_sd, derive_rng(p.seed, "noise"), ts)
    return World(layout, truth, series, x, References.from_params(truth, ref_idx))


@dataclass(frozen=True)
class FaultSpec:
    node_failure_rate: float = 0.0
    packet_loss_rate: float = 0.0
    seed: int = 0
    #: failed nodes keep reporting garbage instead of going silent
    babbling: bool = False

    def __post_init__(self):
        for v in (self.node_failure_rate, self.packet_loss_rate):
            if not 0.0 <= v <= 1.0:
                raise ValueError("fault rates must lie in [0, 1]")


def inject_faults(series: FrameSeries, spec: FaultSpec) -> FrameSeries:
    """Silence failed nodes and drop packets.

    Failure and loss use one uniform per sensor and per sample thresholded at
    the rate, so with a fixed seed a higher rate never restores a sample.
    """
    if spec.node_failure_rate == 0 and spec.packet_loss_rate == 0:
        return series
    T, n = series.readings.shape
    u_node = derive_rng(spec.seed, "node-failure").random(n)
    u_pkt = derive_rng(spec.seed, "packet-loss").random((T, n))
    failed = u_node < spec.node_failure_rate
    lost = u_pkt < spec.packet_loss_rate
    present = series.present & ~lost
    readings = series.readings
    if spec.babbling:
        junk = derive_rng(spec.seed, "babble").uniform(-50.0, 100.0, size=(T, n))
        readings = np.where(failed[None, :], junk, readings)
        present = np.where(failed[None, :], series.present & ~lost, present & ~failed[None, :])
    else:
        present = present & ~failed[None, :]
    return FrameSeries(series.timestamps, readings, present)
