"""Byte-channel discovery: (message id, byte offset) -> time series.

Every byte position of every message id becomes one channel. Channels that
are constant, too short or look like rolling counters are dropped; the rest
are resampled onto a uniform grid with zero-order hold and scaled to [0, 1].
"""

from __future__ import annotations

import math
from collections import defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .can_log import CanLog
from .errors import EmptyIntersection, TooFewPoints


@dataclass(frozen=True, order=True)
class ChannelId:
    can_id: int
    byte_offset: int

    def __post_init__(self):
        if not 0 <= self.byte_offset < 8:
            raise ValueError(f"byte_offset {self.byte_offset} outside 0..7")

    def __str__(self) -> str:
        return f"0x{self.can_id:04x}:{self.byte_offset}"

    @property
    def slug(self) -> str:
        return f"{self.can_id:04x}_{self.byte_offset}"

    @classmethod
    def parse(cls, text: str) -> ChannelId:
        cid, _, off = text.partition(":")
        return cls(int(cid, 16), int(off))


@dataclass(frozen=True, eq=False)
class RawChannel:
    id: ChannelId
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.timestamps) != len(self.values):
            raise ValueError("timestamps and values differ in length")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled channel; ``values[i]`` holds over ``t0 + i / rate_hz``."""

    id: ChannelId
    rate_hz: float
    values: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        if not self.rate_hz > 0:
            raise ValueError("rate_hz must be positive")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def t_end(self) -> float:
        """Exclusive end of the covered interval."""
        return self.t0 + len(self.values) / self.rate_hz


@dataclass(frozen=True)
class FilterConfig:
    min_points: int = 1000
    counter_fraction: float = 0.95


def seconds_to_points(seconds: float, rate_hz: float) -> int:
    """Convert a duration to a sample count, rounding half up."""
    return int(math.floor(seconds * rate_hz + 0.5 + 1e-9))


def extract_channels(log: CanLog) -> dict[ChannelId, RawChannel]:
    ts: dict[ChannelId, list[int]] = defaultdict(list)
    vals: dict[ChannelId, list[int]] = defaultdict(list)
    for frame in log.frames:
        for off, b in enumerate(frame.data):
            key = ChannelId(frame.can_id, off)
            ts[key].append(frame.timestamp_us)
            vals[key].append(b)
    return {
        key: RawChannel(
            key,
            np.asarray(ts[key], dtype=np.int64) / 1e6,
            np.asarray(vals[key], dtype=np.uint8),
        )
        for key in sorted(ts)
    }


def is_constant(ch: RawChannel) -> bool:
    return len(ch) == 0 or bool(np.all(ch.values == ch.values[0]))


def is_counter(ch: RawChannel, fraction: float = 0.95) -> bool:
    """True if one non-zero step (mod 256) explains >= ``fraction`` of deltas."""
    if len(ch) < 2:
        return False
    deltas = np.diff(ch.values.astype(np.int64)) % 256
    counts = np.bincount(deltas, minlength=256)
    counts[0] = 0
    return counts.max() >= fraction * len(deltas)


def filter_channels(
    chs: Mapping[ChannelId, RawChannel] | Iterable[RawChannel],
    cfg: FilterConfig = FilterConfig(),
) -> dict[ChannelId, RawChannel]:
    items = chs.values() if isinstance(chs, Mapping) else chs
    kept = {}
    for ch in items:
        if is_constant(ch) or len(ch) < cfg.min_points or is_counter(ch, cfg.counter_fraction):
            continue
        kept[ch.id] = ch
    return dict(sorted(kept.items()))


def intersect_common(channel_sets: Mapping[str, Iterable[ChannelId]]) -> set[ChannelId]:
    if not channel_sets:
        raise ValueError("need at least one driver")
    sets = [set(s) for s in channel_sets.values()]
    common = set.intersection(*sets)
    if not common:
        raise EmptyIntersection(
            f"no channel is shared by all {len(sets)} drivers: " + ", ".join(sorted(channel_sets))
        )
    return common


def estimate_rate(ch: RawChannel) -> float:
    """Nominal rate: 1 / median inter-arrival time, rounded to whole Hz (>= 1)."""
    if len(ch) < 2:
        raise TooFewPoints(f"{ch.id}: need >= 2 points to estimate a rate")
    period = float(np.median(np.diff(ch.timestamps)))
    if period <= 0:
        raise TooFewPoints(f"{ch.id}: median inter-arrival time is zero")
    return float(max(1, round(1.0 / period)))


def resample(ch: RawChannel, rate_hz: float) -> TimeSeries:
    """Zero-order hold onto ``t0, t0 + 1/rate, ...`` up to the last timestamp.

    Output length is ``round((t_end - t0) * rate) + 1``; values are bytes / 255.
    """
    if len(ch) < 2:
        raise TooFewPoints(f"{ch.id}: need >= 2 points to resample")
    if not rate_hz > 0:
        raise ValueError("rate_hz must be positive")
    rel = ch.timestamps - ch.timestamps[0]
    n = int(round(rel[-1] * rate_hz)) + 1
    grid = np.arange(n) / rate_hz
    # tolerance absorbs float error when a grid point coincides with a sample
    idx = np.searchsorted(rel, grid + 1e-9, side="right") - 1
    values = ch.values[np.clip(idx, 0, len(rel) - 1)].astype(np.float64) / 255.0
    return TimeSeries(ch.id, float(rate_hz), values, float(ch.timestamps[0]))


def write_manifest(path: str | Path, entries: Iterable[tuple[ChannelId, float, int]]) -> None:
    lines = [f"0x{cid.can_id:04x} {cid.byte_offset} {rate:g} {n}\n" for cid, rate, n in entries]
    Path(path).write_text("".join(lines), encoding="ascii")


def read_manifest(path: str | Path) -> list[tuple[ChannelId, float, int]]:
    out = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        if not line.strip():
            continue
        cid, off, rate, n = line.split()
        out.append((ChannelId(int(cid, 16), int(off)), float(rate), int(n)))
    return out
