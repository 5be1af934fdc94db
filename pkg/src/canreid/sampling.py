"""Sliding-window samples, segmentation and train/validation/test pools.

A sample is a time interval ``[t_start, t_start + duration)`` of one driver's
trace. Every channel's window is cut from that same interval, so a sample
is aligned across channels even when channel rates differ. Samples are
kept as (driver, t_start) pairs and windows are cut on demand.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .channels import ChannelId, TimeSeries, seconds_to_points
from .errors import (
    EmptyClass,
    MissingChannel,
    SampleTooShort,
    TraceTooShort,
    WindowTooLong,
)

Series = Mapping[str, Mapping[ChannelId, TimeSeries]]


def make_windows(n_total: int, n: int, shift: int) -> list[tuple[int, int]]:
    """All windows ``[1 + m*shift, n + m*shift]`` (1-based, inclusive) inside ``1..n_total``."""
    if n < 1 or shift < 1:
        raise ValueError("window length and shift must be >= 1")
    if n > n_total:
        raise WindowTooLong(f"window of {n} points exceeds series of {n_total}")
    return [(1 + s, n + s) for s in range(0, n_total - n + 1, shift)]


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    validation_fraction: float = 0.1
    shift: float = 0.1
    sample_duration: float = 60.0
    seed: int = 0
    # cap on per-class training samples after balancing; None keeps the min-class size
    max_per_class: int | None = None

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.shift <= 0:
            raise ValueError("shift must be positive")
        if self.sample_duration <= 0:
            raise ValueError("sample_duration must be positive")


@dataclass(frozen=True)
class Sample:
    label: str
    t_start: float
    duration: float
    windows: Mapping[ChannelId, np.ndarray]


@dataclass(frozen=True)
class SegmentedSample:
    label: str
    seg_len: float
    segments: Mapping[ChannelId, np.ndarray]  # channel -> (k, points per segment)

    @property
    def k(self) -> int:
        return next(iter(self.segments.values())).shape[0]


def n_segments(duration: float, seg_len: float) -> int:
    return int(math.floor(duration / seg_len + 1e-9))


def segment_array(windows: np.ndarray, rate_hz: float, duration: float, seg_len: float) -> np.ndarray:
    """Reshape ``(..., n)`` windows into ``(..., k, seg_points)``, dropping the tail."""
    k = n_segments(duration, seg_len)
    if k < 1:
        raise SampleTooShort(f"{duration}s sample is shorter than a {seg_len}s segment")
    p = seconds_to_points(seg_len, rate_hz)
    if k * p > windows.shape[-1]:
        raise SampleTooShort(f"{windows.shape[-1]} points cannot hold {k} segments of {p}")
    return windows[..., : k * p].reshape(*windows.shape[:-1], k, p)


def segment(sample: Sample, seg_len: float, rates: Mapping[ChannelId, float]) -> SegmentedSample:
    if sample.duration + 1e-9 < seg_len:
        raise SampleTooShort(f"{sample.duration}s sample is shorter than {seg_len}s segments")
    segs = {
        ch: segment_array(w, rates[ch], sample.duration, seg_len) for ch, w in sample.windows.items()
    }
    return SegmentedSample(sample.label, seg_len, segs)


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Labeled samples referencing per-driver series.

    ``driver_idx[i]`` indexes ``drivers`` and ``labels[i]`` indexes ``classes``.
    """

    series: Series
    drivers: tuple[str, ...]
    driver_idx: np.ndarray
    t_start: np.ndarray
    labels: np.ndarray
    classes: tuple[str, ...]
    duration: float

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def channels(self) -> set[ChannelId]:
        sets = [set(self.series[d]) for d in self.drivers]
        return set.intersection(*sets) if sets else set()

    def rate(self, ch: ChannelId) -> float:
        try:
            return self.series[self.drivers[0]][ch].rate_hz
        except KeyError:
            raise MissingChannel(f"driver {self.drivers[0]} has no channel {ch}") from None

    def subset(self, idx) -> SampleSet:
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(
            self.series, self.drivers, self.driver_idx[idx], self.t_start[idx],
            self.labels[idx], self.classes, self.duration,
        )

    def relabel(self, labels: np.ndarray, classes: Sequence[str]) -> SampleSet:
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != self.labels.shape:
            raise ValueError("relabel needs one label per sample")
        return SampleSet(
            self.series, self.drivers, self.driver_idx, self.t_start,
            labels, tuple(classes), self.duration,
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=len(self.classes))

    def windows(self, ch: ChannelId, idx=None) -> np.ndarray:
        """Stacked ``(B, n)`` windows of channel ``ch`` for samples ``idx``."""
        if idx is None:
            idx = np.arange(len(self))
        idx = np.asarray(idx, dtype=np.int64)
        rate = self.rate(ch)
        n = seconds_to_points(self.duration, rate)
        out = np.empty((len(idx), n))
        for d, name in enumerate(self.drivers):
            sel = np.nonzero(self.driver_idx[idx] == d)[0]
            if not len(sel):
                continue
            try:
                ts = self.series[name][ch]
            except KeyError:
                raise MissingChannel(f"driver {name} has no channel {ch}") from None
            if ts.rate_hz != rate:
                raise ValueError(f"{ch}: rate differs between drivers")
            starts = np.floor((self.t_start[idx[sel]] - ts.t0) * rate + 0.5 + 1e-9).astype(np.int64)
            # rounding can push the final window one point past the end
            over = starts + n - len(ts.values)
            if np.any(over > 1) or np.any(starts < -1):
                raise ValueError(f"{ch}: window outside the trace of {name}")
            starts = np.clip(starts, 0, len(ts.values) - n)
            out[sel] = ts.values[starts[:, None] + np.arange(n)]
        return out

    def segments(self, ch: ChannelId, seg_len: float, idx=None) -> np.ndarray:
        return segment_array(self.windows(ch, idx), self.rate(ch), self.duration, seg_len)

    def sample(self, i: int, channels: Sequence[ChannelId] | None = None) -> Sample:
        chans = sorted(self.channels) if channels is None else list(channels)
        return Sample(
            self.classes[self.labels[i]],
            float(self.t_start[i]),
            self.duration,
            {ch: self.windows(ch, [i])[0] for ch in chans},
        )


@dataclass(frozen=True)
class Regions:
    span: tuple[float, float]
    train: tuple[float, float]
    validation: tuple[float, float] | None
    test: tuple[float, float]


def common_span(series: Mapping[ChannelId, TimeSeries]) -> tuple[float, float]:
    if not series:
        raise TraceTooShort("driver has no channels")
    return max(ts.t0 for ts in series.values()), min(ts.t_end for ts in series.values())


def plan_regions(span: tuple[float, float], spec: SplitSpec) -> Regions:
    """Cut a trace span into train / validation / test intervals.

    The first ``train_fraction`` of the timeline feeds training, its trailing
    ``validation_fraction`` is validation, the rest is test. Windows never
    cross a boundary. Training and test windows are additionally kept one
    ``sample_duration`` apart: the validation interval provides that gap, and
    without validation an explicit gap is cut from the front of the test part.
    """
    t0, t1 = span
    d = spec.sample_duration
    total = t1 - t0
    # boundaries on the microsecond grid of the log timestamps
    fit_end = round(t0 + spec.train_fraction * total, 6)
    if spec.validation_fraction > 0:
        val_start = round(t0 + spec.train_fraction * (1 - spec.validation_fraction) * total, 6)
        validation = (val_start, fit_end)
        test = (fit_end, t1)
    else:
        val_start = fit_end
        validation = None
        test = (fit_end + d, t1)
    regions = Regions(span, (t0, val_start), validation, test)
    for name in ("train", "validation", "test"):
        r = getattr(regions, name)
        if r is not None and r[1] - r[0] + 1e-9 < d:
            raise TraceTooShort(
                f"{name} region [{r[0]:.3f}, {r[1]:.3f}) is shorter than a {d}s sample"
            )
    return regions


def window_starts(region: tuple[float, float], spec: SplitSpec) -> np.ndarray:
    """Starts ``a, a + shift, ...`` of every whole sample inside ``[a, b)``."""
    a, b = region
    room = b - a - spec.sample_duration
    if room < -1e-9:
        raise TraceTooShort(f"region [{a}, {b}) too short for {spec.sample_duration}s samples")
    count = int(math.floor(max(room, 0.0) / spec.shift + 1e-9)) + 1
    return a + np.arange(count, dtype=np.float64) * spec.shift


@dataclass
class Pools:
    train: SampleSet
    validation: SampleSet
    test: SampleSet
    regions: dict[str, Regions] = field(default_factory=dict)
    spec: SplitSpec = field(default_factory=SplitSpec)


def split_traces(series: Series, spec: SplitSpec, drivers: Sequence[str] | None = None) -> Pools:
    """Build the training, validation and test pools, labeled by driver."""
    drivers = tuple(sorted(series) if drivers is None else drivers)
    regions = {name: plan_regions(common_span(series[name]), spec) for name in drivers}

    def pool(part: str) -> SampleSet:
        didx, starts = [], []
        for d, name in enumerate(drivers):
            region = getattr(regions[name], part)
            s = window_starts(region, spec) if region is not None else np.empty(0)
            starts.append(s)
            didx.append(np.full(len(s), d, dtype=np.int64))
        didx_a = np.concatenate(didx)
        return SampleSet(
            series, drivers, didx_a, np.concatenate(starts), didx_a.copy(), drivers, spec.sample_duration
        )

    return Pools(pool("train"), pool("validation"), pool("test"), regions, spec)


def balanced_indices(labels: np.ndarray, n_classes: int, seed: int, cap: int | None = None) -> np.ndarray:
    """Sorted indices giving every class exactly min-class-size members."""
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=n_classes)
    if np.any(counts == 0):
        empty = np.nonzero(counts == 0)[0].tolist()
        raise EmptyClass(f"classes without samples: {empty}")
    m = int(counts.min()) if cap is None else min(int(counts.min()), cap)
    rng = np.random.default_rng(seed)
    picked = [
        rng.choice(np.nonzero(labels == c)[0], size=m, replace=False) for c in range(n_classes)
    ]
    return np.sort(np.concatenate(picked))


def balance(pool: SampleSet, seed: int, cap: int | None = None) -> SampleSet:
    return pool.subset(balanced_indices(pool.labels, len(pool.classes), seed, cap))


def one_vs_all(pool: SampleSet, target: str) -> SampleSet:
    """Binary relabeling: ``target`` -> 1, every other driver -> 0."""
    t = pool.drivers.index(target)
    labels = (pool.driver_idx == t).astype(np.int64)
    return pool.relabel(labels, ("rest", target))


def group_vs_rest(pool: SampleSet, group: Sequence[str]) -> SampleSet:
    """Group members keep their own class; everyone else shares an "other" class.

    When the group covers every driver there is no "other" class.
    """
    group = list(group)
    pos = {pool.drivers.index(g): i for i, g in enumerate(group)}
    other = len(group)
    labels = np.array([pos.get(int(d), other) for d in pool.driver_idx], dtype=np.int64)
    classes = tuple(group) if len(group) == len(pool.drivers) else (*group, "other")
    return pool.relabel(labels, classes)


def write_split_manifest(path: str | Path, pools: Pools) -> None:
    doc = {
        "format_version": 1,
        "spec": asdict(pools.spec),
        "drivers": {name: asdict(r) for name, r in sorted(pools.regions.items())},
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_split_manifest(path: str | Path) -> tuple[SplitSpec, dict[str, Regions]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    spec = SplitSpec(**doc["spec"])
    regions = {}
    for name, r in doc["drivers"].items():
        val = r["validation"]
        regions[name] = Regions(
            tuple(r["span"]), tuple(r["train"]), tuple(val) if val is not None else None, tuple(r["test"])
        )
    return spec, regions
