"""Stage functions shared by the command line and the end-to-end tests."""

from __future__ import annotations

import json
import os
from collections import Counter
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .can_log import CanLog
from .channels import (
    ChannelId,
    FilterConfig,
    TimeSeries,
    estimate_rate,
    extract_channels,
    filter_channels,
    intersect_common,
    resample,
)
from .errors import EmptyDataset
from .evaluation import EvalReport, ExpertFeatures, FitConfig, Scenario, run_scenario
from .its import ItsConfig, ItsModel, build_its, train_its
from .mixture import ExpertBundle, FrozenExpert, rank_experts
from .nn.optim import OptimizerConfig
from .sampling import Pools, SampleSet, SplitSpec, balance, split_traces

Series = dict[str, dict[ChannelId, TimeSeries]]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 2
    max_per_class: int | None = None


@dataclass
class Extraction:
    series: Series
    manifest: list[tuple[ChannelId, float, int]]
    dropped: dict[str, list[ChannelId]]


def extract_cohort(logs: Mapping[str, CanLog], cfg: FilterConfig = FilterConfig()) -> Extraction:
    """Channels kept for every driver, resampled at one shared rate per channel.

    A channel's rate is the most common per-driver estimate (ties go to the
    higher rate). The manifest records the shortest resampled length.
    """
    raw = {d: extract_channels(log) for d, log in sorted(logs.items())}
    kept = {d: filter_channels(chs, cfg) for d, chs in raw.items()}
    common = sorted(intersect_common({d: k.keys() for d, k in kept.items()}))
    dropped = {d: sorted(set(raw[d]) - set(common)) for d in raw}
    series: Series = {d: {} for d in raw}
    manifest = []
    for ch in common:
        votes = Counter(estimate_rate(kept[d][ch]) for d in raw)
        rate = max(votes.items(), key=lambda kv: (kv[1], kv[0]))[0]
        for d in raw:
            series[d][ch] = resample(kept[d][ch], rate)
        manifest.append((ch, rate, min(len(series[d][ch]) for d in raw)))
    return Extraction(series, manifest, dropped)


def expert_training_sets(pools: Pools, seed: int, cap: int | None) -> tuple[SampleSet, SampleSet]:
    """Balanced all-drivers train and validation sets used by every expert."""
    if len(pools.validation) == 0:
        raise EmptyDataset("expert training needs a validation pool")
    return balance(pools.train, seed, cap), balance(pools.validation, seed + 1)


def _train_one(args) -> bytes:
    ch, rate, its_cfg, opt, tcfg, seed, train, validation = args
    model = build_its(its_cfg, rate, ch, seed)
    train_its(model, train, validation, opt, tcfg.batch_size, tcfg.max_epochs, tcfg.patience, seed)
    return model.to_bytes()


def channel_seed(seed: int, ch: ChannelId) -> int:
    return int(np.random.SeedSequence([seed, ch.can_id, ch.byte_offset]).generate_state(1)[0])


def train_experts(
    pools: Pools,
    channels: Sequence[ChannelId],
    its_cfg: ItsConfig,
    opt: OptimizerConfig = OptimizerConfig(),
    tcfg: TrainConfig = TrainConfig(),
    seed: int = 0,
    jobs: int = 1,
    log: Callable[..., None] | None = None,
) -> list[ItsModel]:
    """One ITS model per channel, all on the all-drivers labeling.

    Each channel gets its own seed derived from ``seed`` and the channel id,
    so results do not depend on ``jobs`` or completion order.
    """
    train, validation = expert_training_sets(pools, seed, tcfg.max_per_class)
    channels = sorted(channels)
    tasks = [
        (ch, train.rate(ch), its_cfg, opt, tcfg, channel_seed(seed, ch), train, validation)
        for ch in channels
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks), os.cpu_count() or 1)) as ex:
            blobs = list(ex.map(_train_one, tasks))
    else:
        blobs = [_train_one(t) for t in tasks]
    models = [ItsModel.from_bytes(b) for b in blobs]
    if log:
        for m in models:
            log(stage="its_done", channel=str(m.channel), val_accuracy=m.meta.val_accuracy,
                epochs=m.meta.epochs_run)
    return models


# -- on-disk series store -------------------------------------------------------

def save_series(directory: str | Path, series: Series) -> None:
    """One ``.npy`` per driver and channel plus an ``index.json`` with rates and origins."""
    directory = Path(directory)
    index = {}
    for d in sorted(series):
        (directory / d).mkdir(parents=True, exist_ok=True)
        entry = {}
        for ch, ts in sorted(series[d].items()):
            rel = f"{d}/{ch.slug}.npy"
            np.save(directory / rel, ts.values, allow_pickle=False)
            entry[str(ch)] = {"file": rel, "rate_hz": ts.rate_hz, "t0": ts.t0, "n": len(ts)}
        index[d] = entry
    (directory / "index.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_series(directory: str | Path) -> Series:
    directory = Path(directory)
    index = json.loads((directory / "index.json").read_text(encoding="utf-8"))
    series: Series = {}
    for d, entry in sorted(index.items()):
        series[d] = {}
        for name, info in sorted(entry.items()):
            ch = ChannelId.parse(name)
            values = np.load(directory / info["file"], allow_pickle=False)
            series[d][ch] = TimeSeries(ch, float(info["rate_hz"]), values, float(info["t0"]))
    return series


# -- in-process end-to-end run ---------------------------------------------------

@dataclass
class RunResult:
    extraction: Extraction
    pools: Pools
    experts: list[ItsModel]
    ranked: list[ItsModel]
    bundle: ExpertBundle
    reports: dict[str, EvalReport]
    expert_bytes_before: dict[ChannelId, bytes]
    expert_bytes_after: dict[ChannelId, bytes]

    @property
    def frozen(self) -> bool:
        return self.expert_bytes_before == self.expert_bytes_after


def run_end_to_end(
    logs: Mapping[str, CanLog],
    spec: SplitSpec,
    its_cfg: ItsConfig,
    scenarios: Sequence[Scenario],
    k: int = 10,
    seed: int = 0,
    tcfg: TrainConfig = TrainConfig(),
    fit: FitConfig = FitConfig(),
    opt: OptimizerConfig = OptimizerConfig(),
    filter_cfg: FilterConfig = FilterConfig(),
    channels: Sequence[ChannelId] | None = None,
    log: Callable[..., None] | None = None,
) -> RunResult:
    """extract -> split -> experts -> top-k mixture -> scenarios, in memory."""
    ex = extract_cohort(logs, filter_cfg)
    pools = split_traces(ex.series, spec)
    chans = [m[0] for m in ex.manifest] if channels is None else list(channels)
    experts = train_experts(pools, chans, its_cfg, opt, tcfg, seed, log=log)
    before = {m.channel: m.to_bytes() for m in experts}
    ranked = rank_experts(experts, k)
    bundle = ExpertBundle(tuple(FrozenExpert(m) for m in ranked))
    feats = ExpertFeatures.compute(bundle, pools)
    reports = {}
    for s in scenarios:
        key = s.kind if s.kind != "many_vs_all" else f"many_vs_all_m{s.group_size}"
        reports[key] = run_scenario(feats, s, fit)
    after = {m.channel: m.to_bytes() for m in experts}
    for e in bundle.experts:
        after[e.channel] = e.to_bytes()
    return RunResult(ex, pools, experts, ranked, bundle, reports, before, after)
