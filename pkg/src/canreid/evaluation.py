"""Classification scenarios and accuracy statistics.

Experts are frozen, so their features are computed once per pool and shared
by every scenario; each scenario only relabels samples and fits a fresh
decision layer on top.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .drivers import DriverMeta
from .errors import EmptyInput, MissingMeta, NotEnoughSubsets
from .mixture import ExpertBundle, MixtureModel, fit_features
from .nn.optim import OptimizerConfig
from .sampling import Pools, SampleSet, balanced_indices, group_vs_rest, one_vs_all

KINDS = ("one_vs_all", "many_vs_all", "all_vs_all")
ATTRIBUTES = ("gender", "age", "experience")


def accuracy(predictions, labels) -> float:
    """Fraction of predictions equal to the labels; ``(TP + TN) / All`` for binary."""
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    if predictions.size == 0:
        raise EmptyInput("accuracy of an empty set")
    return float(np.mean(predictions == labels))


@dataclass(frozen=True)
class Stats:
    mean: float
    std: float
    max: float
    min: float
    n: int

    @classmethod
    def of(cls, values: Sequence[float]) -> Stats:
        v = np.asarray(values, dtype=np.float64)
        if v.size == 0:
            raise EmptyInput("no accuracies to aggregate")
        return cls(float(v.mean()), float(v.std()), float(v.max()), float(v.min()), int(v.size))


@dataclass(frozen=True)
class Scenario:
    kind: str
    duration: float = 60.0
    group_size: int | None = None
    trials: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown scenario {self.kind!r}")
        if self.kind == "many_vs_all" and (self.group_size is None or self.group_size < 1):
            raise ValueError("many_vs_all needs a group_size >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass
class EvalReport:
    scenario: Scenario
    accuracies: dict[str, float]
    groups: dict[str, list[str]] = field(default_factory=dict)
    attributes: dict[str, dict[str, Stats]] = field(default_factory=dict)
    context: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, a in self.accuracies.items():
            if not 0 <= a <= 1:
                raise ValueError(f"accuracy of {k} outside [0, 1]: {a}")

    @property
    def stats(self) -> Stats:
        return Stats.of(list(self.accuracies.values()))

    @property
    def mean(self) -> float:
        return self.stats.mean

    @property
    def std(self) -> float:
        return self.stats.std

    @property
    def max(self) -> float:
        return self.stats.max

    @property
    def min(self) -> float:
        return self.stats.min

    def to_dict(self) -> dict:
        doc = {
            "scenario": asdict(self.scenario),
            "seed": self.scenario.seed,
            "accuracies": dict(sorted(self.accuracies.items())),
            "aggregate": asdict(self.stats),
        }
        if self.groups:
            doc["groups"] = dict(sorted(self.groups.items()))
        if self.context:
            doc["context"] = self.context
        if self.attributes:
            doc["attributes"] = {
                a: {v: asdict(s) for v, s in sorted(vals.items())} for a, vals in sorted(self.attributes.items())
            }
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model_id", "accuracy"])
        for k, a in sorted(self.accuracies.items()):
            w.writerow([k, repr(a)])
        return buf.getvalue()

    def save(self, json_path: str | Path, csv_path: str | Path | None = None) -> None:
        Path(json_path).parent.mkdir(parents=True, exist_ok=True)
        Path(json_path).write_text(self.to_json(), encoding="utf-8")
        if csv_path is not None:
            Path(csv_path).write_text(self.to_csv(), encoding="utf-8")


@dataclass(frozen=True)
class FitConfig:
    """Decision-layer training settings shared by all scenarios."""

    opt: OptimizerConfig = OptimizerConfig()
    batch_size: int = 64
    max_epochs: int = 20
    patience: int = 2
    dropout_rate: float = 0.25
    max_per_class: int | None = None


@dataclass
class ExpertFeatures:
    """Frozen expert features for every sample of every pool, in pool order."""

    bundle: ExpertBundle
    pools: Pools
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    @classmethod
    def compute(cls, bundle: ExpertBundle, pools: Pools) -> ExpertFeatures:
        def feats(pool: SampleSet) -> np.ndarray:
            return bundle.features(pool) if len(pool) else np.empty((0, bundle.dim))
        return cls(bundle, pools, feats(pools.train), feats(pools.validation), feats(pools.test))

    @property
    def drivers(self) -> tuple[str, ...]:
        return self.pools.train.drivers


def _sub_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


def fit_and_score(
    feats: ExpertFeatures,
    relabel,
    head: str,
    cfg: FitConfig,
    seed: int,
) -> tuple[float, MixtureModel]:
    """Relabel the pools, train a decision layer and score it on every test window.

    Training and validation sets are balanced; the test set keeps all
    available windows, so its class proportions match the data.
    """
    parts = {}
    for i, name in enumerate(("train", "validation")):
        pool = relabel(getattr(feats.pools, name))
        cap = cfg.max_per_class if name == "train" else None
        idx = balanced_indices(pool.labels, len(pool.classes), _sub_seed(seed, i), cap)
        parts[name] = (getattr(feats, name)[idx], pool.labels[idx])
        classes = pool.classes
    test = relabel(feats.pools.test)
    parts["test"] = (feats.test, test.labels)
    model = MixtureModel(feats.bundle, head, len(classes), cfg.dropout_rate, seed)
    fit_features(model, *parts["train"], *parts["validation"], cfg.opt,
                 cfg.batch_size, cfg.max_epochs, cfg.patience, seed)
    x_test, y_test = parts["test"]
    pred = np.argmax(model.proba_features(x_test), axis=1)
    return accuracy(pred, y_test), model


def run_one_vs_all(feats: ExpertFeatures, scenario: Scenario, cfg: FitConfig = FitConfig()) -> EvalReport:
    """One binary mixture per driver: the driver against everyone else."""
    drivers = feats.drivers
    if len(drivers) < 2:
        raise ValueError("one-vs-all needs at least 2 drivers")
    accs = {}
    for i, d in enumerate(drivers):
        acc, _ = fit_and_score(
            feats, lambda pool, d=d: one_vs_all(pool, d), "binary", cfg, _sub_seed(scenario.seed, i)
        )
        accs[d] = acc
    return EvalReport(scenario, accs)


def choose_groups(drivers: Sequence[str], m: int, trials: int, seed: int) -> list[tuple[str, ...]]:
    """``trials`` distinct m-subsets drawn uniformly with a seeded generator."""
    n = len(drivers)
    if not 1 <= m <= n:
        raise ValueError(f"group size {m} not in [1, {n}]")
    if m == n:
        return [tuple(drivers)]
    total = math.comb(n, m)
    if trials > total:
        raise NotEnoughSubsets(f"only {total} groups of {m} among {n} drivers, {trials} requested")
    rng = np.random.default_rng(seed)
    if total <= 100_000:
        combos = list(itertools.combinations(range(n), m))
        picks = rng.choice(total, size=trials, replace=False)
        chosen = [combos[p] for p in picks]
    else:
        seen, chosen = set(), []
        while len(chosen) < trials:
            c = tuple(sorted(rng.choice(n, size=m, replace=False).tolist()))
            if c not in seen:
                seen.add(c)
                chosen.append(c)
    return [tuple(drivers[i] for i in c) for c in chosen]


def run_many_vs_all(feats: ExpertFeatures, scenario: Scenario, cfg: FitConfig = FitConfig()) -> EvalReport:
    """One multiclass mixture per random group: each member plus a pooled "other" class."""
    drivers = feats.drivers
    m = len(drivers) if scenario.kind == "all_vs_all" else scenario.group_size
    groups = choose_groups(drivers, m, scenario.trials, scenario.seed)
    accs, members = {}, {}
    for t, group in enumerate(groups):
        acc, _ = fit_and_score(
            feats, lambda pool, g=group: group_vs_rest(pool, g), "multiclass", cfg,
            _sub_seed(scenario.seed, 1_000_000 + t),
        )
        key = f"trial_{t:03d}"
        accs[key] = acc
        members[key] = list(group)
    return EvalReport(scenario, accs, members)


def run_scenario(feats: ExpertFeatures, scenario: Scenario, cfg: FitConfig = FitConfig()) -> EvalReport:
    if scenario.kind == "one_vs_all":
        return run_one_vs_all(feats, scenario, cfg)
    return run_many_vs_all(feats, scenario, cfg)


def attribute_report(report: EvalReport, metas: Mapping[str, DriverMeta]) -> EvalReport:
    """Group per-driver 1-vs-all accuracies by gender, age bracket and experience."""
    missing = sorted(set(report.accuracies) - set(metas))
    if missing:
        raise MissingMeta(f"no metadata for {missing}")
    attrs: dict[str, dict[str, Stats]] = {}
    for attr in ATTRIBUTES:
        groups: dict[str, list[float]] = {}
        for d, acc in report.accuracies.items():
            groups.setdefault(getattr(metas[d], attr), []).append(acc)
        attrs[attr] = {v: Stats.of(a) for v, a in groups.items()}
    return EvalReport(report.scenario, dict(report.accuracies), dict(report.groups), attrs, dict(report.context))
