"""Command-line frontend: one subcommand per pipeline stage.

All stages share one JSON config with a mandatory global ``seed``; flags
override individual values. Artifacts are written under ``--out`` and
progress goes to stderr as ``key=value`` lines.

Exit codes: 0 success, 1 user error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from . import synthetic
from .can_log import read_log, save_log
from .channels import ChannelId, FilterConfig, write_manifest
from .checks import run_gradchecks
from .drivers import read_metas, write_metas
from .errors import CanReidError, ConfigError, DataError, IntegrityError
from .evaluation import (
    EvalReport,
    ExpertFeatures,
    FitConfig,
    Scenario,
    attribute_report,
    fit_and_score,
    run_scenario,
)
from .its import ItsConfig, ItsModel
from .mixture import DEFAULT_K, ExpertBundle, FrozenExpert, rank_experts
from .nn import io as nnio
from .nn.optim import OptimizerConfig
from .pipeline import TrainConfig, extract_cohort, load_series, save_series, train_experts
from .sampling import Pools, SplitSpec, read_split_manifest, split_traces, write_split_manifest

EXIT_OK, EXIT_USER, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
DEFAULT_SCENARIOS = [{"kind": "one_vs_all"}, {"kind": "all_vs_all"}]


def log(**fields) -> None:
    print(" ".join(f"{k}={v}" for k, v in fields.items()), file=sys.stderr, flush=True)


def write_atomic(path: Path, data: bytes | str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data.encode("utf-8") if isinstance(data, str) else data)
    os.replace(tmp, path)


# -- configuration ----------------------------------------------------------------

def build(cls, values: dict | None, section: str, **fixed):
    values = dict(values or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {', '.join(unknown)}")
    values.update(fixed)
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


class Config:
    """Resolved settings for one run."""

    SECTIONS = ("seed", "out", "synth", "inputs", "metas", "filter", "split", "its",
                "optimizer", "training", "mixture", "scenarios")

    def __init__(self, doc: dict, base: Path):
        unknown = sorted(set(doc) - set(self.SECTIONS))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "seed" not in doc or not isinstance(doc["seed"], int):
            raise ConfigError("a global integer seed is mandatory (config 'seed' or --seed)")
        if not doc.get("out"):
            raise ConfigError("no output directory (config 'out' or --out)")
        self.doc = doc
        self.seed = doc["seed"]
        self.base = base
        self.out = self.path(doc["out"])
        self.filter = build(FilterConfig, doc.get("filter"), "filter")
        self.split = build(SplitSpec, doc.get("split"), "split", seed=self.seed)
        self.its = doc.get("its") or {}
        self.optimizer = build(OptimizerConfig, doc.get("optimizer"), "optimizer")
        self.training = build(TrainConfig, doc.get("training"), "training")
        mix = dict(doc.get("mixture") or {})
        self.k = int(mix.pop("k", DEFAULT_K))
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        self.fit = build(FitConfig, mix, "mixture", opt=self.optimizer)
        self.scenarios = [
            build(Scenario, s, "scenarios", duration=self.split.sample_duration, seed=s.get("seed", self.seed))
            for s in doc.get("scenarios", DEFAULT_SCENARIOS)
        ]

    def path(self, p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def its_config(self, n_classes: int) -> ItsConfig:
        return build(ItsConfig, self.its, "its", head="multiclass", n_classes=n_classes)


def set_leaf(doc: dict, item: str) -> None:
    """Apply ``a.b.c=value``; the value is read as JSON, else kept as a string."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    *parents, leaf = key.split(".")
    node = doc
    for part in parents:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set {key}: {part} is not a section")
    node[leaf] = value


def load_config(args) -> Config:
    doc, base = {}, Path.cwd()
    if args.config:
        path = Path(args.config)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    if args.out is not None:
        doc["out"] = str(Path(args.out).resolve())
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.duration is not None:
        doc.setdefault("split", {})["sample_duration"] = args.duration
    if args.k is not None:
        doc.setdefault("mixture", {})["k"] = args.k
    for item in args.set:
        set_leaf(doc, item)
    return Config(doc, base)


# -- shared loaders -----------------------------------------------------------------

def require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise ConfigError(f"{path} not found; run '{stage}' first")
    return path


def load_pools(cfg: Config) -> Pools:
    series = load_series(require(cfg.out / "series" / "index.json", "extract").parent)
    pools = split_traces(series, cfg.split)
    spec, regions = read_split_manifest(require(cfg.out / "split.json", "split"))
    if spec != cfg.split or regions != pools.regions:
        raise ConfigError("split.json does not match the current config; rerun 'split'")
    check_test_isolation(pools)
    return pools


def check_test_isolation(pools: Pools) -> None:
    """Every test sample must lie inside its driver's test region."""
    test = pools.test
    for d, name in enumerate(test.drivers):
        lo, hi = pools.regions[name].test
        starts = test.t_start[test.driver_idx == d]
        if len(starts) and (starts.min() < lo - 1e-9 or starts.max() + test.duration > hi + 1e-9):
            raise IntegrityError(f"test samples of {name} leave the test region")


def load_experts(cfg: Config) -> tuple[list[ItsModel], dict[str, str]]:
    """Models listed in ranking.txt, plus the sha256 of each model file."""
    ranking = require(cfg.out / "ranking.txt", "train-its")
    models, hashes = [], {}
    for line in ranking.read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        _, channel, _, _, sha = line.split()
        path = cfg.out / "models" / f"its_{ChannelId.parse(channel).slug}.json"
        raw = path.read_bytes()
        if nnio.sha256_bytes(raw) != sha:
            raise IntegrityError(f"{path.name} does not match its ranking entry")
        models.append(ItsModel.from_bytes(raw))
        hashes[str(path)] = sha
    if not models:
        raise ConfigError("ranking.txt lists no models")
    return models, hashes


def verify_frozen(hashes: dict[str, str], bundle: ExpertBundle) -> None:
    for path, sha in hashes.items():
        if nnio.sha256_file(path) != sha:
            raise IntegrityError(f"{path} changed during the run")
    for e in bundle.experts:
        if nnio.sha256_bytes(e.to_bytes()) != e.sha256:
            raise IntegrityError(f"expert {e.channel} changed in memory")


def top_bundle(cfg: Config) -> tuple[ExpertBundle, dict[str, str]]:
    models, hashes = load_experts(cfg)
    top = rank_experts(models, cfg.k)
    log(stage="experts", k=len(top), channels=",".join(str(m.channel) for m in top))
    return ExpertBundle(tuple(FrozenExpert(m) for m in top)), hashes


# -- commands ---------------------------------------------------------------------------

def cmd_synth(cfg: Config, args) -> None:
    s = cfg.doc.get("synth") or {}
    unknown = sorted(set(s) - {"n_drivers", "trace_duration", "separation", "layout"})
    if unknown:
        raise ConfigError(f"unknown keys in [synth]: {', '.join(unknown)}")
    layout = synthetic.BusLayout.load(cfg.path(s["layout"])) if s.get("layout") else synthetic.default_layout()
    cohort = synthetic.gen_cohort(
        int(s.get("n_drivers", 33)), layout, float(s.get("trace_duration", 30 * 60)), cfg.seed,
        float(s.get("separation", 1.0)),
    )
    for name, lg in cohort.logs.items():
        path = cfg.out / "logs" / f"{name}.log"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_log(lg, path)
        log(stage="synth", driver=name, frames=len(lg.frames))
    layout.save(cfg.out / "layout.json")
    write_metas(cfg.out / "metas.json", cohort.metas)
    profiles = [dataclasses.asdict(p) for p in cohort.profiles.values()]
    write_atomic(cfg.out / "profiles.json", json.dumps(profiles, indent=2) + "\n")


def input_paths(cfg: Config) -> dict[str, Path]:
    inputs = cfg.doc.get("inputs")
    if inputs:
        return {name: cfg.path(p) for name, p in sorted(inputs.items())}
    found = sorted((cfg.out / "logs").glob("*.log"))
    if not found:
        raise ConfigError("no inputs configured and no logs under <out>/logs")
    return {p.stem: p for p in found}


def cmd_extract(cfg: Config, args) -> None:
    logs, failures = {}, {}
    for name, path in input_paths(cfg).items():
        try:
            logs[name] = read_log(path, name)
            log(stage="parse", driver=name, frames=len(logs[name].frames))
        except FileNotFoundError:
            failures[name] = ConfigError(f"input not found: {path}")
        except (DataError, UnicodeDecodeError) as exc:
            failures[name] = DataError(f"{path}: {exc}")
    if failures:
        for name, exc in sorted(failures.items()):
            log(stage="extract_failed", driver=name, error=json.dumps(str(exc)))
        # a missing file is a user error; anything else is a data error
        raise next((e for e in failures.values() if isinstance(e, ConfigError)), next(iter(failures.values())))
    ex = extract_cohort(logs, cfg.filter)
    save_series(cfg.out / "series", ex.series)
    write_manifest(cfg.out / "manifest.txt", ex.manifest)
    dropped = {d: [str(c) for c in chs] for d, chs in ex.dropped.items()}
    write_atomic(cfg.out / "dropped.json", json.dumps(dropped, indent=1, sort_keys=True) + "\n")
    log(stage="extract", drivers=len(logs), channels=len(ex.manifest))


def cmd_split(cfg: Config, args) -> None:
    series = load_series(require(cfg.out / "series" / "index.json", "extract").parent)
    pools = split_traces(series, cfg.split)
    write_split_manifest(cfg.out / "split.json", pools)
    log(stage="split", train=len(pools.train), validation=len(pools.validation), test=len(pools.test))


def cmd_train_its(cfg: Config, args) -> None:
    pools = load_pools(cfg)
    channels = sorted(pools.train.channels)
    its_cfg = cfg.its_config(len(pools.train.drivers))
    models = train_experts(pools, channels, its_cfg, cfg.optimizer, cfg.training, cfg.seed, args.jobs, log)
    lines = ["# rank channel val_accuracy epochs sha256"]
    for rank, m in enumerate(rank_experts(models, None), 1):
        raw = m.to_bytes()
        write_atomic(cfg.out / "models" / f"its_{m.channel.slug}.json", raw)
        lines.append(f"{rank} {m.channel} {m.meta.val_accuracy!r} {m.meta.epochs_run} {nnio.sha256_bytes(raw)}")
    write_atomic(cfg.out / "ranking.txt", "\n".join(lines) + "\n")


def cmd_train_mixture(cfg: Config, args) -> None:
    pools = load_pools(cfg)
    bundle, hashes = top_bundle(cfg)
    feats = ExpertFeatures.compute(bundle, pools)
    acc, model = fit_and_score(feats, lambda pool: pool, "multiclass", cfg.fit, cfg.seed)
    verify_frozen(hashes, bundle)
    write_atomic(cfg.out / "mixture.json", model.to_bytes())
    log(stage="mixture", val_accuracy=model.meta.val_accuracy, test_accuracy=acc, epochs=model.meta.epochs_run)


def report_name(s: Scenario) -> str:
    group = f"_m{s.group_size}" if s.kind == "many_vs_all" else ""
    return f"{s.kind}{group}_{s.duration:g}s"


def cmd_eval(cfg: Config, args) -> None:
    pools = load_pools(cfg)
    bundle, hashes = top_bundle(cfg)
    feats = ExpertFeatures.compute(bundle, pools)
    metas_path = cfg.path(cfg.doc["metas"]) if cfg.doc.get("metas") else cfg.out / "metas.json"
    metas = read_metas(metas_path) if metas_path.exists() else None
    for s in cfg.scenarios:
        t = time.perf_counter()
        report = run_scenario(feats, s, cfg.fit)
        if s.kind == "one_vs_all" and metas is not None:
            report = attribute_report(report, metas)
        report.context = {"k": len(bundle.experts), "experts": [str(c) for c in bundle.channels]}
        name = report_name(s)
        report.save(cfg.out / "reports" / f"{name}.json", cfg.out / "reports" / f"{name}.csv")
        st = report.stats
        log(stage="eval", scenario=name, mean=round(st.mean, 4), std=round(st.std, 4),
            min=round(st.min, 4), max=round(st.max, 4), seconds=round(time.perf_counter() - t, 1))
    verify_frozen(hashes, bundle)


def cmd_gradcheck(cfg: Config | None, args) -> bool:
    results = run_gradchecks(args.seed or 0)
    for r in results:
        log(stage="gradcheck", layer=r.name, max_rel_error=f"{r.report.max_rel_error:.3e}",
            tolerance=r.report.tolerance, status="pass" if r.passed else "FAIL")
    if args.out:
        doc = {r.name: {"max_rel_error": r.report.max_rel_error, "tolerance": r.report.tolerance,
                        "passed": r.passed} for r in results}
        write_atomic(Path(args.out) / "gradcheck.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return all(r.passed for r in results)


COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "split": cmd_split,
    "train-its": cmd_train_its,
    "train-mixture": cmd_train_mixture,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USER)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="canreid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", help="output directory (overrides config 'out')")
        p.add_argument("--seed", type=int, help="global seed (overrides config 'seed')")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for train-its")
        p.add_argument("--duration", type=float, choices=(20.0, 60.0, 120.0), help="sample length in seconds")
        p.add_argument("--k", type=int, help="number of top experts in the mixture")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config leaf, e.g. training.max_epochs=5 (repeatable)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            return EXIT_OK if cmd_gradcheck(None, args) else EXIT_INTERNAL
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args)
        cfg.out.mkdir(parents=True, exist_ok=True)
        t = time.perf_counter()
        COMMANDS[args.command](cfg, args)
        log(stage="done", command=args.command, seconds=round(time.perf_counter() - t, 1))
        return EXIT_OK
    except ConfigError as exc:
        log(stage="error", kind="user", message=json.dumps(str(exc)))
        return EXIT_USER
    except DataError as exc:
        log(stage="error", kind="data", message=json.dumps(str(exc)))
        return EXIT_DATA
    except (IntegrityError, CanReidError) as exc:
        log(stage="error", kind="internal", message=json.dumps(str(exc)))
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the internal exit code
        log(stage="error", kind="internal", message=json.dumps(f"{type(exc).__name__}: {exc}"))
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
