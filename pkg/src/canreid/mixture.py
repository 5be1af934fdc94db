"""Top-K frozen experts joined by one trainable dense decision layer."""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .channels import ChannelId
from .errors import EmptyDataset, InconsistentExperts, IntegrityError
from .its import ItsModel, TrainingMeta, accuracy_of, early_stopping, nll
from .nn import functional as F
from .nn import io as nnio
from .nn.layers import Dense, Dropout
from .nn.optim import OptimizerConfig, rmsprop_step
from .sampling import SampleSet

DEFAULT_K = 10


def rank_experts(models: Sequence[ItsModel], k: int | None = DEFAULT_K) -> list[ItsModel]:
    """Best validation accuracy first; ties go to the lower (can_id, offset)."""
    def key(m: ItsModel):
        acc = m.meta.val_accuracy
        ch = m.channel
        return (-(acc if acc is not None else -1.0), (ch.can_id, ch.byte_offset) if ch else (-1, -1))

    ranked = sorted(models, key=key)
    return ranked if k is None else ranked[:k]


class FrozenExpert:
    """An ITS model without its output layer, locked to inference mode.

    Holds a private copy of the expert whose arrays are read-only, so no
    later training step can touch the original weights.
    """

    def __init__(self, its: ItsModel):
        self.source_bytes = its.to_bytes()
        self.sha256 = nnio.sha256_bytes(self.source_bytes)
        self._model = ItsModel.from_bytes(self.source_bytes)
        for arr in self._model.state().values():
            arr.flags.writeable = False
        self.channel = its.channel
        self.seg_len = its.cfg.seg_len
        self.dim = its.cfg.fc_units
        self.rate_hz = its.plan.rate_hz
        self.val_accuracy = its.meta.val_accuracy

    def __call__(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        if len(x) == 0:
            return np.empty((0, self.dim))
        return np.concatenate([
            self._model.features(x[i:i + batch_size], train=False) for i in range(0, len(x), batch_size)
        ])

    def to_bytes(self) -> bytes:
        return self._model.to_bytes()


def strip_head(its: ItsModel) -> FrozenExpert:
    return FrozenExpert(its)


@dataclass(frozen=True)
class ExpertBundle:
    experts: tuple[FrozenExpert, ...]

    def __post_init__(self):
        if not self.experts:
            raise InconsistentExperts("a mixture needs at least one expert")
        if any(e.channel is None for e in self.experts):
            raise InconsistentExperts("every expert must be bound to a channel")
        if len({e.seg_len for e in self.experts}) != 1:
            raise InconsistentExperts("experts disagree on the segment length")
        if len({e.channel for e in self.experts}) != len(self.experts):
            raise InconsistentExperts("duplicate expert channels")

    @property
    def channels(self) -> list[ChannelId]:
        return [e.channel for e in self.experts]

    @property
    def dim(self) -> int:
        return sum(e.dim for e in self.experts)

    def features(self, data: SampleSet, idx=None) -> np.ndarray:
        """Concatenated expert features ``(N, sum of fc_units)`` in bundle order."""
        return np.concatenate(
            [e(data.segments(e.channel, e.seg_len, idx)) for e in self.experts], axis=1
        )


class MixtureModel:
    def __init__(self, experts: ExpertBundle, head: str, n_classes: int,
                 dropout_rate: float = 0.25, seed: int = 0):
        if head not in ("binary", "multiclass"):
            raise ValueError(f"unknown head {head!r}")
        if n_classes < 2 or (head == "binary" and n_classes != 2):
            raise ValueError("binary heads have 2 classes, multiclass heads at least 2")
        self.experts = experts
        self.head = head
        self.n_classes = n_classes
        self.dropout_rate = dropout_rate
        self.meta = TrainingMeta(seed=seed)
        rng = np.random.default_rng(seed)
        self.drop = Dropout(dropout_rate, rng)
        self.layer = Dense(experts.dim, 1 if head == "binary" else n_classes, "none", rng)
        # a single softmax/logistic layer is convex, so nothing needs breaking
        # symmetry; starting at zero leaves no random bias for the short
        # training budget to undo
        self.layer.weight.value[...] = 0.0

    def params(self):
        return {f"mixture.{k}": p for k, p in self.layer.params().items()}

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.value for k, p in self.params().items()}

    def snapshot(self):
        return {k: v.copy() for k, v in self.state().items()}

    def restore(self, state) -> None:
        for k, v in self.state().items():
            v[...] = state[k]

    def loss_kind(self) -> str:
        return "binary" if self.head == "binary" else "categorical"

    def forward_features(self, feats: np.ndarray, train: bool = False) -> np.ndarray:
        z = self.layer.forward(self.drop.forward(feats, train), train)
        return z[:, 0] if self.head == "binary" else z

    def backward(self, dlogits: np.ndarray) -> None:
        if self.head == "binary":
            dlogits = dlogits.reshape(-1, 1)
        self.layer.backward(dlogits)

    def proba_features(self, feats: np.ndarray) -> np.ndarray:
        z = self.forward_features(feats, train=False)
        if self.head == "binary":
            p = F.sigmoid(z)
            return np.stack([1 - p, p], axis=1)
        return F.softmax(z, axis=1)

    def predict_proba(self, data: SampleSet, idx=None) -> np.ndarray:
        return self.proba_features(self.experts.features(data, idx))

    def predict(self, data: SampleSet, idx=None) -> np.ndarray:
        return np.argmax(self.predict_proba(data, idx), axis=1)

    # -- persistence -----------------------------------------------------------

    def architecture(self) -> dict:
        return {
            "head": self.head,
            "n_classes": self.n_classes,
            "dropout_rate": self.dropout_rate,
            "experts": [{"channel": str(e.channel), "sha256": e.sha256} for e in self.experts.experts],
        }

    def to_bytes(self) -> bytes:
        return nnio.dumps("mixture", self.architecture(), self.state(), asdict(self.meta))

    @classmethod
    def from_bytes(cls, raw: bytes, expert_source: Mapping[str, bytes] | Callable[[str, str], bytes]) -> MixtureModel:
        """Rebuild a mixture; ``expert_source`` maps a channel string to the expert file bytes.

        Raises IntegrityError if an expert's content hash differs from the
        one recorded at training time.
        """
        kind, arch, tensors, meta = nnio.loads(raw)
        if kind != "mixture":
            raise ValueError(f"not a mixture file (kind={kind!r})")
        experts = []
        for ref in arch["experts"]:
            blob = expert_source(ref["channel"], ref["sha256"]) if callable(expert_source) else expert_source[ref["channel"]]
            digest = nnio.sha256_bytes(blob)
            if digest != ref["sha256"]:
                raise IntegrityError(f"expert {ref['channel']} changed: {digest} != {ref['sha256']}")
            experts.append(FrozenExpert(ItsModel.from_bytes(blob)))
        model = cls(ExpertBundle(tuple(experts)), arch["head"], arch["n_classes"],
                    arch["dropout_rate"], meta.get("seed", 0))
        model.restore(tensors)
        model.meta = TrainingMeta(**meta)
        return model


def load_mixture(path: str | Path, model_dir: str | Path) -> MixtureModel:
    """Load a mixture file whose experts live in ``model_dir`` as ``its_<slug>.json``."""
    model_dir = Path(model_dir)

    def source(channel: str, sha: str) -> bytes:
        return (model_dir / f"its_{ChannelId.parse(channel).slug}.json").read_bytes()

    return MixtureModel.from_bytes(Path(path).read_bytes(), source)


def build_mixture(experts: Sequence[ItsModel] | ExpertBundle, head: str, n_classes: int,
                  dropout_rate: float = 0.25, seed: int = 0) -> MixtureModel:
    if not isinstance(experts, ExpertBundle):
        experts = ExpertBundle(tuple(FrozenExpert(e) for e in experts))
    return MixtureModel(experts, head, n_classes, dropout_rate, seed)


def fit_features(
    model: MixtureModel,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    opt: OptimizerConfig = OptimizerConfig(),
    batch_size: int = 64,
    max_epochs: int = 20,
    patience: int = 2,
    seed: int | None = None,
) -> MixtureModel:
    """Train the decision layer on precomputed expert features."""
    if len(x_train) == 0 or len(x_val) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    seed = model.meta.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    model.drop.rng = rng
    params = list(model.params().values())
    kind = model.loss_kind()

    def run_epoch(epoch: int) -> None:
        order = rng.permutation(len(x_train))
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            for p in params:
                p.zero_grad()
            _, dlogits = F.cross_entropy(model.forward_features(x_train[idx], True), y_train[idx], kind)
            model.backward(dlogits)
            rmsprop_step(params, opt)

    def evaluate() -> tuple[float, float]:
        proba = model.proba_features(x_val)
        return accuracy_of(proba, y_val), nll(proba, y_val)

    best, epochs, history = early_stopping(
        run_epoch, evaluate, model.snapshot, model.restore, max_epochs, patience
    )
    model.meta = TrainingMeta(seed=seed, epochs_run=epochs, val_accuracy=best, history=history)
    return model


def train_mixture(
    model: MixtureModel,
    train: SampleSet,
    validation: SampleSet,
    opt: OptimizerConfig = OptimizerConfig(),
    batch_size: int = 64,
    max_epochs: int = 20,
    patience: int = 2,
    seed: int | None = None,
) -> MixtureModel:
    """Fit only the decision layer; expert weights stay untouched."""
    if len(train) == 0 or len(validation) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    return fit_features(
        model,
        model.experts.features(train), train.labels,
        model.experts.features(validation), validation.labels,
        opt, batch_size, max_epochs, patience, seed,
    )
