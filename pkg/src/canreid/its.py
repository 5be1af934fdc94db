"""Per-channel classifier: shared segment CNN -> LSTM -> attention -> dense -> head.

A sample of one channel arrives as ``(N, k, P)``: ``k`` non-overlapping
segments of ``P`` points. The same CNN maps every segment to a feature
vector; an LSTM runs over the ``k`` features, attention pools its hidden
states, and a tanh dense layer feeds the sigmoid/softmax output.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import asdict, dataclass, field

import numpy as np

from .channels import ChannelId, seconds_to_points
from .errors import ConfigInfeasible, EmptyDataset, ShapeMismatch
from .nn import functional as F
from .nn import io as nnio
from .nn.layers import (
    LSTM,
    Attention,
    BatchNorm,
    Conv1D,
    Dense,
    Dropout,
    Layer,
    MaxPool1D,
    Parameter,
    ReLU,
    Sequential,
)
from .nn.optim import OptimizerConfig, rmsprop_step
from .sampling import SampleSet


@dataclass(frozen=True)
class ItsConfig:
    seg_len: float = 3.0
    kernel: float = 0.5
    conv_stride: float = 0.05
    filters1: int = 20
    filters2: int = 40
    pool: int = 5
    fc_units: int = 64
    lstm_hidden: int = 16
    dropout_rate: float = 0.25
    head: str = "multiclass"  # or "binary"
    n_classes: int = 2

    def __post_init__(self):
        if self.kernel > self.seg_len:
            raise ConfigInfeasible("kernel must not exceed the segment length")
        counts = (self.filters1, self.filters2, self.pool, self.fc_units, self.lstm_hidden)
        if min(counts) < 1:
            raise ConfigInfeasible("layer sizes must be positive")
        if self.head not in ("binary", "multiclass"):
            raise ConfigInfeasible(f"unknown head {self.head!r}")
        if self.n_classes < 2 or (self.head == "binary" and self.n_classes != 2):
            raise ConfigInfeasible("binary heads have 2 classes, multiclass heads at least 2")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigInfeasible("dropout_rate must lie in [0, 1)")

    @property
    def out_units(self) -> int:
        return 1 if self.head == "binary" else self.n_classes


@dataclass(frozen=True)
class LayerPlan:
    """Point counts of every layer for one channel rate."""

    rate_hz: float
    seg_points: int
    kernel1: int
    stride1: int
    conv1_len: int
    pooled_len: int
    kernel2: int
    stride2: int
    conv2_len: int


def plan_layers(cfg: ItsConfig, rate_hz: float) -> LayerPlan:
    seg_points = seconds_to_points(cfg.seg_len, rate_hz)
    kernel1 = seconds_to_points(cfg.kernel, rate_hz)
    if kernel1 < 1:
        raise ConfigInfeasible(f"{cfg.kernel}s kernel is shorter than one point at {rate_hz} Hz")
    stride1 = max(1, seconds_to_points(cfg.conv_stride, rate_hz))
    if kernel1 > seg_points:
        raise ConfigInfeasible("first kernel longer than a segment")
    conv1_len = F.conv_out_len(seg_points, kernel1, stride1)
    pooled_len = -(-conv1_len // cfg.pool)
    # one pooled step spans pool * stride1 input points
    pooled_rate = rate_hz / (stride1 * cfg.pool)
    kernel2 = max(1, seconds_to_points(cfg.kernel, pooled_rate))
    stride2 = max(1, seconds_to_points(cfg.conv_stride, pooled_rate))
    if pooled_len < kernel2:
        raise ConfigInfeasible(f"pooled length {pooled_len} shorter than second kernel {kernel2}")
    conv2_len = F.conv_out_len(pooled_len, kernel2, stride2)
    return LayerPlan(rate_hz, seg_points, kernel1, stride1, conv1_len, pooled_len, kernel2, stride2, conv2_len)


@dataclass
class TrainingMeta:
    seed: int = 0
    epochs_run: int = 0
    val_accuracy: float | None = None
    history: list[float] = field(default_factory=list)


class ItsModel(Layer):
    def __init__(self, cfg: ItsConfig, rate_hz: float, channel: ChannelId | None = None, seed: int = 0):
        self.cfg = cfg
        self.plan = plan_layers(cfg, rate_hz)
        self.channel = channel
        self.meta = TrainingMeta(seed=seed)
        p = self.plan
        rng = np.random.default_rng(seed)
        self.cnn = Sequential(
            conv1=Conv1D(1, cfg.filters1, p.kernel1, p.stride1, rng),
            relu1=ReLU(),
            pool=MaxPool1D(cfg.pool),
            conv2=Conv1D(cfg.filters1, cfg.filters2, p.kernel2, p.stride2, rng),
            relu2=ReLU(),
            bn=BatchNorm(cfg.filters2),
        )
        self.cnn_dense = Dense(p.conv2_len * cfg.filters2, cfg.fc_units, "tanh", rng)
        self.cnn_drop = Dropout(cfg.dropout_rate, rng)
        self.lstm = LSTM(cfg.fc_units, cfg.lstm_hidden, rng)
        self.attention = Attention(cfg.lstm_hidden, rng)
        self.fc = Dense(cfg.lstm_hidden, cfg.fc_units, "tanh", rng)
        self.fc_drop = Dropout(cfg.dropout_rate, rng)
        self.head = Dense(cfg.fc_units, cfg.out_units, "none", rng)

    # -- structure -------------------------------------------------------------

    def _modules(self) -> dict[str, Layer]:
        return {
            "cnn": self.cnn, "cnn_dense": self.cnn_dense, "lstm": self.lstm,
            "attention": self.attention, "fc": self.fc, "head": self.head,
        }

    def params(self) -> dict[str, Parameter]:
        return {f"{m}.{k}": p for m, layer in self._modules().items() for k, p in layer.params().items()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{m}.{k}": b for m, layer in self._modules().items() for k, b in layer.buffers().items()}

    def state(self) -> dict[str, np.ndarray]:
        return {**{k: p.value for k, p in self.params().items()}, **self.buffers()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.state().items()}

    def restore(self, state: dict[str, np.ndarray]) -> None:
        current = self.state()
        if set(current) != set(state):
            raise ShapeMismatch("state keys do not match the model")
        for k, v in state.items():
            if current[k].shape != np.shape(v):
                raise ShapeMismatch(f"{k}: shape {np.shape(v)} != {current[k].shape}")
            current[k][...] = v

    def n_params(self) -> int:
        return sum(p.value.size for p in self.params().values())

    def set_dropout_rng(self, rng: np.random.Generator) -> None:
        self.cnn_drop.rng = rng
        self.fc_drop.rng = rng

    # -- passes ----------------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> None:
        if x.ndim != 3 or x.shape[2] != self.plan.seg_points:
            raise ShapeMismatch(
                f"expected (N, k, {self.plan.seg_points}) segmented input, got {x.shape}"
            )

    def segment_features(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """CNN(s_i) for every segment: (N, k, P) -> (N, k, fc_units)."""
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x)
        N, k, P = x.shape
        z = self.cnn.forward(x.reshape(N * k, P, 1), train)
        z = self.cnn_dense.forward(z.reshape(N * k, -1), train)
        return self.cnn_drop.forward(z, train).reshape(N, k, -1)

    def features(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Penultimate activation (post-attention tanh dense), (N, fc_units)."""
        hs = self.lstm.forward(self.segment_features(x, train), train)
        a = self.attention.forward(hs, train)
        return self.fc_drop.forward(self.fc.forward(a, train), train)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Logits: (N,) for a binary head, (N, C) otherwise."""
        self._shape = np.shape(x)
        logits = self.head.forward(self.features(x, train), train)
        return logits[:, 0] if self.cfg.head == "binary" else logits

    def backward(self, dlogits: np.ndarray, input_grad: bool = True) -> np.ndarray | None:
        if self.cfg.head == "binary":
            dlogits = dlogits.reshape(-1, 1)
        d = self.head.backward(dlogits)
        d = self.fc.backward(self.fc_drop.backward(d))
        d = self.lstm.backward(self.attention.backward(d))
        N, k, P = self._shape
        d = self.cnn_drop.backward(d.reshape(N * k, -1))
        d = self.cnn_dense.backward(d)
        d = d.reshape(N * k, self.plan.conv2_len, self.cfg.filters2)
        layers = list(self.cnn.layers.values())
        for layer in reversed(layers[1:]):
            d = layer.backward(d)
        d = layers[0].backward(d, input_grad)
        return None if d is None else d.reshape(N, k, P)

    @property
    def attention_weights(self) -> np.ndarray | None:
        return self.attention.alpha

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Class probabilities (N, C); binary heads give ``[1 - p, p]``."""
        out = []
        for i in range(0, len(x), batch_size):
            z = self.forward(x[i:i + batch_size], train=False)
            if self.cfg.head == "binary":
                p = F.sigmoid(z)
                out.append(np.stack([1 - p, p], axis=1))
            else:
                out.append(F.softmax(z, axis=1))
        return np.concatenate(out) if out else np.empty((0, self.cfg.n_classes))

    def loss_kind(self) -> str:
        return "binary" if self.cfg.head == "binary" else "categorical"

    # -- persistence -----------------------------------------------------------

    def architecture(self) -> dict:
        return {
            "type": "its",
            "config": asdict(self.cfg),
            "rate_hz": self.plan.rate_hz,
            "channel": str(self.channel) if self.channel is not None else None,
        }

    def to_bytes(self) -> bytes:
        return nnio.dumps("its", self.architecture(), self.state(), asdict(self.meta))

    @classmethod
    def from_bytes(cls, raw: bytes) -> ItsModel:
        kind, arch, tensors, meta = nnio.loads(raw)
        if kind != "its":
            raise ValueError(f"not an ITS model file (kind={kind!r})")
        channel = ChannelId.parse(arch["channel"]) if arch.get("channel") else None
        model = cls(ItsConfig(**arch["config"]), arch["rate_hz"], channel, meta.get("seed", 0))
        model.restore(tensors)
        model.meta = TrainingMeta(**meta)
        return model


def build_its(cfg: ItsConfig, channel_rate_hz: float, channel: ChannelId | None = None,
              seed: int = 0) -> ItsModel:
    return ItsModel(cfg, channel_rate_hz, channel, seed)


def accuracy_of(proba: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(proba, axis=1) == labels))


def nll(proba: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the true classes."""
    return float(-np.mean(np.log(np.maximum(proba[np.arange(len(labels)), labels], 1e-12))))


def early_stopping(
    run_epoch: Callable[[int], None],
    evaluate: Callable[[], float | tuple[float, float]],
    snapshot: Callable[[], object],
    restore: Callable[[object], None],
    max_epochs: int,
    patience: int,
) -> tuple[float, int, list[float]]:
    """Train until validation accuracy stops improving for ``patience`` epochs.

    ``evaluate`` returns an accuracy or an ``(accuracy, loss)`` pair; with a
    loss, equal accuracy at a lower loss also counts as an improvement.
    Returns (best accuracy, epochs run, per-epoch accuracies); the best
    snapshot is restored before returning.
    """
    if max_epochs < 1 or patience < 1:
        raise ValueError("max_epochs and patience must be >= 1")
    best, best_state, stale, history = (-1.0, -np.inf), None, 0, []
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        run_epoch(epoch)
        score = evaluate()
        acc, loss = score if isinstance(score, tuple) else (score, 0.0)
        history.append(acc)
        if (acc, -loss) > best:
            best, best_state, stale = (acc, -loss), snapshot(), 0
        else:
            stale += 1
            if stale >= patience:
                break
    restore(best_state)
    return best[0], epoch, history


def train_its(
    model: ItsModel,
    train: SampleSet,
    validation: SampleSet,
    opt: OptimizerConfig = OptimizerConfig(),
    batch_size: int = 64,
    max_epochs: int = 20,
    patience: int = 2,
    seed: int | None = None,
    log: Callable[..., None] | None = None,
) -> ItsModel:
    """Fit ``model`` on its channel of ``train``; keep the best-validation weights."""
    if len(train) == 0 or len(validation) == 0:
        raise EmptyDataset("training and validation sets must be non-empty")
    if model.channel is None:
        raise ValueError("model has no channel assigned")
    seed = model.meta.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    model.set_dropout_rng(rng)
    ch, seg_len, kind = model.channel, model.cfg.seg_len, model.loss_kind()
    params = list(model.params().values())
    x_val = validation.segments(ch, seg_len)

    def run_epoch(epoch: int) -> None:
        order = rng.permutation(len(train))
        total = 0.0
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            x = train.segments(ch, seg_len, idx)
            for p in params:
                p.zero_grad()
            loss, dlogits = F.cross_entropy(model.forward(x, train=True), train.labels[idx], kind)
            model.backward(dlogits, input_grad=False)
            rmsprop_step(params, opt)
            total += loss * len(idx)
        if log:
            log(stage="its_epoch", channel=str(ch), epoch=epoch, loss=round(total / len(order), 6))

    def evaluate() -> tuple[float, float]:
        proba = model.predict_proba(x_val)
        return accuracy_of(proba, validation.labels), nll(proba, validation.labels)

    best, epochs, history = early_stopping(
        run_epoch, evaluate, model.snapshot, model.restore, max_epochs, patience
    )
    model.meta = TrainingMeta(seed=seed, epochs_run=epochs, val_accuracy=best, history=history)
    return model
