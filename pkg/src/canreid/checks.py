"""Gradient checks for every layer and for a tiny end-to-end ITS model."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .its import ItsConfig, ItsModel
from .nn import functional as F
from .nn.gradcheck import GradcheckReport, gradcheck
from .nn.layers import (
    LSTM,
    Attention,
    BatchNorm,
    Conv1D,
    Dense,
    Layer,
    MaxPool1D,
    Parameter,
    ReLU,
    Sequential,
)

LAYER_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3


class LSTMCellFragment(Layer):
    """A single LSTM step with fixed initial state, output ``[h, c]``."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        inner = LSTM(n_in, hidden, rng)
        self.Wx, self.Wh, self.b = inner.Wx, inner.Wh, inner.b
        self.h0 = rng.standard_normal((1, hidden)) * 0.5
        self.c0 = rng.standard_normal((1, hidden)) * 0.5
        self.hidden = hidden

    def params(self):
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b}

    def forward(self, x, train=False):
        N = len(x)
        h, c, self._cache = F.lstm_cell(
            x, np.repeat(self.h0, N, 0), np.repeat(self.c0, N, 0), self.Wx.value, self.Wh.value, self.b.value
        )
        return np.concatenate([h, c], axis=1)

    def backward(self, dout):
        H = self.hidden
        dx, _, _, dWx, dWh, db = F.lstm_cell_backward(dout[:, :H], dout[:, H:], self._cache,
                                                      self.Wx.value, self.Wh.value)
        self.Wx.grad += dWx
        self.Wh.grad += dWh
        self.b.grad += db
        return dx


class LossFragment(Layer):
    """Cross-entropy of the input logits against fixed labels, as a 1-element output."""

    def __init__(self, labels: np.ndarray, kind: str):
        self.labels = labels
        self.kind = kind

    def forward(self, x, train=False):
        loss, self._grad = F.cross_entropy(x, self.labels, self.kind)
        return np.array([loss])

    def backward(self, dout):
        return dout[0] * self._grad


class HeadFragment(Layer):
    """Output head: dense logits followed by the matching loss."""

    def __init__(self, n_in: int, n_classes: int, labels: np.ndarray, rng: np.random.Generator):
        binary = n_classes == 2
        self.dense = Dense(n_in, 1 if binary else n_classes, "none", rng)
        self.loss = LossFragment(labels, "binary" if binary else "categorical")
        self.binary = binary

    def params(self):
        return self.dense.params()

    def forward(self, x, train=False):
        z = self.dense.forward(x, train)
        return self.loss.forward(z[:, 0] if self.binary else z, train)

    def backward(self, dout):
        d = self.loss.backward(dout)
        return self.dense.backward(d.reshape(-1, 1) if self.binary else d)


class ActivationFragment(Layer):
    def __init__(self, act: str):
        self.act = act

    def forward(self, x, train=False):
        self._z = x
        self._y = F.activation_forward(x, self.act)
        return self._y

    def backward(self, dout):
        return F.activation_backward(dout, self._z, self._y, self.act)


class ItsFragment(Layer):
    def __init__(self, model: ItsModel):
        self.model = model

    def params(self) -> dict[str, Parameter]:
        return self.model.params()

    def forward(self, x, train=False):
        return self.model.forward(x, train)

    def backward(self, dout):
        return self.model.backward(dout)


@dataclass
class CheckResult:
    name: str
    report: GradcheckReport
    seconds: float

    @property
    def passed(self) -> bool:
        return self.report.passed


def tiny_its(head: str = "multiclass", seed: int = 0) -> ItsModel:
    """A few-hundred-parameter ITS model with dropout off, for gradient checks."""
    cfg = ItsConfig(seg_len=1.0, kernel=0.3, conv_stride=0.1, filters1=2, filters2=3, pool=2,
                    fc_units=4, lstm_hidden=3, dropout_rate=0.0, head=head,
                    n_classes=2 if head == "binary" else 3)
    model = ItsModel(cfg, 10.0, seed=seed)
    offset_biases(model, np.random.default_rng([seed, 2]))
    return model


def offset_biases(layer: Layer, rng: np.random.Generator) -> Layer:
    """Move conv/dense biases away from zero.

    Zero biases put ReLU inputs exactly on the kink wherever a window of the
    previous activation is all zeros, where no derivative exists.
    """
    for name, p in layer.params().items():
        if name.endswith("bias"):
            p.value[...] = rng.uniform(0.05, 0.3, p.shape) * rng.choice([-1, 1], p.shape)
    return layer


def gradcheck_cases(seed: int = 0):
    """(name, fragment, input, train, tolerance) for every layer kind."""
    # a separate stream from the projection drawn by gradcheck(seed=seed)
    rng = np.random.default_rng([seed, 1])
    x_seq = rng.standard_normal((2, 9, 2))
    cases = [
        ("conv1d", Conv1D(2, 3, 3, 1, rng), x_seq, False),
        ("conv1d_stride2", Conv1D(2, 3, 3, 2, rng), x_seq, False),
        # distinct values keep maxpool away from ties, where it is not differentiable
        ("maxpool", MaxPool1D(2), rng.permutation(18).reshape(1, 9, 2) * 0.1, False),
        ("relu", ReLU(), rng.uniform(0.1, 1, (3, 4)) * rng.choice([-1, 1], (3, 4)), False),
        ("batchnorm_train", BatchNorm(2), x_seq, True),
        ("batchnorm_inference", BatchNorm(2), x_seq, False),
        ("dense_none", Dense(4, 3, "none", rng), rng.standard_normal((3, 4)), False),
        ("dense_tanh", Dense(4, 3, "tanh", rng), rng.standard_normal((3, 4)), False),
        ("dense_relu", Dense(4, 3, "relu", rng), rng.standard_normal((3, 4)) + 0.1, False),
        ("sigmoid", ActivationFragment("sigmoid"), rng.standard_normal((3, 4)), False),
        ("softmax", ActivationFragment("softmax"), rng.standard_normal((3, 4)), False),
        ("lstm_cell", LSTMCellFragment(3, 4, rng), rng.standard_normal((2, 3)), False),
        ("lstm", LSTM(3, 4, rng), rng.standard_normal((2, 5, 3)), False),
        ("attention", Attention(4, rng), rng.standard_normal((2, 5, 4)), False),
        ("head_binary", HeadFragment(4, 2, np.array([0, 1, 1]), rng), rng.standard_normal((3, 4)), False),
        ("head_multiclass", HeadFragment(4, 3, np.array([0, 2, 1]), rng), rng.standard_normal((3, 4)), False),
        ("loss_binary", LossFragment(np.array([0, 1, 1, 0]), "binary"), rng.standard_normal(4), False),
        ("loss_categorical", LossFragment(np.array([2, 0, 1]), "categorical"), rng.standard_normal((3, 3)), False),
        ("cnn_stack", offset_biases(Sequential(c=Conv1D(1, 2, 3, 1, rng), r=ReLU(), p=MaxPool1D(2),
                                               c2=Conv1D(2, 2, 2, 1, rng), r2=ReLU(), bn=BatchNorm(2)), rng),
         rng.standard_normal((3, 10, 1)), True),
    ]
    out = [(name, frag, x, train, LAYER_TOLERANCE) for name, frag, x, train in cases]
    x_its = rng.uniform(0, 1, (3, 2, 10))
    out.append(("its_multiclass", ItsFragment(tiny_its("multiclass", seed)), x_its, True, MODEL_TOLERANCE))
    out.append(("its_binary", ItsFragment(tiny_its("binary", seed)), x_its, True, MODEL_TOLERANCE))
    return out


def run_gradchecks(seed: int = 0) -> list[CheckResult]:
    results = []
    for name, frag, x, train, tol in gradcheck_cases(seed):
        t = time.perf_counter()
        report = gradcheck(frag, x, tol, seed=seed, train=train)
        results.append(CheckResult(name, report, time.perf_counter() - t))
    return results
