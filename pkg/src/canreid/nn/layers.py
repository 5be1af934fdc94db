"""Stateful layer wrappers with cached forward passes.

Each layer exposes ``forward(x, train)``, ``backward(dout) -> dx`` (which
accumulates parameter gradients) and ``params()`` mapping names to
:class:`Parameter` objects. Non-trainable state such as batch-norm running
statistics is reported by ``buffers()``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F


@dataclass(eq=False)
class Parameter:
    value: np.ndarray
    grad: np.ndarray = field(default=None)
    rms_cache: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.rms_cache is None:
            self.rms_cache = np.zeros_like(self.value)
        if not (self.value.shape == self.grad.shape == self.rms_cache.shape):
            raise ValueError("value, grad and rms_cache must share a shape")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    def params(self) -> dict[str, Parameter]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def zero_grad(self) -> None:
        for p in self.params().values():
            p.zero_grad()


class Conv1D(Layer):
    def __init__(self, in_channels: int, filters: int, kernel: int, stride: int, rng: np.random.Generator):
        self.stride = stride
        self.weight = Parameter(glorot(rng, (filters, in_channels, kernel), in_channels * kernel, filters * kernel))
        self.bias = Parameter(np.zeros(filters))

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, train=False):
        out, self._cache = F.conv1d_forward(x, self.weight.value, self.bias.value, self.stride)
        return out

    def backward(self, dout, input_grad=True):
        dx, dw, db = F.conv1d_backward(dout, self._cache, input_grad)
        self.weight.grad += dw
        self.bias.grad += db
        return dx


class MaxPool1D(Layer):
    def __init__(self, pool: int):
        self.pool = pool

    def forward(self, x, train=False):
        out, self._cache = F.maxpool1d_forward(x, self.pool)
        return out

    def backward(self, dout):
        return F.maxpool1d_backward(dout, self._cache)


class ReLU(Layer):
    def forward(self, x, train=False):
        self._x = x
        return F.relu(x)

    def backward(self, dout):
        return dout * (self._x > 0)


class BatchNorm(Layer):
    def __init__(self, features: int, momentum: float = 0.9):
        self.momentum = momentum
        self.gamma = Parameter(np.ones(features))
        self.beta = Parameter(np.zeros(features))
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)
        # number of train-mode batches seen so far
        self.batches = np.zeros(1)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var, "batches": self.batches}

    def forward(self, x, train=False):
        out, self._cache = F.batchnorm_forward(
            x, self.gamma.value, self.beta.value, self.running_mean, self.running_var,
            train, self.momentum, first=train and self.batches[0] == 0,
        )
        if train:
            self.batches += 1
        return out

    def backward(self, dout):
        dx, dg, db = F.batchnorm_backward(dout, self._cache)
        self.gamma.grad += dg
        self.beta.grad += db
        return dx


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, act: str, rng: np.random.Generator):
        self.act = act
        self.weight = Parameter(glorot(rng, (n_out, n_in), n_in, n_out))
        self.bias = Parameter(np.zeros(n_out))

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x, train=False):
        out, self._cache = F.dense_forward(x, self.weight.value, self.bias.value, self.act)
        return out

    def backward(self, dout):
        dx, dW, db = F.dense_backward(dout, self._cache)
        self.weight.grad += dW
        self.bias.grad += db
        return dx


class LSTM(Layer):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, forget_bias: float = 1.0):
        self.hidden = hidden
        self.Wx = Parameter(glorot(rng, (4 * hidden, n_in), n_in, 4 * hidden))
        self.Wh = Parameter(glorot(rng, (4 * hidden, hidden), hidden, 4 * hidden))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = forget_bias
        self.b = Parameter(b)

    def params(self):
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b}

    def forward(self, x, train=False):
        hs, self._cache = F.lstm_forward(x, self.Wx.value, self.Wh.value, self.b.value)
        return hs

    def backward(self, dhs):
        dx, dWx, dWh, db = F.lstm_backward(dhs, self._cache, self.Wx.value, self.Wh.value)
        self.Wx.grad += dWx
        self.Wh.grad += dWh
        self.b.grad += db
        return dx


class Attention(Layer):
    def __init__(self, hidden: int, rng: np.random.Generator):
        self.w = Parameter(glorot(rng, (hidden,), hidden, 1))
        self.b = Parameter(np.zeros(1))
        self.alpha = None

    def params(self):
        return {"w": self.w, "b": self.b}

    def forward(self, hs, train=False):
        a, self.alpha, self._cache = F.attention_forward(hs, self.w.value, self.b.value)
        return a

    def backward(self, da):
        dhs, dw, db = F.attention_backward(da, self._cache)
        self.w.grad += dw
        self.b.grad += db
        return dhs


class Dropout(Layer):
    def __init__(self, rate: float, rng: np.random.Generator):
        self.rate = rate
        self.rng = rng

    def forward(self, x, train=False):
        out, self._mask = F.dropout_forward(x, self.rate, train, self.rng)
        return out

    def backward(self, dout):
        return F.dropout_backward(dout, self._mask)


class Sequential(Layer):
    def __init__(self, **layers: Layer):
        self.layers = layers

    def params(self):
        return {f"{name}.{k}": p for name, layer in self.layers.items() for k, p in layer.params().items()}

    def buffers(self):
        return {f"{name}.{k}": b for name, layer in self.layers.items() for k, b in layer.buffers().items()}

    def forward(self, x, train=False):
        for layer in self.layers.values():
            x = layer.forward(x, train)
        return x

    def backward(self, dout):
        for layer in reversed(list(self.layers.values())):
            dout = layer.backward(dout)
        return dout
