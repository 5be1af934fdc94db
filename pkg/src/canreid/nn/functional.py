"""Forward/backward pairs for the layers used by the per-channel classifier.

Array layout is channels-last: sequences are ``(N, L, C)``. Every ``*_forward``
returns ``(out, cache)`` and the matching ``*_backward`` consumes the cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DegenerateBatch, FilterTooLong, LabelOutOfRange, ShapeMismatch

BN_EPS = 1e-5
PROB_FLOOR = 1e-12


# -- convolution ---------------------------------------------------------------

def conv1d(T, f, stride: int = 1) -> np.ndarray:
    """``out[i] = sum_j f[n+1-j] * T[(i-1)*stride + j]`` (1-based), valid positions only.

    >>> conv1d([1, 3, 6], [1, -1])
    array([2., 3.])
    """
    T = np.asarray(T, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    out, _ = conv1d_forward(T[None, :, None], f[None, None, :], None, stride)
    return out[0, :, 0]


def conv_out_len(length: int, n: int, stride: int) -> int:
    return (length - n) // stride + 1


def conv1d_forward(x, w, b, stride: int = 1):
    """Multi-filter convolution.

    x: (N, L, C) input, w: (F, C, n) filters, b: (F,) bias or None.
    Returns (N, L_out, F) with L_out = (L - n) // stride + 1.
    """
    N, L, C = x.shape
    F, Cw, n = w.shape
    if Cw != C:
        raise ShapeMismatch(f"filters expect {Cw} input channels, got {C}")
    if n > L:
        raise FilterTooLong(f"filter of {n} points on a series of {L}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    L_out = conv_out_len(L, n, stride)
    # (N, L-n+1, C, n) -> strided -> (N*L_out, C*n)
    cols = sliding_window_view(x, n, axis=1)[:, ::stride].reshape(N * L_out, C * n)
    # contiguous copy: BLAS is skipped for negative-stride views
    w_flip = np.ascontiguousarray(w[:, :, ::-1]).reshape(F, C * n)
    out = cols @ w_flip.T
    if b is not None:
        out += b
    return out.reshape(N, L_out, F), (x.shape, cols, w_flip, w.shape, stride)


def conv1d_backward(dout, cache, input_grad: bool = True):
    """Returns (dx, dw, db) for :func:`conv1d_forward`; dx is None if not requested."""
    x_shape, cols, w_flip, w_shape, stride = cache
    N, L, C = x_shape
    F, _, n = w_shape
    L_out = cols.shape[0] // N
    if dout.shape != (N, L_out, F):
        raise ShapeMismatch(f"upstream gradient {dout.shape} != {(N, L_out, F)}")
    d2 = dout.reshape(N * L_out, F)
    dw = (d2.T @ cols).reshape(F, C, n)[:, :, ::-1].copy()
    db = d2.sum(axis=0)
    if not input_grad:
        return None, dw, db
    dcols = d2 @ w_flip
    # col2im: flat input offset of every (sample, position, channel, tap)
    pos = (np.arange(L_out)[:, None] * stride + np.arange(n)[None, :])  # (L_out, n)
    flat = (
        np.arange(N)[:, None, None, None] * (L * C)
        + pos[None, :, None, :] * C
        + np.arange(C)[None, None, :, None]
    )
    dx = np.bincount(flat.ravel(), weights=dcols.ravel(), minlength=N * L * C)
    return dx.reshape(x_shape), dw, db


# -- pooling -------------------------------------------------------------------

def maxpool1d_forward(x, pool: int):
    """Non-overlapping max over ``pool`` steps along axis 1; a short tail window is kept."""
    if pool < 1:
        raise ValueError("pool must be >= 1")
    N, L, C = x.shape
    Lp = -(-L // pool)
    padded = np.full((N, Lp * pool, C), -np.inf)
    padded[:, :L] = x
    blocks = padded.reshape(N, Lp, pool, C)
    arg = blocks.argmax(axis=2)  # first occurrence on ties
    out = np.take_along_axis(blocks, arg[:, :, None, :], axis=2)[:, :, 0, :]
    return out, (x.shape, arg, pool)


def maxpool1d(x, pool: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return maxpool1d_forward(x[None, :, None], pool)[0][0, :, 0]


def maxpool1d_backward(dout, cache):
    x_shape, arg, pool = cache
    N, L, C = x_shape
    Lp = arg.shape[1]
    dblocks = np.zeros((N, Lp, pool, C))
    np.put_along_axis(dblocks, arg[:, :, None, :], dout[:, :, None, :], axis=2)
    return dblocks.reshape(N, Lp * pool, C)[:, :L]


# -- batch normalization -------------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool, momentum: float = 0.9,
                      first: bool = False):
    """Normalize over every axis but the last (feature) axis.

    In train mode ``running_mean``/``running_var`` are updated in place;
    ``first=True`` overwrites them with the batch statistics instead of
    blending, so the (0, 1) initial values leave no trace.
    """
    axes = tuple(range(x.ndim - 1))
    if train:
        count = x.size // x.shape[-1]
        if count < 2:
            raise DegenerateBatch("batch statistics need at least 2 values per feature")
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        keep = 0.0 if first else momentum
        running_mean *= keep
        running_mean += (1 - keep) * mu
        running_var *= keep
        running_var += (1 - keep) * var
    else:
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    x_hat = (x - mu) * inv_std
    return gamma * x_hat + beta, (x_hat, inv_std, gamma, train, axes)


def batchnorm_backward(dout, cache):
    """Returns (dx, dgamma, dbeta)."""
    x_hat, inv_std, gamma, train, axes = cache
    dgamma = (dout * x_hat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dx_hat = dout * gamma
    if not train:
        return dx_hat * inv_std, dgamma, dbeta
    m = x_hat.size // x_hat.shape[-1]
    dx = inv_std / m * (
        m * dx_hat - dx_hat.sum(axis=axes) - x_hat * (dx_hat * x_hat).sum(axis=axes)
    )
    return dx, dgamma, dbeta


def batchnorm1d(x, gamma, beta, mode: str = "train", running_mean=None, running_var=None):
    x = np.asarray(x, dtype=np.float64)
    F = x.shape[-1]
    rm = np.zeros(F) if running_mean is None else running_mean
    rv = np.ones(F) if running_var is None else running_var
    return batchnorm_forward(x, gamma, beta, rm, rv, train=(mode == "train"))[0]


# -- activations ---------------------------------------------------------------

def sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def softmax(z, axis: int = -1):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def relu(x):
    return np.maximum(x, 0.0)


ACTIVATIONS = ("none", "relu", "tanh", "sigmoid")


def activation_forward(z, act: str):
    if act == "none":
        return z
    if act == "relu":
        return relu(z)
    if act == "tanh":
        return np.tanh(z)
    if act == "sigmoid":
        return sigmoid(z)
    if act == "softmax":
        return softmax(z, axis=-1)
    raise ValueError(f"unknown activation {act!r}")


def activation_backward(dy, z, y, act: str):
    if act == "none":
        return dy
    if act == "relu":
        return dy * (z > 0)
    if act == "tanh":
        return dy * (1.0 - y * y)
    if act == "sigmoid":
        return dy * y * (1.0 - y)
    if act == "softmax":
        return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))
    raise ValueError(f"unknown activation {act!r}")


# -- dense ---------------------------------------------------------------------

def dense_forward(x, W, b, act: str = "none"):
    """``y = act(x @ W.T + b)`` with W of shape (out, in)."""
    if x.shape[-1] != W.shape[1]:
        raise ShapeMismatch(f"input width {x.shape[-1]} != weight in-dim {W.shape[1]}")
    z = x @ W.T + b
    y = activation_forward(z, act)
    return y, (x, W, z, y, act)


def dense_backward(dy, cache):
    x, W, z, y, act = cache
    if dy.shape != y.shape:
        raise ShapeMismatch(f"upstream gradient {dy.shape} != output {y.shape}")
    dz = activation_backward(dy, z, y, act)
    dz2 = dz.reshape(-1, dz.shape[-1])
    dW = dz2.T @ x.reshape(-1, x.shape[-1])
    db = dz2.sum(axis=0)
    return dz @ W, dW, db


def dense(x, W, b, act: str = "none"):
    return dense_forward(np.asarray(x, dtype=np.float64), W, b, act)[0]


# -- LSTM ----------------------------------------------------------------------

def lstm_cell(x_t, h_prev, c_prev, Wx, Wh, b):
    """One LSTM step; gate order in the stacked weights is (input, forget, candidate, output).

    Wx: (4H, D), Wh: (4H, H), b: (4H,). Returns (h_t, c_t, cache).
    """
    H = h_prev.shape[-1]
    if Wx.shape != (4 * H, x_t.shape[-1]) or Wh.shape != (4 * H, H):
        raise ShapeMismatch("LSTM weight shapes do not match input/hidden sizes")
    z = x_t @ Wx.T + h_prev @ Wh.T + b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x_t, h_prev, c_prev, i, f, g, o, tc)


def lstm_cell_backward(dh, dc, cache, Wx, Wh):
    """Returns (dx, dh_prev, dc_prev, dWx, dWh, db)."""
    x_t, h_prev, c_prev, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [dc * g * i * (1 - i), dc * c_prev * f * (1 - f), dc * i * (1 - g * g), do * o * (1 - o)],
        axis=-1,
    )
    return dz @ Wx, dz @ Wh, dc * f, dz.T @ x_t, dz.T @ h_prev, dz.sum(axis=0)


def lstm_forward(x, Wx, Wh, b, h0=None, c0=None):
    """Unroll over axis 1 of ``x`` (N, k, D); returns hidden states (N, k, H)."""
    N, k, _ = x.shape
    H = Wh.shape[1]
    h = np.zeros((N, H)) if h0 is None else h0
    c = np.zeros((N, H)) if c0 is None else c0
    hs = np.empty((N, k, H))
    caches = []
    for t in range(k):
        h, c, cache = lstm_cell(x[:, t], h, c, Wx, Wh, b)
        hs[:, t] = h
        caches.append(cache)
    return hs, (caches, x.shape)


def lstm_backward(dhs, cache, Wx, Wh):
    caches, x_shape = cache
    N, k, _ = x_shape
    H = Wh.shape[1]
    dx = np.empty(x_shape)
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * H)
    dh_next = np.zeros((N, H))
    dc_next = np.zeros((N, H))
    for t in reversed(range(k)):
        dx[:, t], dh_next, dc_next, dwx, dwh, dbt = lstm_cell_backward(
            dhs[:, t] + dh_next, dc_next, caches[t], Wx, Wh
        )
        dWx += dwx
        dWh += dwh
        db += dbt
    return dx, dWx, dWh, db


# -- attention -----------------------------------------------------------------

def attention_forward(hs, w, b):
    """Score each step with ``tanh(w.h + b)``, softmax over steps, weighted sum.

    hs: (N, k, H), w: (H,), b: (1,). Returns (a (N, H), alpha (N, k), cache).
    """
    if hs.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"attention vector of size {w.shape[0]} on states of size {hs.shape[-1]}")
    u = np.tanh(hs @ w + b[0])
    alpha = softmax(u, axis=1)
    a = np.einsum("nk,nkh->nh", alpha, hs)
    return a, alpha, (hs, w, u, alpha)


def attention_backward(da, cache):
    """Returns (dhs, dw, db)."""
    hs, w, u, alpha = cache
    dalpha = np.einsum("nh,nkh->nk", da, hs)
    du = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
    dz = du * (1.0 - u * u)
    dhs = alpha[:, :, None] * da[:, None, :] + dz[:, :, None] * w
    dw = np.einsum("nk,nkh->h", dz, hs)
    return dhs, dw, np.array([dz.sum()])


def attention(hs, w, b):
    """Single-sample convenience: hs (k, H) -> (a, alpha)."""
    hs = np.asarray(hs, dtype=np.float64)
    a, alpha, _ = attention_forward(hs[None], np.asarray(w, float), np.atleast_1d(np.asarray(b, float)))
    return a[0], alpha[0]


# -- dropout -------------------------------------------------------------------

def dropout_forward(x, rate: float, train: bool, rng: np.random.Generator | None = None):
    """Inverted dropout; identity in inference mode or at rate 0."""
    if not 0 <= rate < 1:
        raise ValueError("dropout rate must lie in [0, 1)")
    if not train or rate == 0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs a generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def dropout(x, rate: float, mode: str = "train", seed: int = 0):
    x = np.asarray(x, dtype=np.float64)
    return dropout_forward(x, rate, mode == "train", np.random.default_rng(seed))[0]


# -- losses --------------------------------------------------------------------

def cross_entropy(logits, labels, kind: str = "categorical"):
    """Mean negative log-likelihood and its gradient with respect to the logits.

    categorical: logits (N, C), integer labels in [0, C).
    binary: logits (N,) or (N, 1), labels in {0, 1}.
    Probabilities are clamped at 1e-12 before the log.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if kind == "categorical":
        N, C = logits.shape
        if labels.shape != (N,):
            raise ShapeMismatch("one label per row expected")
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= C:
            raise LabelOutOfRange(f"labels must lie in [0, {C})")
        p = softmax(logits, axis=1)
        loss = -np.log(np.maximum(p[np.arange(N), labels], PROB_FLOOR)).mean()
        grad = p.copy()
        grad[np.arange(N), labels] -= 1.0
        return float(loss), grad / N
    if kind == "binary":
        z = logits.reshape(-1)
        if labels.shape != z.shape:
            raise ShapeMismatch("one label per row expected")
        if np.any((labels != 0) & (labels != 1)):
            raise LabelOutOfRange("binary labels must be 0 or 1")
        p = sigmoid(z)
        y = labels.astype(np.float64)
        loss = -(y * np.log(np.maximum(p, PROB_FLOOR)) + (1 - y) * np.log(np.maximum(1 - p, PROB_FLOOR)))
        return float(loss.mean()), ((p - y) / len(z)).reshape(logits.shape)
    raise ValueError(f"unknown loss kind {kind!r}")
