"""Central finite-difference gradient checking for layers and whole models."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteValue

STEP = 1e-5


@dataclass
class GradcheckReport:
    max_rel_error: float
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6, magnitude: float = 0.0) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, scale)``.

    ``scale`` is ``max(floor, 1e-3 * max(max|a|, magnitude))``: finite
    differences only resolve absolute error, so elements far below the
    gradient's overall size are judged against that size rather than against
    zero. ``magnitude`` lets a caller pass the size of the whole gradient when
    ``analytic`` is one part of it.
    """
    if analytic.size == 0:
        return 0.0
    scale = max(floor, 1e-3 * max(float(np.max(np.abs(analytic))), magnitude))
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), scale)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"non-finite values in {name}")


def gradcheck(fragment, x, tolerance: float = 1e-4, *, seed: int = 0, check_input: bool = True,
              train: bool = False, h: float = STEP) -> GradcheckReport:
    """Compare analytic and numeric gradients of ``sum(r * fragment(x))``.

    ``fragment`` needs ``forward(x, train)``, ``backward(dout)`` and
    ``params()``; ``r`` is a fixed random projection of the output. Keep
    ``train=False`` for anything containing dropout: inference mode turns
    dropout off and makes batch normalization use running statistics.
    """
    x = np.array(x, dtype=np.float64)
    params = fragment.params()
    for p in params.values():
        p.zero_grad()
    out = fragment.forward(x, train=train)
    _check_finite("output", out)
    r = np.random.default_rng(seed).standard_normal(out.shape)
    dx = fragment.backward(r)
    _check_finite("input gradient", dx)

    # a parameter whose true gradient vanishes (a bias ahead of batch norm)
    # is judged against the rest of the gradient, not against round-off
    magnitude = max([float(np.max(np.abs(p.grad))) for p in params.values() if p.grad.size]
                    + ([float(np.max(np.abs(dx)))] if check_input and dx.size else []) + [0.0])
    errors = {}
    for name, p in params.items():
        analytic = p.grad.copy()
        _check_finite(name, analytic)

        def loss_at(value, p=p):
            saved = p.value
            p.value = value
            try:
                return float(np.sum(r * fragment.forward(x, train=train)))
            finally:
                p.value = saved

        numeric = numeric_grad(loss_at, p.value, h)
        _check_finite(name + " (numeric)", numeric)
        errors[name] = rel_error(analytic, numeric, magnitude=magnitude)
    if check_input:
        numeric = numeric_grad(lambda xi: float(np.sum(r * fragment.forward(xi, train=train))), x, h)
        errors["input"] = rel_error(dx, numeric, magnitude=magnitude)
    worst = max(errors.values()) if errors else 0.0
    return GradcheckReport(worst, tolerance, errors)


def numeric_grad(fn, x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        plus = fn(x)
        flat[i] = old - h
        minus = fn(x)
        flat[i] = old
        g.reshape(-1)[i] = (plus - minus) / (2 * h)
    return g
