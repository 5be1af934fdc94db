"""Minimal double-precision neural network core (numpy only)."""

from .functional import (
    attention,
    batchnorm1d,
    conv1d,
    conv1d_backward,
    conv1d_forward,
    cross_entropy,
    dense,
    dropout,
    lstm_cell,
    maxpool1d,
    sigmoid,
    softmax,
)
from .gradcheck import GradcheckReport, gradcheck
from .layers import Parameter
from .optim import OptimizerConfig, rmsprop_step

__all__ = [
    "GradcheckReport",
    "OptimizerConfig",
    "Parameter",
    "attention",
    "batchnorm1d",
    "conv1d",
    "conv1d_backward",
    "conv1d_forward",
    "cross_entropy",
    "dense",
    "dropout",
    "gradcheck",
    "lstm_cell",
    "maxpool1d",
    "rmsprop_step",
    "sigmoid",
    "softmax",
]
