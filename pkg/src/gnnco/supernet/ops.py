"""Elementwise activation options with matching derivatives."""

from __future__ import annotations

import numpy as np


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


LEAKY_SLOPE = 0.01        # standalone activation option
ATTENTION_LEAKY_SLOPE = 0.2  # slope used inside attention scoring


# name -> (f(x), df(x, f(x)))
ACTIVATIONS = {
    "skip": (lambda x: x, lambda x, y: np.ones_like(x)),
    "linear": (lambda x: x, lambda x, y: np.ones_like(x)),
    "sigmoid": (_sigmoid, lambda x, y: y * (1.0 - y)),
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "relu": (lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(x.dtype)),
    "softplus": (_softplus, lambda x, y: _sigmoid(x)),
    "leaky_relu": (
        lambda x: np.where(x > 0, x, LEAKY_SLOPE * x),
        lambda x, y: np.where(x > 0, 1.0, LEAKY_SLOPE),
    ),
    "relu6": (
        lambda x: np.clip(x, 0.0, 6.0),
        lambda x, y: ((x > 0) & (x < 6)).astype(x.dtype),
    ),
    "elu": (
        lambda x: np.where(x > 0, x, np.expm1(x)),
        lambda x, y: np.where(x > 0, 1.0, np.exp(x)),
    ),
}


def leaky(x, slope=ATTENTION_LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


def dleaky(x, slope=ATTENTION_LEAKY_SLOPE):
    return np.where(x > 0, 1.0, slope)


def row_softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)
