"""Parameter initialisers and the small dense building blocks reused by every module."""

import numpy as np

from .autograd import gelu, layer_norm, matmul


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def add_linear(store, rng, name, fan_in, fan_out, zero=False):
    w = np.zeros((fan_in, fan_out)) if zero else glorot(rng, fan_in, fan_out)
    store.add(f"{name}.weight", w)
    store.add(f"{name}.bias", np.zeros(fan_out))


def add_layer_norm(store, name, d):
    store.add(f"{name}.gamma", np.ones(d))
    store.add(f"{name}.beta", np.zeros(d))


def add_ffn(store, rng, name, d, mult=4):
    add_linear(store, rng, f"{name}.fc1", d, mult * d)
    add_linear(store, rng, f"{name}.fc2", mult * d, d)


def linear(x, params, name):
    w = params[f"{name}.weight"]
    if x.ndim == 1:
        return matmul(x.reshape(1, x.shape[0]), w).reshape(w.shape[1]) + params[f"{name}.bias"]
    return matmul(x, w) + params[f"{name}.bias"]


def norm(x, params, name):
    return layer_norm(x, params[f"{name}.gamma"], params[f"{name}.beta"])


def ffn(x, params, name):
    """linear -> GELU -> linear, outer width unchanged."""
    return linear(gelu(linear(x, params, f"{name}.fc1")), params, f"{name}.fc2")
