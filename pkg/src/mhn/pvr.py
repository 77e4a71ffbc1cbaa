"""Parallel visual reasoning: a shared encoder layer per level, then question-guided fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, mean_pool_time, softmax_last, stack
from .errors import ConfigError
from .layers import add_ffn, add_layer_norm, ffn, norm
from .rmi import MCAWeights, add_mca, mca


def add_encoder(store, rng, prefix, d, heads, ffn_mult=4):
    add_layer_norm(store, f"{prefix}.ln_att", d)
    add_mca(store, rng, f"{prefix}.mca", d, heads)
    add_layer_norm(store, f"{prefix}.ln_ffn", d)
    add_ffn(store, rng, f"{prefix}.ffn", d, ffn_mult)


def encoder_prefixes(n_levels, shared, prefix="pvr"):
    """Parameter prefix used for each level's encoder pass."""
    if shared:
        return [f"{prefix}.encoder"] * n_levels
    return [f"{prefix}.encoder{i}" for i in range(1, n_levels + 1)]


def encode_level(x_hat, params, prefix, heads, trace=None):
    """Self-attention with residual, then feed-forward with residual."""
    w = MCAWeights.from_store(params, f"{prefix}.mca", heads)
    xn = norm(x_hat, params, f"{prefix}.ln_att")
    z = x_hat + mca(xn, xn, w, trace=trace)
    return z + ffn(norm(z, params, f"{prefix}.ln_ffn"), params, f"{prefix}.ffn")


@dataclass
class FusionOutput:
    o: Tensor           # [B, d] (or [d] for unbatched inputs)
    weights: np.ndarray  # [B, N] convex weights over levels


def fuse_levels(q_hats, rs, q_mask=None, trace=None, scale=1.0):
    """Pool each level over time, score it against its pooled question, softmax over levels.

    ``scale`` multiplies the dot-product scores before the softmax.
    """
    if not q_hats or len(q_hats) != len(rs):
        raise ConfigError(f"fuse_levels needs matching non-empty lists, got {len(q_hats)} and {len(rs)}")
    q_bars = [mean_pool_time(q, q_mask) for q in q_hats]
    r_bars = [mean_pool_time(r) for r in rs]
    scores = stack([(qb * rb).sum(axis=-1) for qb, rb in zip(q_bars, r_bars)], axis=-1)
    if scale != 1.0:
        scores = scores * scale
    alpha = softmax_last(scores)
    if trace is not None:
        trace.setdefault("fusion", []).append(alpha.data)
    r_stack = stack(r_bars, axis=-2)  # [..., N, d]
    o = (r_stack * alpha.reshape(*alpha.shape, 1)).sum(axis=-2)
    return FusionOutput(o, np.array(alpha.data))
