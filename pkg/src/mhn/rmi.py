"""Recurrent multimodal interaction: cross-modal attention blocks chained across levels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, matmul, softmax_last
from .errors import ConfigError, DimensionError
from .layers import add_ffn, add_layer_norm, ffn, glorot, norm


@dataclass
class MCAWeights:
    """Multi-head attention projections.

    The H per-head ``[d, d/H]`` query/key/value matrices are stored side by
    side as one ``[d, d]`` matrix each; head h owns columns ``h*d/H:(h+1)*d/H``.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int

    @classmethod
    def from_store(cls, params, prefix, heads):
        return cls(params[f"{prefix}.wq"], params[f"{prefix}.wk"], params[f"{prefix}.wv"],
                   params[f"{prefix}.wo"], heads)


def add_mca(store, rng, prefix, d, heads):
    if d % heads:
        raise ConfigError(f"d={d} is not divisible by H={heads}")
    for name in ("wq", "wk", "wv", "wo"):
        store.add(f"{prefix}.{name}", glorot(rng, d, d))


def _as_batch(x):
    return (x, False) if x.ndim == 3 else (x.reshape(1, *x.shape), True)


def attend(xq, xkv, w, key_mask=None, trace=None):
    """Multi-head attention of already-normalised query rows over key/value rows."""
    xq, squeeze = _as_batch(xq)
    xkv, _ = _as_batch(xkv)
    d = xq.shape[-1]
    if xkv.shape[-1] != d:
        raise DimensionError(f"mca: query width {d} vs key width {xkv.shape[-1]}")
    H = w.heads
    if d % H:
        raise ConfigError(f"d={d} is not divisible by H={H}")
    dh = d // H
    B, Lx, _ = xq.shape
    Lk = xkv.shape[1]
    fq = matmul(xq, w.wq).reshape(B, Lx, H, dh).transpose(0, 2, 1, 3)
    fk = matmul(xkv, w.wk).reshape(B, Lk, H, dh).transpose(0, 2, 3, 1)
    fv = matmul(xkv, w.wv).reshape(B, Lk, H, dh).transpose(0, 2, 1, 3)
    scores = matmul(fq, fk) * (1.0 / math.sqrt(d))
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[:, None, None, :]
    att = softmax_last(scores, mask)
    if trace is not None:
        trace.setdefault("attention", []).append(att.data)
    heads = matmul(att, fv).transpose(0, 2, 1, 3).reshape(B, Lx, d)
    out = matmul(heads, w.wo)
    return out.reshape(Lx, d) if squeeze else out


def mca(x, q, w, ln_x=None, ln_q=None, params=None, key_mask=None, trace=None):
    """Cross-modal attention: queries from ``x``, keys and values from ``q``.

    ``ln_x``/``ln_q`` name layer-norm parameter pairs in ``params``; when they
    are omitted the inputs are used as given.
    """
    if x.shape[-1] != q.shape[-1]:
        raise DimensionError(f"mca: x is {x.shape}, q is {q.shape}")
    xn = norm(x, params, ln_x) if ln_x else x
    qn = norm(q, params, ln_q) if ln_q else q
    return attend(xn, qn, w, key_mask=key_mask, trace=trace)


def add_interaction_block(store, rng, prefix, d, heads, ffn_mult=4):
    add_layer_norm(store, f"{prefix}.ln_x", d)
    add_layer_norm(store, f"{prefix}.ln_q", d)
    add_mca(store, rng, f"{prefix}.mca", d, heads)
    add_layer_norm(store, f"{prefix}.ln_ffn_x", d)
    add_ffn(store, rng, f"{prefix}.ffn_x", d, ffn_mult)
    add_ffn(store, rng, f"{prefix}.ffn_q", d, ffn_mult)


@dataclass
class LevelOutput:
    x_hat: Tensor
    q_hat: Tensor


def interaction_block(x_in, q_in, params, prefix, heads, q_mask=None, trace=None):
    """One level: cross-modal attention + FFN on the visual stream, FFN on the question stream."""
    w = MCAWeights.from_store(params, f"{prefix}.mca", heads)
    q_norm = norm(q_in, params, f"{prefix}.ln_q")
    x_att = mca(x_in, q_norm, w, ln_x=f"{prefix}.ln_x", params=params, key_mask=q_mask, trace=trace)
    x_tilde = x_in + x_att
    x_hat = x_tilde + ffn(norm(x_tilde, params, f"{prefix}.ln_ffn_x"), params, f"{prefix}.ffn_x")
    # the question stream reuses LN(Q_in) from the attention keys
    q_hat = q_in + ffn(q_norm, params, f"{prefix}.ffn_q")
    return LevelOutput(x_hat, q_hat)


def add_recurrence(store, rng, prefix, d):
    store.add(f"{prefix}.w1", glorot(rng, d, d))
    store.add(f"{prefix}.w2", glorot(rng, d, d))


def recurrent_align(x_cur, x_prev_hat, w1, w2, trace=None):
    """Bring the previous level's output onto the current level's time axis.

    ``x_cur + softmax((x_cur W1)(x_prev W2)^T / sqrt(d)) x_prev``, softmax over
    the previous level's rows.
    """
    if x_cur.shape[-1] != x_prev_hat.shape[-1]:
        raise DimensionError(f"recurrent_align: {x_cur.shape} vs {x_prev_hat.shape}")
    d = x_cur.shape[-1]
    scores = matmul(matmul(x_cur, w1), matmul(x_prev_hat, w2).swap_last()) * (1.0 / math.sqrt(d))
    att = softmax_last(scores)
    if trace is not None:
        trace.setdefault("alignment", []).append(att.data)
    return x_cur + matmul(att, x_prev_hat)


def rmi_forward(bundles, q0, params, heads, recurrence=True, q_mask=None, trace=None,
                prefix="rmi"):
    """Run the interaction blocks over per-level inputs (already in level order).

    Level 1 sees ``bundles[0]`` and ``q0``; level l > 1 sees the aligned input
    and the previous level's question output. Returns one LevelOutput per level.
    """
    if not bundles:
        raise ConfigError("rmi_forward needs at least one level")
    outputs = []
    q_in = q0
    prev = None
    for level, x in enumerate(bundles, start=1):
        x_in = x
        if prev is not None:
            if recurrence:
                x_in = recurrent_align(x, prev.x_hat, params[f"{prefix}.align{level}.w1"],
                                       params[f"{prefix}.align{level}.w2"], trace=trace)
            q_in = prev.q_hat
        out = interaction_block(x_in, q_in, params, f"{prefix}.block{level}", heads,
                                q_mask=q_mask, trace=trace)
        outputs.append(out)
        prev = out
    return outputs
