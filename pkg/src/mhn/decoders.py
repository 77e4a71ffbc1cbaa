"""Answer decoders and their training losses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import concat, cross_entropy, gelu, mse, relu, softmax_last
from .errors import ConfigError
from .layers import add_linear, linear

TASK_KINDS = ("open_ended", "count", "multi_choice")


@dataclass
class AnswerSpace:
    kind: str
    classes: list = field(default_factory=list)
    count_min: int = 1
    count_max: int = 10
    num_candidates: int = 4

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown answer kind {self.kind!r}; expected one of {TASK_KINDS}")
        if self.kind == "open_ended":
            if len(self.classes) < 2:
                raise ConfigError("open-ended answer space needs at least 2 classes")
            if len(set(self.classes)) != len(self.classes):
                raise ConfigError("open-ended classes must be unique")
        if self.count_min > self.count_max:
            raise ConfigError(f"count_min {self.count_min} > count_max {self.count_max}")
        if self.kind == "multi_choice" and self.num_candidates < 2:
            raise ConfigError("multi-choice needs at least 2 candidates")

    def to_dict(self):
        return {"kind": self.kind, "classes": list(self.classes), "count_min": self.count_min,
                "count_max": self.count_max, "num_candidates": self.num_candidates}


def add_decoder(store, rng, space, d, prefix="decoder"):
    if space.kind == "open_ended":
        add_linear(store, rng, f"{prefix}.hidden", d, d)
        add_linear(store, rng, f"{prefix}.out", d, len(space.classes))
    elif space.kind == "count":
        add_linear(store, rng, f"{prefix}.hidden", d, d)
        add_linear(store, rng, f"{prefix}.out", d, 1)
    else:
        add_linear(store, rng, f"{prefix}.layer1", 2 * d, d)
        add_linear(store, rng, f"{prefix}.layer2", d, 1)


def open_ended_logits(o, params, prefix="decoder"):
    y = gelu(linear(o, params, f"{prefix}.hidden"))
    return linear(y, params, f"{prefix}.out")


def open_ended_probs(o, params, prefix="decoder"):
    return softmax_last(open_ended_logits(o, params, prefix))


def count_raw(o, params, prefix="decoder"):
    """Un-rounded regression output, shape ``[...]``."""
    y = gelu(linear(o, params, f"{prefix}.hidden"))
    out = linear(y, params, f"{prefix}.out")
    return out.reshape(out.shape[:-1])


def round_count(raw, count_min, count_max):
    """Round half away from zero, then clamp into the count range."""
    raw = np.asarray(raw, dtype=np.float64)
    r = np.sign(raw) * np.floor(np.abs(raw) + 0.5)
    return np.clip(r, count_min, count_max).astype(np.int64)


def count_predict(o, params, space, prefix="decoder"):
    raw = count_raw(o, params, prefix).data
    out = round_count(raw, space.count_min, space.count_max)
    return int(out) if out.ndim == 0 else out


def multichoice_scores(o_q, o_a, params, prefix="decoder"):
    """Score K candidates: ``o_q`` is ``[..., d]``, ``o_a`` is ``[..., K, d]``; returns ``[..., K]``."""
    K = o_a.shape[-2]
    if K < 2:
        raise ConfigError(f"multi-choice scoring needs K >= 2, got {K}")
    q = o_q.reshape(*o_q.shape[:-1], 1, o_q.shape[-1])
    q = q * np.ones((K, 1))  # broadcast the question feature across candidates
    y = gelu(linear(concat([q, o_a], axis=-1), params, f"{prefix}.layer1"))
    p = linear(y, params, f"{prefix}.layer2")
    return p.reshape(p.shape[:-1])


def multichoice_predict(scores):
    """argmax over candidates; ties go to the lowest index."""
    return np.argmax(np.asarray(scores), axis=-1)


def hinge_loss(p, correct):
    """Summed pairwise hinge ``max(0, 1 + p_i - p_c)`` over incorrect candidates.

    ``p`` is ``[K]`` or ``[B, K]``; batched input returns the batch mean.
    """
    batched = p.ndim == 2
    if not batched:
        p = p.reshape(1, p.shape[0])
    correct = np.atleast_1d(np.asarray(correct, dtype=np.int64))
    B, K = p.shape
    if np.any(correct >= K) or np.any(correct < 0):
        raise ConfigError(f"correct index out of range for K={K}")
    pc = p[np.arange(B), correct].reshape(B, 1)
    wrong = np.ones((B, K))
    wrong[np.arange(B), correct] = 0.0
    per_sample = (relu(p - pc + 1.0) * wrong).sum(axis=-1)
    return per_sample.mean() if batched else per_sample.sum()


def task_loss(kind, output, target):
    if kind == "open_ended":
        return cross_entropy(output, target)
    if kind == "count":
        return mse(output, target)
    return hinge_loss(output, target)
