"""Vocabulary handling and the bidirectional LSTM question/answer encoder."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, concat, embedding, matmul, sigmoid, stack, tanh
from .errors import ConfigError, EmptySequenceError
from .layers import glorot

PAD = "<pad>"
UNK = "<unk>"


class Vocab:
    """Token <-> id map. Id 0 is padding and id 1 the unknown token."""

    def __init__(self, tokens=()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: 0, UNK: 1}
        for tok in tokens:
            self.add(tok)

    pad_id = 0
    unk_id = 1

    def add(self, token):
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self):
        return len(self.itos)

    def encode(self, tokens):
        return [self.stoi.get(t, self.unk_id) for t in tokens]

    def decode(self, ids):
        return [self.itos[i] for i in ids]

    def to_json(self):
        return json.dumps(self.stoi, indent=1, sort_keys=False)

    @classmethod
    def from_dict(cls, mapping):
        v = cls.__new__(cls)
        v.itos = [None] * len(mapping)
        for tok, i in mapping.items():
            v.itos[int(i)] = tok
        if v.itos[0] != PAD or v.itos[1] != UNK or any(t is None for t in v.itos):
            raise ConfigError("vocab map must be dense with <pad>=0 and <unk>=1")
        v.stoi = {t: i for i, t in enumerate(v.itos)}
        return v

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def pad_batch(seqs, pad_id=0):
    """Right-pad id lists into ``(ids [B, L], mask [B, L])``."""
    if any(len(s) == 0 for s in seqs):
        raise EmptySequenceError("cannot encode an empty token sequence")
    L = max(len(s) for s in seqs)
    ids = np.full((len(seqs), L), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), L), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = True
    return ids, mask


def init_text_params(store, rng, vocab_size, d, embed_dim=300, prefix="text"):
    if d % 2:
        raise ConfigError(f"text encoder width d={d} must be even (split over two directions)")
    h = d // 2
    store.add(f"{prefix}.embed", rng.normal(0.0, 0.1, size=(vocab_size, embed_dim)))
    store.add(f"{prefix}.proj.weight", glorot(rng, embed_dim, d))
    store.add(f"{prefix}.proj.bias", np.zeros(d))
    for direction in ("fwd", "bwd"):
        store.add(f"{prefix}.lstm.{direction}.w_x", glorot(rng, d, 4 * h))
        store.add(f"{prefix}.lstm.{direction}.w_h", glorot(rng, h, 4 * h))
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0  # forget-gate bias
        store.add(f"{prefix}.lstm.{direction}.bias", b)


def _lstm_direction(xw, mask, w_h, bias, reverse):
    """Run one LSTM direction over pre-projected inputs ``xw`` [B, L, 4h]."""
    B, L, four_h = xw.shape
    h_dim = four_h // 4
    h = Tensor(np.zeros((B, h_dim)))
    c = Tensor(np.zeros((B, h_dim)))
    outs = [None] * L
    steps = range(L - 1, -1, -1) if reverse else range(L)
    for t in steps:
        z = xw[:, t, :] + matmul(h, w_h) + bias
        i = sigmoid(z[:, :h_dim])
        f = sigmoid(z[:, h_dim:2 * h_dim])
        g = tanh(z[:, 2 * h_dim:3 * h_dim])
        o = sigmoid(z[:, 3 * h_dim:])
        c_new = f * c + i * g
        h_new = o * tanh(c_new)
        m = mask[:, t:t + 1]
        if m.all():
            c, h = c_new, h_new
        else:
            # padded steps carry the previous state through unchanged
            keep = m.astype(np.float64)
            c = c_new * keep + c * (1.0 - keep)
            h = h_new * keep + h * (1.0 - keep)
        outs[t] = h
    return stack(outs, axis=1)


def encode_text(ids, mask, params, prefix="text"):
    """Contextual token encodings ``[B, L, d]`` for padded id batches.

    Embedding -> linear to d -> single-layer BiLSTM (d/2 per direction); row j
    is the forward state at j concatenated with the backward state at j.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
        mask = None if mask is None else np.asarray(mask)[None]
    if ids.shape[-1] == 0:
        raise EmptySequenceError("cannot encode an empty token sequence")
    if mask is None:
        mask = ids != 0
        mask[:, 0] = True
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise EmptySequenceError("a sequence in the batch has no tokens")
    emb = embedding(params[f"{prefix}.embed"], ids)
    x = matmul(emb, params[f"{prefix}.proj.weight"]) + params[f"{prefix}.proj.bias"]
    outs = []
    for direction, reverse in (("fwd", False), ("bwd", True)):
        p = f"{prefix}.lstm.{direction}"
        xw = matmul(x, params[f"{p}.w_x"])
        outs.append(_lstm_direction(xw, mask, params[f"{p}.w_h"], params[f"{p}.bias"], reverse))
    return concat(outs, axis=-1)


@dataclass
class TextEncoding:
    matrix: Tensor  # [L, d]

    @property
    def length(self):
        return self.matrix.shape[0]


def encode_tokens(tokens, params, prefix="text"):
    """Single unpadded id sequence -> TextEncoding ``[L, d]``."""
    tokens = list(tokens)
    if not tokens:
        raise EmptySequenceError("cannot encode an empty token sequence")
    ids = np.asarray(tokens, dtype=np.int64)[None]
    out = encode_text(ids, np.ones_like(ids, dtype=bool), params, prefix)
    return TextEncoding(out.reshape(out.shape[1], out.shape[2]))
