"""The full network: visual assembly, text encoding, RMI, PVR and the answer decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import ParamStore, no_grad
from .decoders import (AnswerSpace, add_decoder, count_raw, multichoice_predict,
                       multichoice_scores, open_ended_logits, round_count, task_loss)
from .errors import ConfigError
from .layers import add_linear
from .pvr import add_encoder, encode_level, encoder_prefixes, fuse_levels
from .rmi import add_interaction_block, add_recurrence, rmi_forward
from .sampling import assemble_batch, sequence_length
from .text import encode_text, init_text_params

FUSION_MODES = ("per_level", "final")
PVR_INPUTS = ("all", "last")
FUSION_SCALES = ("sqrt_d", "none")


@dataclass
class ModelConfig:
    d: int = 64
    heads: int = 4
    n_levels: int = 3
    T: int = 4
    scales: list | None = None  # scale fed to each level; default 1..N
    recurrence: bool = True
    share_pvr: bool = True
    pvr_input: str = "all"
    fusion_question: str = "per_level"
    fusion_scale: str = "sqrt_d"  # level scores divided by sqrt(d) before the softmax
    embed_dim: int = 300
    ffn_mult: int = 4
    vocab_size: int = 64
    d_app: int = 2048
    d_mot: int = 2048
    answer: AnswerSpace = field(default_factory=lambda: AnswerSpace("open_ended", ["yes", "no"]))

    def __post_init__(self):
        if isinstance(self.answer, dict):
            self.answer = AnswerSpace(**self.answer)
        if self.scales is None:
            self.scales = list(range(1, self.n_levels + 1))
        self.scales = [int(s) for s in self.scales]
        self.validate()

    @property
    def single_scale(self):
        return len(set(self.scales)) == 1 and self.n_levels > 1

    def validate(self):
        bad = []
        if self.d < 2 or self.d % 2:
            bad.append(f"d={self.d} must be even")
        if self.heads < 1 or self.d % self.heads:
            bad.append(f"d={self.d} must be divisible by heads={self.heads}")
        if self.n_levels < 1:
            bad.append(f"n_levels={self.n_levels} must be >= 1")
        if self.T < 1:
            bad.append(f"T={self.T} must be >= 1")
        if len(self.scales) != self.n_levels:
            bad.append(f"scales {self.scales} must list one scale per level ({self.n_levels})")
        elif not (sorted(self.scales) == list(range(1, self.n_levels + 1))
                  or (len(set(self.scales)) == 1 and self.scales[0] >= 1)):
            bad.append(f"scales {self.scales} must be a permutation of 1..{self.n_levels} "
                       "or one repeated scale")
        if self.pvr_input not in PVR_INPUTS:
            bad.append(f"pvr_input={self.pvr_input!r} not in {PVR_INPUTS}")
        if self.fusion_question not in FUSION_MODES:
            bad.append(f"fusion_question={self.fusion_question!r} not in {FUSION_MODES}")
        if self.fusion_scale not in FUSION_SCALES:
            bad.append(f"fusion_scale={self.fusion_scale!r} not in {FUSION_SCALES}")
        if self.vocab_size < 3:
            bad.append("vocab_size must be >= 3")
        if bad:
            raise ConfigError("invalid model config: " + "; ".join(bad))

    def to_dict(self):
        out = asdict(self)
        out["answer"] = self.answer.to_dict()
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


def build_params(cfg, seed=0):
    """Create every learnable tensor for ``cfg`` in a fixed order."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    d = cfg.d
    add_linear(store, rng, "visual.app", cfg.d_app, d)
    add_linear(store, rng, "visual.mot", cfg.d_mot, d)
    for n in sorted(set(cfg.scales)):
        store.add(f"visual.pos{n}", rng.normal(0.0, 0.02, size=(sequence_length(cfg.T, n), d)))
    init_text_params(store, rng, cfg.vocab_size, d, cfg.embed_dim)
    for level in range(1, cfg.n_levels + 1):
        if level > 1 and cfg.recurrence:
            add_recurrence(store, rng, f"rmi.align{level}", d)
        add_interaction_block(store, rng, f"rmi.block{level}", d, cfg.heads, cfg.ffn_mult)
    for prefix in dict.fromkeys(encoder_prefixes(_pvr_levels(cfg), cfg.share_pvr)):
        add_encoder(store, rng, prefix, d, cfg.heads, cfg.ffn_mult)
    add_decoder(store, rng, cfg.answer, d)
    return store


def _pvr_levels(cfg):
    return cfg.n_levels if cfg.pvr_input == "all" else 1


def encoder_param_count(cfg):
    """Parameters in one PVR encoder layer."""
    d, m = cfg.d, cfg.ffn_mult
    ln = 2 * d
    return 2 * ln + 4 * d * d + (d * m * d + m * d) + (m * d * d + d)


def param_breakdown(cfg):
    """Parameter counts per module (computed by building the store)."""
    store = build_params(cfg, seed=0)
    groups = {
        "visual.projection": store.count("visual.app") + store.count("visual.mot"),
        "visual.positional": store.count("visual.pos"),
        "text": store.count("text."),
        "rmi.blocks": store.count("rmi.block"),
        "rmi.recurrence": store.count("rmi.align"),
        "pvr": store.count("pvr."),
        "decoder": store.count("decoder."),
    }
    groups["total"] = store.count()
    # the positional tables are the only parameters whose size depends on T
    groups["total_without_positional"] = groups["total"] - groups["visual.positional"]
    return groups


@dataclass
class Batch:
    """One mini-batch. ``app[n]``/``mot[n]`` hold gathered raw features per scale."""

    app: dict
    mot: dict
    q_ids: np.ndarray
    q_mask: np.ndarray
    target: np.ndarray
    cand_ids: np.ndarray | None = None   # [B, K, La]
    cand_mask: np.ndarray | None = None

    @property
    def size(self):
        return self.q_ids.shape[0]


class MHN:
    def __init__(self, cfg, seed=0, params=None):
        self.cfg = cfg
        self.params = params if params is not None else build_params(cfg, seed)

    # -- pieces -----------------------------------------------------------
    def visual_inputs(self, app, mot, repeat=1):
        p = self.params
        out = {}
        for n in sorted(set(self.cfg.scales)):
            a, m = app[n], mot[n]
            if repeat > 1:
                a = np.repeat(a, repeat, axis=0)
                m = np.repeat(m, repeat, axis=0)
            out[n] = assemble_batch(a, m, p["visual.app.weight"], p["visual.app.bias"],
                                    p["visual.mot.weight"], p["visual.mot.bias"], p[f"visual.pos{n}"])
        return out

    def answer_feature(self, visual, ids, mask, trace=None):
        """Fused answer feature ``O`` ``[B, d]`` for text batch ``ids`` against ``visual``."""
        cfg = self.cfg
        q0 = encode_text(ids, mask, self.params)
        levels = [visual[n] for n in cfg.scales]
        outs = rmi_forward(levels, q0, self.params, cfg.heads, recurrence=cfg.recurrence,
                           q_mask=mask, trace=trace)
        if trace is not None:
            trace["levels"] = outs
        used = outs if cfg.pvr_input == "all" else outs[-1:]
        prefixes = encoder_prefixes(len(used), cfg.share_pvr)
        rs = [encode_level(o.x_hat, self.params, pre, cfg.heads, trace=trace)
              for o, pre in zip(used, prefixes)]
        if cfg.fusion_question == "final":
            q_hats = [outs[-1].q_hat] * len(used)
        else:
            q_hats = [o.q_hat for o in used]
        scale = 1.0 / np.sqrt(cfg.d) if cfg.fusion_scale == "sqrt_d" else 1.0
        fusion = fuse_levels(q_hats, rs, q_mask=mask, trace=trace, scale=scale)
        return fusion.o

    # -- task heads -------------------------------------------------------
    def forward(self, batch, trace=None):
        kind = self.cfg.answer.kind
        if kind != "multi_choice":
            visual = self.visual_inputs(batch.app, batch.mot)
            o = self.answer_feature(visual, batch.q_ids, batch.q_mask, trace)
            if kind == "open_ended":
                return open_ended_logits(o, self.params)
            return count_raw(o, self.params)
        B, K, La = batch.cand_ids.shape
        Lq = batch.q_ids.shape[1]
        L = max(Lq, La)
        ids = np.zeros((B, 1 + K, L), dtype=np.int64)
        mask = np.zeros((B, 1 + K, L), dtype=bool)
        ids[:, 0, :Lq] = batch.q_ids
        mask[:, 0, :Lq] = batch.q_mask
        ids[:, 1:, :La] = batch.cand_ids
        mask[:, 1:, :La] = batch.cand_mask
        # question and candidates go through the same network, sharing every parameter
        visual = self.visual_inputs(batch.app, batch.mot, repeat=1 + K)
        o = self.answer_feature(visual, ids.reshape(B * (1 + K), L), mask.reshape(B * (1 + K), L), trace)
        o = o.reshape(B, 1 + K, self.cfg.d)
        return multichoice_scores(o[:, 0, :], o[:, 1:, :], self.params)

    def loss(self, batch):
        return task_loss(self.cfg.answer.kind, self.forward(batch), batch.target)

    def predict_from_output(self, out):
        space = self.cfg.answer
        if space.kind == "open_ended":
            return np.argmax(out, axis=-1)
        if space.kind == "count":
            return round_count(out, space.count_min, space.count_max)
        return multichoice_predict(out)

    def predict(self, batch):
        with no_grad():
            out = self.forward(batch).data
        return self.predict_from_output(out), out
