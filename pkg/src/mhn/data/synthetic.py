"""Synthetic video QA data whose answers live at different temporal granularities.

Each video has F frames with three latent tracks:

* an object per run of ``object_run`` frames; appearance row = ``E_app[object] + noise``.
  ``frameqa_attr`` asks for the majority object.
* a background motion motif, ``a`` for the first half and ``b`` for the second,
  plus an action motif ``g`` overlaid in ``count`` short bursts of 2 frames.
  ``transition`` is multiple choice over (before, after) pairs, ``action`` asks
  for ``g`` and ``count`` for the number of bursts.
* a rhythm motif ``r`` modulated by ``cos(2*pi*t / rhythm_period)``. Averaging
  over a clip whose frames are ``rhythm_period`` apart keeps it; finer clips
  sample a whole period and cancel it. The ``mixed`` task asks about objects,
  actions or rhythms, so no single temporal scale can answer every question.

Motion row t is ``E_mot[base_t] + gain * burst_t * E_act[g] + cos(.) * E_rhy[r] + noise``.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError
from ..sampling import FeatureRecord
from ..text import Vocab
from .features import write_features
from .records import QARecord, write_records

DEFAULT_TASKS = ("frameqa_attr", "action", "transition", "count")
ALL_TASKS = DEFAULT_TASKS + ("mixed",)
SPLITS = ("train", "val", "test")

QUESTIONS = {
    "frameqa_attr": ["what", "object", "appears", "most"],
    "action": ["what", "action", "repeats"],
    "transition": ["what", "happens", "before", "and", "after"],
    "count": ["how", "many", "times", "does", "the", "action", "repeat"],
}
MIXED_QUESTIONS = {
    "object": ["which", "object", "is", "shown", "most"],
    "action": ["which", "action", "is", "repeated"],
    "rhythm": ["which", "rhythm", "does", "the", "video", "follow"],
}


@dataclass
class SyntheticConfig:
    n_train: int = 1000
    n_val: int = 200
    n_test: int = 200
    frames: int = 32
    n_objects: int = 8
    n_motifs: int = 8
    d_app: int = 32
    d_mot: int = 32
    sigma: float = 0.3
    count_min: int = 1
    count_max: int = 6
    n_candidates: int = 4
    rhythm_period: int = 8
    action_gain: float = 4.0
    object_run: int = 4
    majority_runs: int = 4
    tasks: list = field(default_factory=lambda: list(DEFAULT_TASKS))
    seed: int = 0

    def validate(self):
        bad = []
        for name in ("n_train", "n_val", "n_test", "frames", "n_objects", "n_motifs", "d_app", "d_mot",
                     "rhythm_period", "object_run", "majority_runs"):
            if getattr(self, name) < 1:
                bad.append(f"{name} must be >= 1")
        if self.sigma < 0:
            bad.append("sigma must be >= 0")
        if self.frames % 4:
            bad.append("frames must be a multiple of 4")
        if self.n_objects < 2 or self.n_motifs < 4:
            bad.append("need n_objects >= 2 and n_motifs >= 4")
        if not 1 <= self.count_min <= self.count_max <= self.frames // 4:
            bad.append(f"count range must satisfy 1 <= min <= max <= frames/4 = {self.frames // 4}")
        if self.frames % self.object_run:
            bad.append("frames must be a multiple of object_run")
        runs = self.frames // self.object_run
        # the other objects must be able to share the remaining runs without tying
        if not (2 <= self.majority_runs <= runs
                and runs - self.majority_runs <= (self.majority_runs - 1) * (self.n_objects - 1)):
            bad.append(f"majority_runs={self.majority_runs} cannot give a strict plurality over {runs} runs")
        if not 2 <= self.n_candidates <= self.n_motifs * (self.n_motifs - 1):
            bad.append(f"n_candidates must be in [2, {self.n_motifs * (self.n_motifs - 1)}]")
        unknown = [t for t in self.tasks if t not in ALL_TASKS]
        if unknown:
            bad.append(f"unknown tasks {unknown}; valid: {list(ALL_TASKS)}")
        if bad:
            raise ConfigError("invalid synthetic config: " + "; ".join(bad))

    def to_dict(self):
        return asdict(self)


def answer_spaces(cfg):
    objects = [f"obj{i}" for i in range(cfg.n_objects)]
    motifs = [f"act{i}" for i in range(cfg.n_motifs)]
    rhythms = [f"rhy{i}" for i in range(cfg.n_motifs)]
    return {
        "frameqa_attr": {"kind": "open_ended", "classes": objects},
        "action": {"kind": "open_ended", "classes": motifs},
        "mixed": {"kind": "open_ended", "classes": objects + motifs + rhythms},
        "count": {"kind": "count", "classes": [], "count_min": cfg.count_min, "count_max": cfg.count_max},
        "transition": {"kind": "multi_choice", "classes": [], "num_candidates": cfg.n_candidates},
    }


def build_vocab(cfg):
    vocab = Vocab()
    for q in list(QUESTIONS.values()) + list(MIXED_QUESTIONS.values()):
        for tok in q:
            vocab.add(tok)
    vocab.add("then")
    for i in range(cfg.n_motifs):
        vocab.add(f"move{i}")
    return vocab


def _balanced(rng, n, values):
    """``n`` labels cycling through ``values``, then shuffled."""
    values = np.asarray(values)
    return values[rng.permutation(np.arange(n) % len(values))]


class _Tables:
    def __init__(self, cfg, rng):
        self.app = rng.normal(size=(cfg.n_objects, cfg.d_app))
        self.mot = rng.normal(size=(cfg.n_motifs, cfg.d_mot))
        self.act = rng.normal(size=(cfg.n_motifs, cfg.d_mot))
        self.rhy = rng.normal(size=(cfg.n_motifs, cfg.d_mot))


def _video_latents(cfg, rng, majority, action, count, rhythm):
    F = cfg.frames
    runs = F // cfg.object_run
    others = [o for o in range(cfg.n_objects) if o != majority]
    while True:
        rest = rng.choice(others, size=runs - cfg.majority_runs)
        if runs - cfg.majority_runs == 0 or np.bincount(rest).max() < cfg.majority_runs:
            break
    run_obj = np.concatenate([np.full(cfg.majority_runs, majority), rest])
    run_obj = run_obj[rng.permutation(runs)]
    objects = np.repeat(run_obj, cfg.object_run)

    a, b = rng.choice(cfg.n_motifs, size=2, replace=False)
    base = np.where(np.arange(F) < F // 2, a, b)

    slots = rng.choice(F // 4, size=count, replace=False)
    burst = np.zeros(F, dtype=bool)
    for s in slots:
        start = 4 * s + rng.integers(0, 2)
        burst[start:start + 2] = True
    return {"objects": objects, "base": base, "pair": (int(a), int(b)), "burst": burst,
            "action": int(action), "rhythm": int(rhythm)}


def _render(cfg, tables, lat, rng):
    F = cfg.frames
    t = np.arange(F)
    app = tables.app[lat["objects"]]
    phase = np.cos(2 * np.pi * t / cfg.rhythm_period)[:, None]
    mot = (tables.mot[lat["base"]] + cfg.action_gain * lat["burst"][:, None] * tables.act[lat["action"]]
           + phase * tables.rhy[lat["rhythm"]])
    if cfg.sigma > 0:
        app = app + rng.normal(scale=cfg.sigma, size=app.shape)
        mot = mot + rng.normal(scale=cfg.sigma, size=mot.shape)
    return app, mot


def _transition_candidates(cfg, rng, pair):
    a, b = pair
    pool = [(x, y) for x in range(cfg.n_motifs) for y in range(cfg.n_motifs)
            if x != y and (x, y) not in ((a, b), (b, a))]
    picks = rng.choice(len(pool), size=cfg.n_candidates - 2, replace=False)
    cands = [(a, b), (b, a)] + [pool[i] for i in picks]
    order = rng.permutation(len(cands))
    cands = [cands[i] for i in order]
    correct = int(np.where(order == 0)[0][0])
    return [[f"move{x}", "then", f"move{y}"] for x, y in cands], correct


def generate_split(cfg, tables, rng, split, n):
    # the mixed answer is balanced over the union of classes; it pins one latent
    # per video and the remaining videos get their own balanced draw
    blocks = (cfg.n_objects, cfg.n_motifs, cfg.n_motifs)
    mixed = _balanced(rng, n, range(sum(blocks)))
    mixed_kind = np.searchsorted(np.cumsum(blocks), mixed, side="right")
    latent = []
    for kind, size in enumerate(blocks):
        values = np.empty(n, dtype=np.int64)
        pinned = mixed_kind == kind
        values[pinned] = mixed[pinned] - sum(blocks[:kind])
        values[~pinned] = _balanced(rng, int((~pinned).sum()), range(size))
        latent.append(values)
    majority, action, rhythm = latent
    count = _balanced(rng, n, range(cfg.count_min, cfg.count_max + 1))
    features, records, latents = [], [], []
    for i in range(n):
        vid = f"{split}_{i:05d}"
        lat = _video_latents(cfg, rng, int(majority[i]), int(action[i]), int(count[i]), int(rhythm[i]))
        app, mot = _render(cfg, tables, lat, rng)
        features.append(FeatureRecord(vid, app, mot))
        latents.append(lat)
        for task in cfg.tasks:
            if task == "frameqa_attr":
                records.append(QARecord(vid, task, QUESTIONS[task], int(majority[i])))
            elif task == "action":
                records.append(QARecord(vid, task, QUESTIONS[task], int(action[i])))
            elif task == "count":
                records.append(QARecord(vid, task, QUESTIONS[task], int(count[i])))
            elif task == "transition":
                cands, correct = _transition_candidates(cfg, rng, lat["pair"])
                records.append(QARecord(vid, task, QUESTIONS[task], correct, cands))
            else:
                kind = ("object", "action", "rhythm")[mixed_kind[i]]
                offset = {"object": 0, "action": cfg.n_objects, "rhythm": cfg.n_objects + cfg.n_motifs}[kind]
                label = {"object": majority[i], "action": action[i], "rhythm": rhythm[i]}[kind]
                records.append(QARecord(vid, task, MIXED_QUESTIONS[kind], int(offset + label)))
    return features, records, latents


def probe_majority_object(cfg, tables, features, records):
    """Closed-form linear probe: solve mean appearance against the object table.

    The mean appearance row equals ``fractions @ E_app``; least squares recovers
    the object fractions and their argmax is the majority object.
    """
    pinv = np.linalg.pinv(tables.app)
    answers = {r.video_id: r.answer for r in records if r.task == "frameqa_attr"}
    hits = [int(np.argmax(rec.appearance.mean(axis=0) @ pinv) == answers[rec.video_id])
            for rec in features if rec.video_id in answers]
    return float(np.mean(hits)) if hits else None


def generate_synthetic(cfg, out_dir):
    """Write features, QA records, vocab and answer spaces under ``out_dir``."""
    cfg.validate()
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    tables = _Tables(cfg, rng)
    all_features = []
    summary = {}
    for split, n in zip(SPLITS, (cfg.n_train, cfg.n_val, cfg.n_test)):
        feats, recs, _ = generate_split(cfg, tables, rng, split, n)
        write_records(os.path.join(out_dir, f"{split}.jsonl"), recs)
        all_features.extend(feats)
        summary[split] = {"videos": n, "records": len(recs)}

    write_features(os.path.join(out_dir, "features.mhnf"), all_features)
    build_vocab(cfg).save(os.path.join(out_dir, "vocab.json"))
    with open(os.path.join(out_dir, "answers.json"), "w", encoding="utf-8") as fh:
        json.dump(answer_spaces(cfg), fh, indent=1)

    probe = None
    if "frameqa_attr" in cfg.tasks:
        # noise-free copy of the training videos for the solvability probe
        clean = SyntheticConfig(**{**cfg.to_dict(), "sigma": 0.0})
        prng = np.random.default_rng(cfg.seed)
        ptables = _Tables(clean, prng)
        feats, recs, _ = generate_split(clean, ptables, prng, "train", cfg.n_train)
        probe = probe_majority_object(clean, ptables, feats, recs)
    meta = {"config": cfg.to_dict(), "splits": summary, "probe_frameqa_attr_sigma0": probe}
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    return meta
