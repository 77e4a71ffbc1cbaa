"""Run configuration, dataset batching, the training loop and evaluation."""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import AdamState, adam_step, no_grad
from .data.checkpoint import load_checkpoint, save_checkpoint
from .data.features import load_feature_map
from .data.records import TASK_KIND, read_records
from .decoders import AnswerSpace, round_count, task_loss
from .errors import ConfigError
from .model import FUSION_MODES, FUSION_SCALES, MHN, PVR_INPUTS, Batch, ModelConfig
from .sampling import gather_clip_features, sample_clip_indices
from .text import Vocab, pad_batch

log = logging.getLogger(__name__)

SCHEDULES = ("plateau", "fixed")


@dataclass
class ModelSection:
    d: int = 64
    heads: int = 4
    n_levels: int = 3
    T: int = 4
    scales: list | None = None
    recurrence: bool = True
    share_pvr: bool = True
    pvr_input: str = "all"
    fusion_question: str = "per_level"
    fusion_scale: str = "sqrt_d"
    embed_dim: int = 300
    ffn_mult: int = 4


@dataclass
class OptimSection:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 10
    schedule: str = "plateau"
    min_delta: float = 1e-4  # relative improvement that resets the plateau counter


@dataclass
class RunConfig:
    """One training run. Defaults are desk-scale; ``published_defaults()`` gives the published setting."""

    model: ModelSection = field(default_factory=ModelSection)
    optim: OptimSection = field(default_factory=OptimSection)
    data_dir: str = "data"
    task: str = "frameqa_attr"
    seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelSection(**self.model)
        if isinstance(self.optim, dict):
            self.optim = OptimSection(**self.optim)

    def validate(self):
        m, o = self.model, self.optim
        bad = []
        if m.d % 2:
            bad.append(f"model.d={m.d} must be even")
        if m.heads < 1 or m.d % m.heads:
            bad.append(f"model.d={m.d} must be divisible by model.heads={m.heads}")
        if m.n_levels < 1:
            bad.append("model.n_levels must be >= 1")
        if m.T < 1:
            bad.append("model.T must be >= 1")
        if m.scales is not None:
            ok_perm = sorted(m.scales) == list(range(1, m.n_levels + 1))
            ok_single = len(m.scales) == m.n_levels and len(set(m.scales)) == 1 and m.scales[0] >= 1
            if not (ok_perm or ok_single):
                bad.append(f"model.scales={m.scales} must be a permutation of 1..{m.n_levels} "
                           "or a single repeated scale")
        if o.lr <= 0:
            bad.append("optim.lr must be > 0")
        if o.batch_size < 1:
            bad.append("optim.batch_size must be >= 1")
        if o.max_epochs < 1:
            bad.append("optim.max_epochs must be >= 1")
        if o.patience < 1:
            bad.append("optim.patience must be >= 1")
        if o.schedule not in SCHEDULES:
            bad.append(f"optim.schedule={o.schedule!r} not in {SCHEDULES}")
        for name, value, allowed in (("pvr_input", m.pvr_input, PVR_INPUTS),
                                     ("fusion_question", m.fusion_question, FUSION_MODES),
                                     ("fusion_scale", m.fusion_scale, FUSION_SCALES)):
            if value not in allowed:
                bad.append(f"model.{name}={value!r} not in {allowed}")
        if self.task not in TASK_KIND:
            bad.append(f"task={self.task!r} not in {sorted(TASK_KIND)}")
        if bad:
            raise ConfigError("invalid run config: " + "; ".join(bad))
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"model", "optim", "data_dir", "task", "seed", "out_dir"}
        if unknown:
            raise ConfigError(f"unknown run config fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"invalid run config: {exc}") from None

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def published_defaults(**overrides):
    """The published training setting (d=512, H=8, N=3, T=16, batch 32, 20 epochs, lr 1e-4)."""
    cfg = RunConfig(model=ModelSection(d=512, heads=8, n_levels=3, T=16),
                    optim=OptimSection(lr=1e-4, batch_size=32, max_epochs=20, patience=10))
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------


class QADataset:
    """Records of one task with their clip features gathered for every scale the model reads."""

    def __init__(self, records, features, vocab, T, scales):
        self.records = records
        self.vocab = vocab
        self.scales = sorted(set(scales))
        self.app = {}
        self.mot = {}
        cache = {}
        for rec in records:
            if rec.video_id not in features:
                raise ConfigError(f"no features for video {rec.video_id!r}")
        for n in self.scales:
            apps, mots = [], []
            for rec in records:
                key = (rec.video_id, n)
                if key not in cache:
                    feat = features[rec.video_id]
                    cache[key] = gather_clip_features(feat, sample_clip_indices(feat.frames, T, n))
                a, m = cache[key]
                apps.append(a)
                mots.append(m)
            self.app[n] = np.stack(apps) if apps else None
            self.mot[n] = np.stack(mots) if mots else None
        self.q_ids = [vocab.encode(r.question) for r in records]
        self.targets = np.array([r.answer for r in records])
        self.cands = None
        if records and records[0].candidates is not None:
            self.cands = [[vocab.encode(c) for c in r.candidates] for r in records]

    def __len__(self):
        return len(self.records)

    def batch(self, idx):
        idx = np.asarray(idx)
        q_ids, q_mask = pad_batch([self.q_ids[i] for i in idx])
        cand_ids = cand_mask = None
        if self.cands is not None:
            flat = [c for i in idx for c in self.cands[i]]
            K = len(self.cands[idx[0]])
            ids, mask = pad_batch(flat)
            cand_ids = ids.reshape(len(idx), K, -1)
            cand_mask = mask.reshape(len(idx), K, -1)
        return Batch(app={n: self.app[n][idx] for n in self.scales},
                     mot={n: self.mot[n][idx] for n in self.scales},
                     q_ids=q_ids, q_mask=q_mask, target=self.targets[idx],
                     cand_ids=cand_ids, cand_mask=cand_mask)

    def batches(self, batch_size, order=None):
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            yield self.batch(order[start:start + batch_size])


def load_task_data(data_dir, task):
    """Answer space, vocab, feature map and per-split records for one task."""
    with open(os.path.join(data_dir, "answers.json"), encoding="utf-8") as fh:
        spaces = json.load(fh)
    if task not in spaces:
        raise ConfigError(f"dataset at {data_dir} has no answer space for task {task!r}")
    space = AnswerSpace(**spaces[task])
    vocab = Vocab.load(os.path.join(data_dir, "vocab.json"))
    features = load_feature_map(os.path.join(data_dir, "features.mhnf"))
    splits = {}
    for split in ("train", "val", "test"):
        path = os.path.join(data_dir, f"{split}.jsonl")
        if os.path.exists(path):
            splits[split] = read_records(path, task=task)
    if not splits.get("train"):
        raise ConfigError(f"no {task!r} training records in {data_dir}")
    return space, vocab, features, splits


def model_config_for(run, space, vocab, features):
    first = next(iter(features.values()))
    m = run.model
    return ModelConfig(d=m.d, heads=m.heads, n_levels=m.n_levels, T=m.T, scales=m.scales,
                       recurrence=m.recurrence, share_pvr=m.share_pvr, pvr_input=m.pvr_input,
                       fusion_question=m.fusion_question, fusion_scale=m.fusion_scale, embed_dim=m.embed_dim, ffn_mult=m.ffn_mult,
                       vocab_size=len(vocab), d_app=first.appearance.shape[1],
                       d_mot=first.motion.shape[1], answer=space)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def median_baseline(train_targets, space):
    """Constant prediction: the training median, rounded and clamped like the model's output."""
    return int(round_count(np.median(train_targets), space.count_min, space.count_max))


def evaluate(model, dataset, batch_size=64, baseline_value=None):
    """Task metric plus mean loss over ``dataset``.

    Accuracy for open-ended / multi-choice, MSE of rounded predictions for count.
    """
    kind = model.cfg.answer.kind
    preds, losses, sizes = [], [], []
    with no_grad():
        for b in dataset.batches(batch_size):
            out = model.forward(b)
            losses.append(task_loss(kind, out, b.target).item())
            sizes.append(b.size)
            preds.append(model.predict_from_output(out.data))
    preds = np.concatenate(preds)
    targets = dataset.targets
    result = {"n": int(len(targets)), "loss": float(np.average(losses, weights=sizes))}
    if kind == "count":
        result["mse"] = float(np.mean((preds - targets) ** 2))
        if baseline_value is not None:
            result["baseline_mse"] = float(np.mean((baseline_value - targets) ** 2))
            result["baseline_value"] = baseline_value
    else:
        result["accuracy"] = float(np.mean(preds == targets))
    return result


def metric_name(kind):
    return "mse" if kind == "count" else "accuracy"


def better(kind, new, best):
    if best is None:
        return True
    return new < best if kind == "count" else new > best


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class LRSchedule:
    """Halve the learning rate on a validation-loss plateau (or on a fixed epoch period)."""

    def __init__(self, mode="plateau", patience=10, min_delta=1e-4):
        self.mode = mode
        self.patience = patience
        self.min_delta = min_delta
        self.best = None
        self.bad_epochs = 0

    def step(self, epoch, val_loss, state):
        halved = False
        if self.mode == "fixed":
            if epoch % self.patience == 0:
                state.lr *= 0.5
                halved = True
            return halved
        if self.best is None or val_loss < self.best * (1.0 - self.min_delta):
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                state.lr *= 0.5
                self.bad_epochs = 0
                halved = True
        return halved


@dataclass
class TrainResult:
    model: MHN
    metrics: list
    checkpoint: str
    best: dict
    test: dict | None = None


def build_datasets(run, space, vocab, features, splits):
    cfg = model_config_for(run, space, vocab, features)
    sets = {name: QADataset(recs, features, vocab, cfg.T, cfg.scales) for name, recs in splits.items()}
    return cfg, sets


def train(run, data=None, log_every=0, write_files=True, on_epoch=None):
    """Train one model; keeps the best-validation checkpoint under ``run.out_dir``.

    ``data`` may carry a preloaded ``load_task_data`` tuple to skip disk reads.
    ``on_epoch`` is called with each metrics entry as it is produced.
    """
    run.validate()
    space, vocab, features, splits = data if data is not None else load_task_data(run.data_dir, run.task)
    if space.kind != TASK_KIND[run.task]:
        raise ConfigError(f"task {run.task!r} expects a {TASK_KIND[run.task]} answer space, got {space.kind}")
    cfg, sets = build_datasets(run, space, vocab, features, splits)
    train_set = sets["train"]
    val_set = sets.get("val") or train_set
    model = MHN(cfg, seed=run.seed)
    opt = run.optim
    state = AdamState(lr=opt.lr, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)
    sched = LRSchedule(opt.schedule, opt.patience, opt.min_delta)
    rng = np.random.default_rng(run.seed + 7919)
    kind = space.kind
    baseline = median_baseline(train_set.targets, space) if kind == "count" else None

    if write_files:
        os.makedirs(run.out_dir, exist_ok=True)
        with open(os.path.join(run.out_dir, "config.json"), "w", encoding="utf-8") as fh:
            json.dump(run.to_dict(), fh, indent=1)
    ckpt_path = os.path.join(run.out_dir, "best.ckpt")
    metrics_path = os.path.join(run.out_dir, "metrics.jsonl")
    if write_files and os.path.exists(metrics_path):
        os.remove(metrics_path)

    metrics = []
    best_metric, best_state, best = None, None, None
    for epoch in range(1, opt.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_set))
        total, seen = 0.0, 0
        for b in train_set.batches(opt.batch_size, order):
            loss = model.loss(b)
            loss.backward()
            adam_step(model.params, state)
            total += loss.item() * b.size
            seen += b.size
        lr_used = state.lr
        val = evaluate(model, val_set, baseline_value=baseline)
        halved = sched.step(epoch, val["loss"], state)
        entry = {"epoch": epoch, "train_loss": total / seen, "val_loss": val["loss"],
                 metric_name(kind): val[metric_name(kind)], "lr": lr_used, "lr_halved": halved,
                 "wall_time": time.perf_counter() - t0}
        metrics.append(entry)
        if write_files:
            with open(metrics_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry) + "\n")
        if on_epoch is not None:
            on_epoch(entry)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d train %.4f val %.4f %s %.4f lr %.2e", epoch, entry["train_loss"],
                     val["loss"], metric_name(kind), val[metric_name(kind)], lr_used)
        if better(kind, val[metric_name(kind)], best_metric):
            best_metric = val[metric_name(kind)]
            best_state = model.params.state_dict()
            best = {"epoch": epoch, **val}
            if write_files:
                save_checkpoint(model.params, ckpt_path, config=cfg.to_dict(), step=state.step,
                                extra={"task": run.task, "epoch": epoch, "baseline_value": baseline})

    model.params.load_state_dict(best_state)
    result = TrainResult(model, metrics, ckpt_path if write_files else None, best)
    if "test" in sets:
        result.test = evaluate(model, sets["test"], baseline_value=baseline)
    return result


def load_model(path):
    """Rebuild a model from a checkpoint written by ``train``."""
    from .data.checkpoint import read_checkpoint

    manifest, _ = read_checkpoint(path)
    cfg = ModelConfig.from_dict(manifest["config"])
    model = MHN(cfg, seed=0)
    load_checkpoint(model.params, path)
    return model, manifest


def evaluate_checkpoint(path, data_dir, split="test", task=None):
    model, manifest = load_model(path)
    task = task or manifest.get("extra", {}).get("task")
    space, vocab, features, splits = load_task_data(data_dir, task)
    if space.to_dict() != model.cfg.answer.to_dict():
        raise ConfigError(f"checkpoint answer space does not match task {task!r} in {data_dir}")
    if split not in splits:
        raise ConfigError(f"no {split!r} split in {data_dir}")
    ds = QADataset(splits[split], features, vocab, model.cfg.T, model.cfg.scales)
    baseline = None
    if space.kind == "count":
        baseline = median_baseline(np.array([r.answer for r in splits["train"]]), space)
    return evaluate(model, ds, baseline_value=baseline)
