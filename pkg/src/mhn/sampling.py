"""Multiscale clip sampling and per-scale appearance-motion sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, concat, matmul
from .errors import DimensionError


def sequence_length(T, n):
    """Rows in the scale-``n`` sequence: ``2**(n-1)`` clips of T appearance rows plus one motion row."""
    if T < 1 or n < 1:
        raise DimensionError(f"sequence_length needs T >= 1 and n >= 1, got T={T}, n={n}")
    return 2 ** (n - 1) * (T + 1)


def clips_at_scale(n):
    return 2 ** (n - 1)


@dataclass(frozen=True)
class ClipPlan:
    scale: int
    clips: tuple  # tuple of tuples of frame indices, each of length T

    @property
    def indices(self):
        return [i for clip in self.clips for i in clip]


def sample_clip_indices(F, T, n):
    """Uniform-stride frame choice for scale ``n``.

    ``K = T * 2**(n-1)`` indices ``floor(j * F / K)``; short videos wrap around
    (modulo F) so the plan is always full.
    """
    if F < 1 or T < 1 or n < 1:
        raise DimensionError(f"sample_clip_indices needs F, T, n >= 1, got F={F}, T={T}, n={n}")
    K = T * clips_at_scale(n)
    idx = (np.arange(K, dtype=np.int64) * F) // K
    if F < K:
        idx = idx % F
    clips = tuple(tuple(int(i) for i in idx[c * T:(c + 1) * T]) for c in range(clips_at_scale(n)))
    return ClipPlan(scale=n, clips=clips)


@dataclass
class FeatureRecord:
    video_id: str
    appearance: np.ndarray  # [F, D_app]
    motion: np.ndarray      # [F, D_mot]

    def __post_init__(self):
        if self.appearance.ndim != 2 or self.motion.ndim != 2:
            raise DimensionError("feature matrices must be 2-D")
        if self.appearance.shape[0] < 1 or self.appearance.shape[0] != self.motion.shape[0]:
            raise DimensionError(
                f"{self.video_id}: appearance has {self.appearance.shape[0]} frames, "
                f"motion has {self.motion.shape[0]}")

    @property
    def frames(self):
        return self.appearance.shape[0]


@dataclass
class ScaleBundle:
    scale: int
    sequence: Tensor  # [L, d]

    @property
    def length(self):
        return self.sequence.shape[-2]


def gather_clip_features(record, plan):
    """Raw rows for one plan: ``([C*T, D_app], [C, D_mot])``.

    The motion row of a clip is the mean of its frames' motion latents.
    """
    idx = np.asarray(plan.indices, dtype=np.int64)
    if idx.size and idx.max() >= record.frames:
        raise DimensionError(f"plan index {idx.max()} outside {record.frames} frames")
    app = record.appearance[idx]
    T = len(plan.clips[0])
    mot = record.motion[idx].reshape(len(plan.clips), T, -1).mean(axis=1)
    return app, mot


def assemble_batch(app, mot, app_w, app_b, mot_w, mot_b, pos_emb):
    """Project and interleave a batch of gathered clip features.

    ``app``: ``[B, C*T, D_app]``, ``mot``: ``[B, C, D_mot]``. Returns ``[B, C*(T+1), d]``
    with each clip's T appearance rows followed by its motion row, plus ``pos_emb``.
    """
    app = np.asarray(app, dtype=np.float64)
    mot = np.asarray(mot, dtype=np.float64)
    B, CT, d_app = app.shape
    C = mot.shape[1]
    if app_w.shape[0] != d_app:
        raise DimensionError(f"appearance projection expects {app_w.shape[0]} inputs, features have {d_app}")
    if mot_w.shape[0] != mot.shape[2]:
        raise DimensionError(f"motion projection expects {mot_w.shape[0]} inputs, features have {mot.shape[2]}")
    if app_w.shape[1] != mot_w.shape[1]:
        raise DimensionError(f"projection widths differ: {app_w.shape[1]} vs {mot_w.shape[1]}")
    d = app_w.shape[1]
    T = CT // C
    L = C * (T + 1)
    if pos_emb.shape != (L, d):
        raise DimensionError(f"positional table is {pos_emb.shape}, sequence needs {(L, d)}")
    va = (matmul(Tensor(app), app_w) + app_b).reshape(B, C, T, d)
    vm = (matmul(Tensor(mot), mot_w) + mot_b).reshape(B, C, 1, d)
    x = concat([va, vm], axis=2).reshape(B, L, d)
    return x + pos_emb


def assemble_scale(record, plan, app_w, app_b, mot_w, mot_b, pos_emb):
    app, mot = gather_clip_features(record, plan)
    x = assemble_batch(app[None], mot[None], app_w, app_b, mot_w, mot_b, pos_emb)
    return ScaleBundle(scale=plan.scale, sequence=x.reshape(x.shape[1], x.shape[2]))
