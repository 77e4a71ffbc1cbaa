"""Multi-seed ablation runner: trains each model variant on a shared seed set."""

from __future__ import annotations

import copy
import itertools
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .model import encoder_param_count, param_breakdown
from .training import load_task_data, metric_name, model_config_for, train

log = logging.getLogger(__name__)

AXES = ("single_scale", "scale_order", "no_recurrence", "high_level_only_pvr", "no_weight_sharing", "n_scales")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def _variant(run, label, **model_changes):
    v = copy.deepcopy(run)
    for k, val in model_changes.items():
        setattr(v.model, k, val)
    return label, v


def variants(run, axis):
    """``[(label, RunConfig)]`` for one ablation axis; the first entry is the reference model."""
    N = run.model.n_levels
    default = list(range(1, N + 1))
    order = list(run.model.scales) if run.model.scales and sorted(run.model.scales) == default else default
    ref = _variant(run, f"multiscale {','.join(map(str, order))}", scales=order)
    if axis == "single_scale":
        return [ref] + [_variant(run, f"single scale n={n}", scales=[n] * N) for n in default]
    if axis == "scale_order":
        return [_variant(run, f"order {','.join(map(str, p))}", scales=list(p))
                for p in itertools.permutations(default)]
    if axis == "no_recurrence":
        return [ref, _variant(run, "w/o recurrence", scales=order, recurrence=False)]
    if axis == "high_level_only_pvr":
        return [ref, _variant(run, "pvr on last level only", scales=order, pvr_input="last")]
    if axis == "no_weight_sharing":
        return [ref, _variant(run, "w/o weight sharing", scales=order, share_pvr=False)]
    if axis == "n_scales":
        return [_variant(run, f"N={n}", n_levels=n, scales=list(range(1, n + 1))) for n in (2, 3, 4)]
    raise ConfigError(f"unknown ablation axis {axis!r}; valid axes: {', '.join(AXES)}")


@dataclass
class VariantResult:
    label: str
    metric: str
    values: list
    params: int
    encoder_params: int | None = None

    @property
    def mean(self):
        return float(np.mean(self.values))

    @property
    def std(self):
        return float(np.std(self.values))

    def to_dict(self):
        out = {"variant": self.label, "metric": self.metric, "mean": self.mean, "std": self.std,
               "values": self.values, "params": self.params}
        if self.encoder_params is not None:
            out["encoder_params"] = self.encoder_params
        return out


@dataclass
class AblationResult:
    axis: str
    task: str
    seeds: list
    split: str
    rows: list = field(default_factory=list)

    def to_dict(self):
        return {"axis": self.axis, "task": self.task, "seeds": self.seeds, "split": self.split,
                "variants": [r.to_dict() for r in self.rows]}

    def table(self):
        metric = self.rows[0].metric if self.rows else "metric"
        header = ["variant", f"{metric} mean", "std", "params"]
        body = [[r.label, f"{r.mean:.4f}", f"{r.std:.4f}", f"{r.params:,}"] for r in self.rows]
        widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
        fmt = lambda row: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)  # noqa: E731
                                    for i, (c, w) in enumerate(zip(row, widths)))
        lines = [f"ablation {self.axis} on {self.task} ({self.split} split, seeds {self.seeds})",
                 fmt(header), fmt(["-" * w for w in widths])]
        lines += [fmt(row) for row in body]
        return "\n".join(lines)


def ablate(run, axis, seeds=DEFAULT_SEEDS, data=None, split="test", out_dir=None):
    """Train every variant of ``axis`` once per seed and summarise ``split`` metrics.

    With ``out_dir`` set each run keeps its metrics and checkpoint under
    ``out_dir/<variant>/seed<k>``; otherwise nothing is written.
    """
    pairs = variants(run, axis)
    data = data if data is not None else load_task_data(run.data_dir, run.task)
    space, vocab, features, _ = data
    result = AblationResult(axis, run.task, list(seeds), split)
    for label, v in pairs:
        v.validate()
        cfg = model_config_for(v, space, vocab, features)
        values = []
        for seed in seeds:
            v.seed = int(seed)
            if out_dir:
                v.out_dir = os.path.join(out_dir, label.replace(" ", "_").replace("/", "").replace(",", "-"),
                                         f"seed{seed}")
            res = train(v, data=data, write_files=bool(out_dir))
            scores = res.test if split == "test" and res.test is not None else res.best
            values.append(float(scores[metric_name(space.kind)]))
            log.info("%s seed %d: %s %.4f", label, seed, metric_name(space.kind), values[-1])
        result.rows.append(VariantResult(
            label, metric_name(space.kind), values, param_breakdown(cfg)["total"],
            encoder_param_count(cfg) if axis == "no_weight_sharing" else None))
    return result


def write_ablation(result, out_dir):
    """Write ``ablation.json``, ``ablation.txt`` and ``ablation.png``; returns the paths."""
    from .plotting import plot_ablation

    os.makedirs(out_dir, exist_ok=True)
    paths = {"json": os.path.join(out_dir, "ablation.json"), "table": os.path.join(out_dir, "ablation.txt"),
             "figure": os.path.join(out_dir, "ablation.png")}
    with open(paths["json"], "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=1)
    with open(paths["table"], "w", encoding="utf-8") as fh:
        fh.write(result.table() + "\n")
    plot_ablation(result, paths["figure"])
    return paths
