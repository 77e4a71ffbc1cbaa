"""Command line: ``mhn {train,eval,ablate,gradcheck,params,gen-data}``.

Exit codes: 0 success, 1 contract failure (bad config, failed check), 2 I/O or
file-format error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from .errors import FormatError, MHNError

EXIT_OK, EXIT_CONTRACT, EXIT_IO = 0, 1, 2


def _load_run(args):
    from .training import RunConfig

    run = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        run.seed = args.seed
    if args.out is not None:
        run.out_dir = args.out
    if getattr(args, "data", None):
        run.data_dir = args.data
    if getattr(args, "task", None):
        run.task = args.task
    if getattr(args, "epochs", None):
        run.optim.max_epochs = args.epochs
    return run.validate()


def _emit(obj, out_dir=None, name=None):
    print(json.dumps(obj, indent=1, sort_keys=True))
    if out_dir and name:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=1, sort_keys=True)


def cmd_train(args):
    from .plotting import plot_training_curves
    from .training import metric_name, train

    run = _load_run(args)
    header = False

    def row(entry):
        nonlocal header
        metric = [k for k in ("accuracy", "mse") if k in entry][0]
        if not header:
            print(f"{'epoch':>5}  {'train_loss':>10}  {'val_loss':>10}  {metric:>8}  {'lr':>9}  {'sec':>6}")
            header = True
        print(f"{entry['epoch']:>5d}  {entry['train_loss']:>10.4f}  {entry['val_loss']:>10.4f}  "
              f"{entry[metric]:>8.4f}  {entry['lr']:>9.2e}  {entry['wall_time']:>6.1f}", flush=True)

    result = train(run, on_epoch=row)
    kind_metric = metric_name(result.model.cfg.answer.kind)
    fig = plot_training_curves(result.metrics, os.path.join(run.out_dir, "curves.png"), kind_metric)
    _emit({"best": result.best, "test": result.test, "checkpoint": result.checkpoint,
           "metrics": os.path.join(run.out_dir, "metrics.jsonl"), "figure": fig},
          run.out_dir, "summary.json")
    return EXIT_OK


def cmd_eval(args):
    from .training import evaluate_checkpoint

    metrics = evaluate_checkpoint(args.checkpoint, args.data, split=args.split, task=args.task)
    metrics = {"checkpoint": args.checkpoint, "split": args.split, **metrics}
    print("  ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in metrics.items()))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval.jsonl"), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(metrics, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_ablate(args):
    from .ablate import ablate, write_ablation

    run = _load_run(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    out = args.out or os.path.join(run.out_dir, f"ablate_{args.axis}")
    result = ablate(run, args.axis, seeds=seeds, split=args.split,
                    out_dir=os.path.join(out, "runs") if args.keep_runs else None)
    paths = write_ablation(result, out)
    print(result.table())
    print(json.dumps({"files": paths, **result.to_dict()}, indent=1))
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import run_gradcheck

    seed = 0 if args.seed is None else args.seed
    report = run_gradcheck(seed)
    print(report.table())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "gradcheck.json"), "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=1)
    return EXIT_OK if report.passed else EXIT_CONTRACT


def cmd_params(args):
    from .model import ModelConfig, encoder_param_count, param_breakdown
    from .training import ModelSection

    run = _load_run(args) if args.config else None
    section = run.model if run else ModelSection()
    fields = {f.name for f in dataclasses.fields(ModelConfig)}
    kwargs = {k: v for k, v in dataclasses.asdict(section).items() if k in fields}
    kwargs.update(vocab_size=args.vocab, d_app=args.d_app, d_mot=args.d_mot)
    cfg = ModelConfig(**kwargs)
    other = ModelConfig(**{**kwargs, "share_pvr": not cfg.share_pvr})
    shared, unshared = (cfg, other) if cfg.share_pvr else (other, cfg)
    rows = param_breakdown(cfg)
    delta = param_breakdown(unshared)["total"] - param_breakdown(shared)["total"]
    width = max(len(k) for k in rows)
    for k, v in rows.items():
        print(f"{k:<{width}}  {v:>12,}")
    report = {"config": cfg.to_dict(), "breakdown": rows, "encoder_layer": encoder_param_count(cfg),
              "unshared_minus_shared": delta}
    print(f"one PVR encoder layer: {report['encoder_layer']:,}; unshared - shared: {delta:,}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "params.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1)
    return EXIT_OK


def cmd_gen_data(args):
    from .data.synthetic import SyntheticConfig, generate_synthetic

    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
    try:
        cfg = SyntheticConfig(**base)
    except TypeError as exc:
        raise MHNError(f"invalid synthetic config: {exc}") from None
    for name in ("n_train", "n_val", "n_test", "sigma"):
        if getattr(args, name) is not None:
            setattr(cfg, name, getattr(args, name))
    if args.tasks:
        cfg.tasks = args.tasks.split(",")
    if args.seed is not None:
        cfg.seed = args.seed
    out = args.out or "data"
    meta = generate_synthetic(cfg, out)
    print(json.dumps({"out": out, **meta["splits"], "probe_frameqa_attr_sigma0": meta["probe_frameqa_attr_sigma0"]},
                     indent=1))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="mhn", description="Multilevel hierarchical network for video QA")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="run config JSON (RunConfig schema)")
        sp.add_argument("--seed", type=int, help="override the seed")
        sp.add_argument("--out", help="override the output directory")

    sp = sub.add_parser("train", help="train one model")
    common(sp)
    sp.add_argument("--data", help="override data_dir")
    sp.add_argument("--task", help="override task")
    sp.add_argument("--epochs", type=int, help="override optim.max_epochs")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))
    sp.add_argument("--task", help="task (default: the one stored in the checkpoint)")
    sp.add_argument("--out", help="append metrics to OUT/eval.jsonl")
    sp.set_defaults(fn=cmd_eval)

    from .ablate import AXES
    sp = sub.add_parser("ablate", help="multi-seed ablation along one axis")
    common(sp)
    sp.add_argument("--axis", required=True, help=f"one of {', '.join(AXES)}")
    sp.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seed list")
    sp.add_argument("--split", default="test", choices=("val", "test"))
    sp.add_argument("--data", help="override data_dir")
    sp.add_argument("--task", help="override task")
    sp.add_argument("--epochs", type=int, help="override optim.max_epochs")
    sp.add_argument("--keep-runs", action="store_true", help="keep per-run metrics and checkpoints")
    sp.set_defaults(fn=cmd_ablate)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every op and the full model")
    common(sp, config=False)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("params", help="parameter count breakdown")
    common(sp)
    sp.add_argument("--vocab", type=int, default=64, help="vocabulary size")
    sp.add_argument("--d-app", type=int, default=2048)
    sp.add_argument("--d-mot", type=int, default=2048)
    sp.set_defaults(fn=cmd_params)

    sp = sub.add_parser("gen-data", help="write a synthetic dataset")
    common(sp)
    sp.add_argument("--n-train", type=int)
    sp.add_argument("--n-val", type=int)
    sp.add_argument("--n-test", type=int)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--tasks", help="comma-separated task list")
    sp.set_defaults(fn=cmd_gen_data)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except (FormatError, OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (MHNError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
