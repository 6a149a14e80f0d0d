"""Command-line entry points: train, eval, infer, analyze, export-features.

Exit codes: 0 success, 2 configuration error, 3 data error,
4 checkpoint/config mismatch. All randomness funnels through one seed
per invocation; ``--threads`` (or the MLGCN_THREADS environment
variable) sizes the worker pool, with 1 forcing the fully sequential path.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import blocks, flops, pointset, report, train
from .blocks import ModelConfig, ModelState, PRESETS
from .errors import (
    CheckpointMismatch,
    DegenerateMesh,
    EmptyDataset,
    InvalidK,
    LabelLengthMismatch,
    LabelOutOfRange,
    MalformedFile,
    MissingFile,
    MlgcnError,
    ShapeMismatch,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4

_DATA_ERRORS = (MissingFile, MalformedFile, LabelLengthMismatch, DegenerateMesh,
                EmptyDataset, LabelOutOfRange)


class ConfigError(MlgcnError):
    """Invalid model or run configuration supplied on the command line."""


def _threads_from(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("MLGCN_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _build_config(args, need_parts: bool = False) -> ModelConfig:
    """Resolve --preset/--config plus overrides into a ModelConfig."""
    try:
        if args.config:
            config = blocks.load_model_config(args.config)
            if args.num_classes and config.num_classes != args.num_classes:
                config = replace(config, num_classes=args.num_classes)
        else:
            preset = PRESETS[args.preset]
            config = preset(num_classes=args.num_classes or 40,
                            num_parts=args.num_parts if need_parts or args.num_parts else None)
        if need_parts and config.segmentation is None:
            if not args.num_parts:
                raise ConfigError("segmentation task needs --num-parts or a config with num_parts")
            config = replace(config, segmentation=blocks.SegmentationConfig(
                args.num_parts, [2 * w for w in config.classifier_hidden] or [64]))
        if args.points:
            config = replace(config, n_points=args.points)
        return config
    except (MissingFile, MalformedFile, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def _load_samples(manifest, config: ModelConfig, seed: int):
    samples = pointset.read_dataset(manifest, n_points=config.n_points, seed=seed)
    for sample in samples:
        sample.cloud = pointset.normalize_unit_sphere(sample.cloud)
    return samples


def _load_model(args, config: ModelConfig) -> ModelState:
    model = blocks.init_model(config, seed=args.seed)
    model.load(args.checkpoint)
    return model


def cmd_train(args) -> int:
    config = _build_config(args, need_parts=args.task == "segmentation")
    out_dir = Path(args.out)

    samples = _load_samples(args.data, config, args.seed)
    val = _load_samples(args.val, config, args.seed) if args.val else None

    cfg = train.TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        decay=args.decay, decay_start_epoch=args.decay_start,
        seed=args.seed, task=args.task, augment=not args.no_augment,
        threads=_threads_from(args),
    )
    model = blocks.init_model(config, seed=args.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    blocks.save_model_config(out_dir / "model.cfg", config)

    log_rows = train.train_loop(model, samples, cfg, val_dataset=val, out_dir=out_dir)
    if log_rows:
        report.render_training_curves(log_rows, out_dir / "curves.png", task=args.task)
        last = log_rows[-1]
        metric = "acc" if args.task == "classification" else "miou"
        print(f"trained {cfg.epochs} epochs: loss {last['train_loss']:.4f}, "
              f"train {metric} {last['train_acc']:.4f}")
    print(f"checkpoints and log in {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _build_config(args, need_parts=args.task == "segmentation")
    model = _load_model(args, config)
    samples = _load_samples(args.data, config, args.seed)
    threads = _threads_from(args)

    if args.task == "classification":
        result = train.evaluate_classification(model, samples, threads=threads)
        print(f"samples: {len(samples)}")
        print(f"overall accuracy: {result.overall_accuracy:.4f}")
        if args.csv:
            with open(args.csv, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["class", "accuracy", "support"])
                for c, acc in enumerate(result.per_class_accuracy):
                    writer.writerow([c, f"{acc:.6f}", int(result.confusion[c].sum())])
                writer.writerow(["overall", f"{result.overall_accuracy:.6f}", len(samples)])
    else:
        result = train.evaluate_segmentation(model, samples, threads=threads)
        print(f"samples: {len(samples)}")
        print(f"instance mIoU: {result.instance_miou:.4f}")
        print(f"class mIoU: {result.class_miou:.4f}")
        if args.csv:
            with open(args.csv, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["shape", "iou"])
                for i, iou in enumerate(result.per_shape_iou):
                    writer.writerow([i, f"{iou:.6f}"])
                writer.writerow(["instance_miou", f"{result.instance_miou:.6f}"])
                writer.writerow(["class_miou", f"{result.class_miou:.6f}"])
    return EXIT_OK


def cmd_infer(args) -> int:
    config = _build_config(args, need_parts=False)
    model = _load_model(args, config)
    cloud = pointset.load_cloud_file(args.input, n_points=config.n_points, seed=args.seed)
    cloud = pointset.normalize_unit_sphere(cloud)

    logits = blocks.classify(model, cloud)
    print(f"class: {int(np.argmax(logits))}")
    if model.seg_head is not None:
        parts = np.argmax(blocks.segment(model, cloud), axis=1)
        print("parts: " + " ".join(str(int(p)) for p in parts))
    return EXIT_OK


def cmd_analyze(args) -> int:
    config = _build_config(args, need_parts=False)
    n = args.points or config.n_points
    cost = flops.analyze_model(config, n_points=n)
    sys.stdout.write(flops.format_cost_table(cost, title=f"cost at {n} points"))
    if args.compare_recompute:
        _, rebuilt = flops.compare_shared_vs_recomputed(config, n_points=n)
        sys.stdout.write("\n")
        sys.stdout.write(flops.format_cost_table(rebuilt, title="rebuild-per-step variant"))
        saved = flops.graph_flops_total(rebuilt) - flops.graph_flops_total(cost)
        print(f"\ngraph work saved by sharing: {saved:,} FLOPs")
    if args.csv:
        flops.write_cost_csv(args.csv, cost)
    if args.plot:
        report.render_cost_breakdown(cost, args.plot, title=f"FLOPs at {n} points")
    return EXIT_OK


def cmd_export_features(args) -> int:
    config = _build_config(args, need_parts=False)
    model = _load_model(args, config)
    samples = _load_samples(args.data, config, args.seed)

    vectors = [blocks.encode(model, s.cloud) for s in samples]
    width = config.trunk_out_channels
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f_{i}" for i in range(width)])
        for sample, vec in zip(samples, vectors):
            writer.writerow([sample.class_label] + [f"{v:.8g}" for v in vec])
    print(f"wrote {len(samples)} feature rows to {args.out}")
    return EXIT_OK


def _add_model_args(parser, require_source: bool = True):
    group = parser.add_mutually_exclusive_group(required=require_source)
    group.add_argument("--preset", choices=sorted(PRESETS), help="built-in architecture")
    group.add_argument("--config", help="model config file (key = value lines)")
    parser.add_argument("--points", type=int, default=0, help="override input point count")
    parser.add_argument("--num-classes", type=int, default=0,
                        help="class count (default: config value, or 40 for presets)")
    parser.add_argument("--num-parts", type=int, default=0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: MLGCN_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlgcn",
                                     description="point-cloud graph network toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a dataset manifest")
    _add_model_args(p)
    p.add_argument("--data", required=True, help="training manifest")
    p.add_argument("--val", help="validation manifest")
    p.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    p.add_argument("--epochs", type=int, default=250)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--decay", type=float, default=0.997)
    p.add_argument("--decay-start", type=int, default=20)
    p.add_argument("--task", choices=("classification", "segmentation"),
                   default="classification")
    p.add_argument("--no-augment", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    _add_model_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=("classification", "segmentation"),
                   default="classification")
    p.add_argument("--csv", help="write metrics CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="classify one cloud or mesh file")
    _add_model_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("input", help=".xyz, OFF, or binary cache file")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("analyze", help="static FLOPs and parameter report")
    _add_model_args(p)
    p.add_argument("--compare-recompute", action="store_true",
                   help="also price a rebuild-graph-per-step variant")
    p.add_argument("--csv", help="write op,shape,flops CSV here")
    p.add_argument("--plot", help="write a cost breakdown figure here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export-features", help="dump pre-classifier feature vectors")
    _add_model_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_export_features)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointMismatch as exc:
        print(f"checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvalidK, ShapeMismatch, ValueError) as exc:
        # model geometry incompatible with the supplied inputs
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
