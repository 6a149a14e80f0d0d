"""Optimizer, schedule, losses, metrics, and the training/evaluation loops."""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import blocks
from .blocks import ModelState
from .errors import EmptyDataset, LabelOutOfRange, NonFiniteValues, ShapeMismatch
from .pointset import LabeledSample, augment


def cross_entropy_loss(logits: np.ndarray, label: int):
    """Softmax cross-entropy for one logits vector.

    Returns the scalar loss and its gradient w.r.t. the logits
    (softmax minus one-hot), stabilized with log-sum-exp shifting.
    """
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not np.isfinite(logits).all():
        raise NonFiniteValues("logits contain NaN/Inf")
    if not 0 <= label < logits.shape[0]:
        raise LabelOutOfRange(f"label {label} for {logits.shape[0]} classes")
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    total = exp.sum()
    loss = float(np.log(total) - shifted[label])
    grad = exp / total
    grad[label] -= 1.0
    return loss, grad


def cross_entropy_rows(logits: np.ndarray, labels: np.ndarray):
    """Per-row softmax cross-entropy averaged over rows (per-point loss)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise LabelOutOfRange(f"part label outside [0, {logits.shape[1]})")
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = float(np.mean(np.log(total[:, 0]) - shifted[rows, labels]))
    grad = exp / total
    grad[rows, labels] -= 1.0
    return loss, grad / n


class AdamState:
    """Adaptive-moment optimizer state: per-parameter first/second moments."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, decay: float = 0.997, decay_start_epoch: int = 20):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.decay = decay
        self.decay_start_epoch = decay_start_epoch
        self.step_count = 0
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []


OptimizerState = AdamState


def adam_step(opt: AdamState, params: list[np.ndarray], grads: list[np.ndarray],
              lr: float | None = None) -> list[np.ndarray]:
    """One bias-corrected update; parameters are modified in place."""
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} params vs {len(grads)} grads")
    if not opt.m:
        opt.m = [np.zeros_like(p) for p in params]
        opt.v = [np.zeros_like(p) for p in params]
    if len(opt.m) != len(params):
        raise ShapeMismatch("optimizer state sized for a different parameter list")
    step_lr = opt.lr if lr is None else lr
    opt.step_count += 1
    t = opt.step_count
    bc1 = 1.0 - opt.beta1**t
    bc2 = 1.0 - opt.beta2**t
    for p, g, m, v in zip(params, grads, opt.m, opt.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"parameter {p.shape} vs gradient {g.shape}")
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * np.square(g)
        p -= step_lr * (m / bc1) / (np.sqrt(v / bc2) + opt.eps)
    return params


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int = 128
    lr: float = 0.001
    decay: float = 0.997
    decay_start_epoch: int = 20
    seed: int = 0
    task: str = "classification"
    augment: bool = True
    rotate: bool = True
    jitter_sigma: float = 0.01
    jitter_clip: float = 0.05
    threads: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError("decay must be in (0, 1]")
        if self.task not in ("classification", "segmentation"):
            raise ValueError(f"unknown task {self.task!r}")


def lr_schedule(cfg: TrainConfig, epoch: int) -> float:
    """Base rate through ``decay_start_epoch``, multiplicative decay per epoch after."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.lr * cfg.decay ** max(0, epoch - cfg.decay_start_epoch)


@dataclass
class EvalReport:
    """Metrics plus confusion counts for one evaluation pass."""

    overall_accuracy: float
    per_class_accuracy: np.ndarray
    confusion: np.ndarray
    class_miou: float | None = None
    instance_miou: float | None = None
    per_shape_iou: list[float] = field(default_factory=list)


def _check_labels(dataset: list[LabeledSample], model: ModelState, task: str) -> None:
    if not dataset:
        raise EmptyDataset("no samples")
    num_classes = model.config.num_classes
    for sample in dataset:
        if not 0 <= sample.class_label < num_classes:
            raise LabelOutOfRange(
                f"class label {sample.class_label} outside [0, {num_classes})"
            )
        if task == "segmentation":
            if sample.part_labels is None:
                raise ValueError(f"sample {sample.path or '<memory>'} has no part labels")
            num_parts = model.config.segmentation.num_parts
            if sample.part_labels.min() < 0 or sample.part_labels.max() >= num_parts:
                raise LabelOutOfRange(f"part label outside [0, {num_parts})")


def _ordered_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def train_loop(model: ModelState, dataset: list[LabeledSample], cfg: TrainConfig,
               val_dataset: list[LabeledSample] | None = None,
               out_dir=None) -> list[dict]:
    """Seeded mini-batch training; returns the per-epoch log rows.

    Batches shuffle per epoch; the final partial batch is kept. Gradients
    are averaged over the batch; forward passes may run on a thread pool
    but accumulation order is fixed, so a given seed reproduces the same
    checkpoints bit for bit at any thread count.
    """
    if cfg.task == "segmentation" and model.seg_head is None:
        raise ValueError("segmentation training needs a model with a segmentation head")
    _check_labels(dataset, model, cfg.task)
    if val_dataset:
        _check_labels(val_dataset, model, cfg.task)

    rng = np.random.default_rng(cfg.seed)
    opt = AdamState(lr=cfg.lr, decay=cfg.decay, decay_start_epoch=cfg.decay_start_epoch)
    named = model.named_layers()
    params = [arr for _, layer in named for arr in (layer.weight, layer.bias)]
    grads = [arr for _, layer in named for arr in (layer.grad_weight, layer.grad_bias)]

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    def forward_one(args):
        sample, aug_seed = args
        cloud = sample.cloud
        if cfg.augment:
            cloud = augment(cloud, int(aug_seed), rotate=cfg.rotate,
                            jitter_sigma=cfg.jitter_sigma, jitter_clip=cfg.jitter_clip)
        if cfg.task == "classification":
            logits, cache = blocks.forward_classification(model, cloud)
            loss, grad = cross_entropy_loss(logits, sample.class_label)
            hit = float(int(np.argmax(logits)) == sample.class_label)
        else:
            logits, cache = blocks.forward_segmentation(model, cloud)
            loss, grad = cross_entropy_rows(logits, sample.part_labels)
            hit = float(np.mean(np.argmax(logits, axis=1) == sample.part_labels))
        return loss, grad, cache, hit

    log_rows: list[dict] = []
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        lr = lr_schedule(cfg, epoch)
        order = rng.permutation(len(dataset))
        aug_seeds = rng.integers(0, 2**31 - 1, size=len(dataset))

        epoch_loss = 0.0
        epoch_hits = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            work = [(dataset[i], aug_seeds[i]) for i in batch]
            results = _ordered_map(forward_one, work, cfg.threads)
            model.zero_grad()
            scale = 1.0 / len(batch)
            for loss, grad, cache, hit in results:
                blocks.model_backward(model, cache, np.asarray(grad) * scale)
                epoch_loss += loss
                epoch_hits += hit
            adam_step(opt, params, grads, lr=lr)

        row = {
            "epoch": epoch + 1,
            "lr": lr,
            "train_loss": epoch_loss / len(dataset),
            "train_acc": epoch_hits / len(dataset),
            "val_acc": "",
            "seconds": time.perf_counter() - start,
        }
        if val_dataset:
            if cfg.task == "classification":
                row["val_acc"] = evaluate_classification(model, val_dataset,
                                                         threads=cfg.threads).overall_accuracy
            else:
                row["val_acc"] = evaluate_segmentation(model, val_dataset,
                                                       threads=cfg.threads).instance_miou
        log_rows.append(row)

        if out_dir is not None:
            model.save(out_dir / f"model_epoch{epoch + 1:03d}.ckpt")

    if out_dir is not None:
        model.save(out_dir / "model.ckpt")
        write_log_csv(out_dir / "log.csv", log_rows, task=cfg.task)
    return log_rows


def write_log_csv(path, log_rows: list[dict], task: str = "classification") -> None:
    """Per-epoch CSV log: ``epoch,lr,train_loss,train_acc,val_acc`` (mIoU for segmentation)."""
    metric = "acc" if task == "classification" else "miou"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", f"train_{metric}", f"val_{metric}"])
        for row in log_rows:
            writer.writerow([row["epoch"], f"{row['lr']:.9f}", f"{row['train_loss']:.6f}",
                             f"{row['train_acc']:.6f}",
                             "" if row["val_acc"] == "" else f"{row['val_acc']:.6f}"])


def evaluate_classification(model: ModelState, dataset: list[LabeledSample],
                            threads: int = 1) -> EvalReport:
    """Argmax accuracy over the dataset; prediction ties go to the lowest class."""
    _check_labels(dataset, model, "classification")
    num_classes = model.config.num_classes
    preds = _ordered_map(lambda s: int(np.argmax(blocks.classify(model, s.cloud))),
                         dataset, threads)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for sample, pred in zip(dataset, preds):
        confusion[sample.class_label, pred] += 1
    totals = confusion.sum(axis=1)
    diag = np.diag(confusion).astype(np.float64)
    per_class = np.divide(diag, totals, out=np.zeros(num_classes), where=totals > 0)
    return EvalReport(
        overall_accuracy=float(diag.sum() / len(dataset)),
        per_class_accuracy=per_class,
        confusion=confusion,
    )


def segmentation_scores(samples: list[LabeledSample], predictions: list[np.ndarray],
                        num_parts: int) -> EvalReport:
    """Part-IoU metrics from ground truth and per-point predicted labels.

    A shape's IoU averages over its category's part set (the union of parts
    seen in ground truth for that category); a part absent from both the
    prediction and the truth scores 1. Per-shape values are computed in
    exact rational arithmetic before conversion to float, so small fixtures
    produce exact fractions.
    """
    category_parts: dict[int, set[int]] = {}
    for sample in samples:
        category_parts.setdefault(sample.class_label, set()).update(
            int(p) for p in np.unique(sample.part_labels)
        )

    per_shape: list[Fraction] = []
    by_category: dict[int, list[Fraction]] = {}
    confusion = np.zeros((num_parts, num_parts), dtype=np.int64)
    for sample, pred in zip(samples, predictions):
        pred = np.asarray(pred, dtype=np.int64)
        truth = sample.part_labels
        np.add.at(confusion, (truth, pred), 1)
        part_ious = []
        for part in sorted(category_parts[sample.class_label]):
            in_pred = pred == part
            in_truth = truth == part
            union = int(np.count_nonzero(in_pred | in_truth))
            if union == 0:
                part_ious.append(Fraction(1))
            else:
                part_ious.append(Fraction(int(np.count_nonzero(in_pred & in_truth)), union))
        shape_iou = sum(part_ious, Fraction(0)) / len(part_ious)
        per_shape.append(shape_iou)
        by_category.setdefault(sample.class_label, []).append(shape_iou)

    instance = sum(per_shape, Fraction(0)) / len(per_shape)
    class_means = [sum(vals, Fraction(0)) / len(vals) for vals in by_category.values()]
    class_miou = sum(class_means, Fraction(0)) / len(class_means)

    point_hits = int(np.trace(confusion))
    point_total = int(confusion.sum())
    return EvalReport(
        overall_accuracy=point_hits / point_total,
        per_class_accuracy=np.zeros(0),
        confusion=confusion,
        class_miou=float(class_miou),
        instance_miou=float(instance),
        per_shape_iou=[float(v) for v in per_shape],
    )


def evaluate_segmentation(model: ModelState, dataset: list[LabeledSample],
                          threads: int = 1) -> EvalReport:
    """Instance and class mean part-IoU of the model's argmax predictions."""
    if model.seg_head is None:
        raise ValueError("model has no segmentation head")
    _check_labels(dataset, model, "segmentation")
    preds = _ordered_map(lambda s: np.argmax(blocks.segment(model, s.cloud), axis=1),
                         dataset, threads)
    return segmentation_scores(dataset, preds, model.config.segmentation.num_parts)
