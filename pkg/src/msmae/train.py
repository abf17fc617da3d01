"""Pre-training and finetuning loops, AdamW, cosine schedule, metrics.

Runs are bit-deterministic for a fixed seed: one ``numpy`` generator drives
epoch shuffling, crop augmentation and mask sampling, in an order that does
not depend on the number of reconstruction scales, so single-scale and
multi-scale runs see identical data and masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .data import (
    ImageSample,
    bilinear_downsample,
    build_scale_pyramid,
    center_crop,
    random_crop,
)
from .model import MaskedAutoencoder, ModelConfig, sample_mask
from .multiscale import LossWeights, MultiScaleHead, combine_losses
from .tensor import ParamStore, Tensor


class NumericError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass
class TrainConfig:
    base_lr: float = 1e-3
    min_lr: float = 0.0
    warmup_epochs: int = 0
    total_epochs: int = 10
    batch_size: int = 16
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.95)
    weights: LossWeights = field(default_factory=LossWeights)
    levels: int = 3
    seed: int = 0
    normalize_loss_weights: bool = False
    task: str = "single"  # or "multilabel"
    augment: bool = True

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.warmup_epochs >= self.total_epochs:
            raise ValueError(
                f"warmup_epochs {self.warmup_epochs} must be below total_epochs {self.total_epochs}"
            )
        if self.levels not in (1, 2, 3):
            raise ValueError(f"levels must be 1, 2 or 3, got {self.levels}")
        if self.task not in ("single", "multilabel"):
            raise ValueError(f"task must be 'single' or 'multilabel', got {self.task}")


# -- optimizer -----------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: ParamStore,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple[float, float] = (0.9, 0.95),
    eps: float = 1e-8,
) -> None:
    """One AdamW update: bias-corrected moments plus decoupled decay."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        update = (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = p.data - lr * weight_decay * p.data - lr * update


def cosine_lr(
    step: int, warmup_steps: int, total_steps: int, base_lr: float, min_lr: float = 0.0
) -> float:
    """Linear warmup to ``base_lr`` then half-cosine decay to ``min_lr``."""
    if step > total_steps:
        raise ValueError(f"step {step} beyond total_steps {total_steps}")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = (step - warmup_steps) / span
    return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + math.cos(math.pi * progress))


# -- metric bookkeeping ----------------------------------------------------------


@dataclass
class MetricReport:
    records: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_value: float | None = None
    _next_epoch: int = 0

    def _check_epoch(self, epoch: int) -> None:
        if epoch not in (self._next_epoch, self._next_epoch - 1):
            raise ValueError(
                f"epochs must be contiguous from 0: got {epoch}, expected {self._next_epoch}"
            )
        self._next_epoch = max(self._next_epoch, epoch + 1)

    def add_train(self, epoch: int, loss: float, l1: float, l2: float, l3: float) -> None:
        self._check_epoch(epoch)
        self.records.append(
            {"epoch": epoch, "split": "train", "loss": loss, "l1": l1, "l2": l2, "l3": l3}
        )

    def add_eval(self, epoch: int, name: str, value: float) -> None:
        self._check_epoch(epoch)
        self.records.append({"epoch": epoch, "split": "val", name: value})
        if self.best_value is None or value > self.best_value:
            self.best_value = value
            self.best_epoch = epoch

    def log_lines(self) -> list[str]:
        lines = []
        for r in self.records:
            if r["split"] == "train":
                lines.append(
                    "epoch={epoch} split=train loss={loss:.17g} l1={l1:.17g} "
                    "l2={l2:.17g} l3={l3:.17g}".format(**r)
                )
            else:
                (metric,) = [k for k in r if k not in ("epoch", "split")]
                lines.append(f"epoch={r['epoch']} {metric}={r[metric]:.17g}")
        return lines

    def final_train_loss(self) -> float:
        losses = [r["loss"] for r in self.records if r["split"] == "train"]
        return losses[-1]


# -- data plumbing ---------------------------------------------------------------


def _crop_sources(
    samples: list[ImageSample],
    indices: np.ndarray,
    crop_size: int,
    rng: np.random.Generator | None,
) -> np.ndarray:
    crops = []
    for i in indices:
        src = samples[int(i)].pixels
        if rng is not None and src.shape[-1] > crop_size:
            crops.append(random_crop(src, crop_size, rng))
        else:
            crops.append(center_crop(src, crop_size))
    return np.stack(crops)


def pyramid_batch(sources: np.ndarray, levels: int):
    """Reduce canonical 4x sources to the configured scale count.

    The base image is identical for every ``levels`` setting, so ablation
    runs differ only in their reconstruction targets.
    """
    if levels == 3:
        return build_scale_pyramid(sources, 3)
    if levels == 2:
        return build_scale_pyramid(bilinear_downsample(sources), 2)
    return build_scale_pyramid(bilinear_downsample(bilinear_downsample(sources)), 1)


def batch_labels(samples: list[ImageSample], indices: np.ndarray) -> np.ndarray:
    return np.array([samples[int(i)].label for i in indices])


# -- pre-training --------------------------------------------------------------


def pretrain(
    model: MaskedAutoencoder,
    head: MultiScaleHead | None,
    samples: list[ImageSample],
    cfg: TrainConfig,
    epoch_callback=None,
) -> MetricReport:
    """Masked multi-scale reconstruction training; mutates model/head params.

    ``epoch_callback(epoch)`` fires after each epoch's updates (checkpointing).
    """
    if cfg.levels >= 2:
        if head is None:
            raise ValueError(f"levels={cfg.levels} needs a multiscale head")
        if head.levels < cfg.levels:
            raise ValueError(f"head supports {head.levels} levels, config asks {cfg.levels}")
    crop_size = 4 * model.cfg.input_size
    if samples[0].pixels.shape[-1] < crop_size:
        raise T.ShapeError(
            f"sources {samples[0].pixels.shape} smaller than required {crop_size}"
        )

    rng = np.random.default_rng(cfg.seed)
    n = len(samples)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.total_epochs * steps_per_epoch
    warmup_steps = cfg.warmup_epochs * steps_per_epoch

    opt_model = AdamState()
    opt_head = AdamState()
    report = MetricReport()
    dtype = np.dtype(model.cfg.dtype)
    step = 0
    for epoch in range(cfg.total_epochs):
        order = rng.permutation(n)
        sums = np.zeros(4)
        seen = 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            crops = _crop_sources(samples, idx, crop_size, rng if cfg.augment else None)
            pyr = pyramid_batch(crops.astype(dtype), cfg.levels)
            mask_seed = int(rng.integers(0, 2**31 - 1))
            plan = sample_mask(model.cfg, model.cfg.n_per_group, mask_seed)

            recon = model.reconstruct(pyr.base, plan)
            if cfg.levels == 1:
                l1 = T.mse_loss(recon, Tensor(pyr.base))
                loss = combine_losses(cfg.weights, l1, None, None, cfg.normalize_loss_weights)
                parts = (l1.item(), 0.0, 0.0)
            else:
                res = head.forward(
                    recon, pyr, cfg.weights, cfg.levels, cfg.normalize_loss_weights
                )
                loss = res.loss
                parts = res.parts()

            total = loss.item()
            if not np.isfinite(total):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {lo // cfg.batch_size}: "
                    f"loss={total} l1={parts[0]} l2={parts[1]} l3={parts[2]}"
                )

            model.params.zero_grads()
            if head is not None:
                head.params.zero_grads()
            loss.backward()

            lr = cosine_lr(step, warmup_steps, total_steps, cfg.base_lr, cfg.min_lr)
            adamw_step(model.params, opt_model, lr, cfg.weight_decay, cfg.betas)
            if head is not None and cfg.levels >= 2:
                adamw_step(head.params, opt_head, lr, cfg.weight_decay, cfg.betas)
            step += 1

            b = len(idx)
            sums += b * np.array([total, *parts])
            seen += b
        means = sums / seen
        report.add_train(epoch, means[0], means[1], means[2], means[3])
        if epoch_callback is not None:
            epoch_callback(epoch)
    return report


# -- evaluation metrics -----------------------------------------------------------


def top1_accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    return float((scores.argmax(axis=1) == labels).mean())


def mean_average_precision(scores: np.ndarray, targets: np.ndarray) -> float:
    """Macro-averaged AP; classes without positives are skipped."""
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets)
    if scores.shape != targets.shape:
        raise T.ShapeError(f"scores {scores.shape} vs targets {targets.shape}")
    if targets.sum() == 0:
        raise ValueError("mean average precision undefined: no positive targets")
    aps = []
    for k in range(targets.shape[1]):
        positives = targets[:, k]
        if positives.sum() == 0:
            continue
        order = np.argsort(-scores[:, k], kind="stable")
        hits = positives[order].astype(bool)
        cum = np.cumsum(hits)
        ranks = np.nonzero(hits)[0] + 1
        aps.append(float((cum[hits] / ranks).mean()))
    return float(np.mean(aps))


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


# -- finetuning ---------------------------------------------------------------


def _base_inputs(
    samples: list[ImageSample],
    indices: np.ndarray,
    input_size: int,
    dtype,
    rng: np.random.Generator | None,
) -> np.ndarray:
    crops = _crop_sources(samples, indices, 4 * input_size, rng)
    return bilinear_downsample(bilinear_downsample(crops)).astype(dtype)


def evaluate(
    model: MaskedAutoencoder,
    samples: list[ImageSample],
    n_classes: int,
    task: str = "single",
    batch_size: int = 32,
) -> float:
    """Top-1 accuracy (single-label) or mAP (multilabel) on a fixed split."""
    dtype = np.dtype(model.cfg.dtype)
    scores, labels = [], []
    with T.no_grad():
        for lo in range(0, len(samples), batch_size):
            idx = np.arange(lo, min(lo + batch_size, len(samples)))
            x = _base_inputs(samples, idx, model.cfg.input_size, dtype, None)
            scores.append(model.classify(x).data)
            labels.append(batch_labels(samples, idx))
    scores = np.concatenate(scores)
    labels = np.concatenate(labels)
    if task == "multilabel":
        return mean_average_precision(scores, _one_hot(labels, n_classes))
    return top1_accuracy(scores, labels)


def finetune(
    model: MaskedAutoencoder,
    train_samples: list[ImageSample],
    val_samples: list[ImageSample],
    cfg: TrainConfig,
    n_classes: int,
) -> MetricReport:
    """End-to-end classification training from the given (pre-trained) weights."""
    if not model.has_classifier():
        model.add_classifier(n_classes, seed=cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed)
    dtype = np.dtype(model.cfg.dtype)
    n = len(train_samples)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.total_epochs * steps_per_epoch
    warmup_steps = cfg.warmup_epochs * steps_per_epoch

    opt = AdamState()
    report = MetricReport()
    metric_name = "map" if cfg.task == "multilabel" else "top1"
    step = 0
    for epoch in range(cfg.total_epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            x = _base_inputs(
                train_samples, idx, model.cfg.input_size, dtype, rng if cfg.augment else None
            )
            labels = batch_labels(train_samples, idx)
            logits = model.classify(x)
            if cfg.task == "multilabel":
                loss = T.multilabel_soft_margin(logits, _one_hot(labels, n_classes))
            else:
                loss = T.cross_entropy_logits(logits, labels)
            if not np.isfinite(loss.item()):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {lo // cfg.batch_size}: "
                    f"loss={loss.item()}"
                )
            model.params.zero_grads()
            loss.backward()
            lr = cosine_lr(step, warmup_steps, total_steps, cfg.base_lr, cfg.min_lr)
            adamw_step(model.params, opt, lr, cfg.weight_decay, cfg.betas)
            step += 1
            loss_sum += loss.item() * len(idx)
        report.add_train(epoch, loss_sum / n, 0.0, 0.0, 0.0)
        value = evaluate(model, val_samples, n_classes, cfg.task)
        report.add_eval(epoch, metric_name, value)
    return report


# -- ablation ------------------------------------------------------------------


@dataclass
class AblationRow:
    scales: int
    top1: float
    best_epoch: float
    per_seed: list[tuple[float, int]]


def ablation_compare(
    train_samples: list[ImageSample],
    val_samples: list[ImageSample],
    model_cfg: ModelConfig,
    pretrain_cfg: TrainConfig,
    finetune_cfg: TrainConfig,
    scales: list[int],
    seeds: list[int],
    n_classes: int,
    feat_ch: int = 8,
) -> list[AblationRow]:
    """Pretrain+finetune per scale count and seed; report seed-averaged bests.

    Every run with the same seed sees identical inputs and masks regardless
    of the scale count, so rows differ only in reconstruction supervision.
    """
    if len(seeds) < 3:
        raise ValueError(f"ablation needs at least 3 seeds, got {len(seeds)}")
    if not scales:
        raise ValueError("ablation needs at least one scale count")
    rows = []
    for s in scales:
        per_seed = []
        for seed in seeds:
            model = MaskedAutoencoder(replace(model_cfg), seed=seed)
            head = None
            if s >= 2:
                head = MultiScaleHead(
                    n_channels=model_cfg.n_channels,
                    feat_ch=feat_ch,
                    levels=s,
                    dtype=model_cfg.dtype,
                    seed=seed + 1000,
                )
            p_cfg = replace(pretrain_cfg, levels=s, seed=seed)
            pretrain(model, head, train_samples, p_cfg)
            f_cfg = replace(finetune_cfg, seed=seed)
            rep = finetune(model, train_samples, val_samples, f_cfg, n_classes)
            per_seed.append((rep.best_value, rep.best_epoch))
        rows.append(
            AblationRow(
                scales=s,
                top1=float(np.mean([v for v, _ in per_seed])),
                best_epoch=float(np.mean([e for _, e in per_seed])),
                per_seed=per_seed,
            )
        )
    return rows
