"""Command-line entry point: pretrain, finetune, eval, reconstruct, ablate.

Configuration precedence: built-in defaults < key=value config file < CLI
flags.  Unknown config keys are rejected.  Exit codes: 0 success, 2 config
error, 3 numeric failure, 4 checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from . import limit_threads
from .checkpoint import (
    Checkpoint,
    CheckpointError,
    collect_arrays,
    load_checkpoint,
    restore_models,
    save_checkpoint,
)
from .data import (
    build_scale_pyramid,
    center_crop,
    default_grouping,
    single_group,
    synth_dataset,
)
from .model import MaskedAutoencoder, ModelConfig, sample_mask
from .multiscale import LossWeights, MultiScaleHead
from .tensor import no_grad
from .train import (
    NumericError,
    TrainConfig,
    ablation_compare,
    evaluate,
    finetune,
    pretrain,
    pyramid_batch,
)


class ConfigError(ValueError):
    """Invalid run configuration (unknown key, bad value, bad combination)."""


@dataclass
class RunConfig:
    # model
    input_size: int = 32
    patch_size: int = 4
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    decoder_dim: int = 64
    decoder_depth: int = 4
    mask_ratio: float = 0.75
    bands: str = "sentinel2"  # or "rgb"
    precision: str = "float64"
    feat_ch: int = 8
    # training
    levels: int = 3
    alpha: tuple[float, float, float] = (1.0, 1.0, 1.0)
    base_lr: float = 1e-3
    min_lr: float = 0.0
    warmup_epochs: int = -1  # -1: 10% of epochs
    epochs: int = 10
    batch_size: int = 16
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = -1.0  # -1: 0.95 pretrain / 0.999 finetune
    seed: int = 0
    normalize_loss_weights: bool = False
    task: str = "single"
    augment: bool = True
    # data
    train_count: int = 64
    val_count: int = 32
    n_classes: int = 4
    noise: float = 0.03
    # io
    save_interval: int = 0  # 0: final checkpoint only

    def n_channels(self) -> int:
        if self.bands == "sentinel2":
            return 10
        if self.bands == "rgb":
            return 3
        raise ConfigError(f"bands must be 'sentinel2' or 'rgb', got {self.bands!r}")

    def grouping(self):
        return default_grouping() if self.bands == "sentinel2" else single_group(3)

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig(
                patch_size=self.patch_size,
                embed_dim=self.embed_dim,
                depth=self.depth,
                heads=self.heads,
                decoder_dim=self.decoder_dim,
                decoder_depth=self.decoder_depth,
                mask_ratio=self.mask_ratio,
                grouping=self.grouping(),
                input_size=self.input_size,
                dtype=self.precision,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def source_size(self) -> int:
        # canonical 4x source plus crop slack when augmenting
        return 4 * self.input_size + (8 * self.patch_size if self.augment else 0)

    def check_divisibility(self) -> None:
        if self.levels == 3 and self.input_size % (4 * self.patch_size):
            raise ConfigError(
                f"levels=3 needs input size divisible by 4*patch_size "
                f"(input {self.input_size}, patch {self.patch_size})"
            )

    def train_config(self, phase: str) -> TrainConfig:
        beta2 = self.beta2 if self.beta2 > 0 else (0.95 if phase == "pretrain" else 0.999)
        warmup = self.warmup_epochs if self.warmup_epochs >= 0 else max(1, self.epochs // 10)
        if warmup >= self.epochs:
            warmup = max(0, self.epochs - 1)
        try:
            return TrainConfig(
                base_lr=self.base_lr,
                min_lr=self.min_lr,
                warmup_epochs=warmup,
                total_epochs=self.epochs,
                batch_size=self.batch_size,
                weight_decay=self.weight_decay,
                betas=(self.beta1, beta2),
                weights=LossWeights(*self.alpha),
                levels=self.levels,
                seed=self.seed,
                normalize_loss_weights=self.normalize_loss_weights,
                task=self.task,
                augment=self.augment,
            )
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def meta(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_value(name: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            if raw.lower() not in _BOOL_VALUES:
                raise ValueError(f"expected boolean, got {raw!r}")
            return _BOOL_VALUES[raw.lower()]
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if kind == tuple[float, float, float]:
            parts = [float(p) for p in raw.split(",")]
            if len(parts) != 3:
                raise ValueError(f"expected three comma-separated floats, got {raw!r}")
            return tuple(parts)
    except ValueError as e:
        raise ConfigError(f"bad value for config key {name}: {e}") from e
    raise ConfigError(f"unhandled config type for key {name}")


def parse_config_file(path: str) -> dict:
    values = {}
    field_types = {f.name: f.type for f in fields(RunConfig)}
    kinds = {
        "alpha": tuple[float, float, float],
        "bands": str,
        "precision": str,
        "task": str,
    }
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, raw = [p.strip() for p in line.split("=", 1)]
            if key not in field_types:
                raise ConfigError(f"unknown config key: {key}")
            kind = kinds.get(key)
            if kind is None:
                default = getattr(RunConfig(), key)
                kind = type(default) if not isinstance(default, tuple) else tuple[float, float, float]
            values[key] = _parse_value(key, raw, kind)
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = replace(cfg, **parse_config_file(args.config))
    overrides = {}
    for key in ("seed", "levels"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "alpha", None) is not None:
        overrides["alpha"] = _parse_value("alpha", args.alpha, tuple[float, float, float])
    if overrides:
        cfg = replace(cfg, **overrides)
    if cfg.levels not in (1, 2, 3):
        raise ConfigError(f"levels must be 1, 2 or 3, got {cfg.levels}")
    cfg.n_channels()  # validates bands
    if cfg.task not in ("single", "multilabel"):
        raise ConfigError(f"task must be 'single' or 'multilabel', got {cfg.task!r}")
    cfg.check_divisibility()
    return cfg


# -- PPM output -----------------------------------------------------------------


def write_ppm(path: str, img: np.ndarray) -> None:
    """Binary P6 from a [3,H,W] float image; values clamped to [0,1]."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"PPM writer needs [3,H,W], got {img.shape}")
    data = np.clip(img, 0.0, 1.0)
    bytes_ = np.round(data * 255.0).astype(np.uint8).transpose(1, 2, 0)
    H, W = bytes_.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{W} {H}\n255\n".encode("ascii"))
        f.write(bytes_.tobytes())


def rgb_proxy(img: np.ndarray, grouping) -> np.ndarray:
    """First group's first three bands; channels repeat if fewer than three."""
    channels = list(grouping.groups[0][:3])
    while len(channels) < 3:
        channels.append(channels[-1])
    return img[channels]


# -- dataset plumbing -------------------------------------------------------------


def _make_datasets(cfg: RunConfig):
    train = synth_dataset(
        cfg.seed, cfg.train_count, cfg.n_channels(), cfg.source_size(), cfg.n_classes, cfg.noise
    )
    val = synth_dataset(
        cfg.seed + 100_000, cfg.val_count, cfg.n_channels(), cfg.source_size(), cfg.n_classes, cfg.noise
    )
    return train, val


def _write_log(path: str, report) -> None:
    with open(path, "w") as f:
        f.write("\n".join(report.log_lines()) + "\n")


# -- commands ------------------------------------------------------------------


def cmd_pretrain(args) -> int:
    cfg = resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    model = MaskedAutoencoder(cfg.model_config(), seed=cfg.seed)
    head = None
    if cfg.levels >= 2:
        head = MultiScaleHead(
            n_channels=cfg.n_channels(),
            feat_ch=cfg.feat_ch,
            levels=cfg.levels,
            dtype=cfg.precision,
            seed=cfg.seed + 1000,
        )
    train_samples, _ = _make_datasets(cfg)

    def save(tag: str, epoch: int) -> None:
        save_checkpoint(
            os.path.join(args.out, f"checkpoint_{tag}.msmae"),
            model.cfg,
            collect_arrays(model, head),
            epoch=epoch,
            seed=cfg.seed,
            meta=cfg.meta(),
        )

    def on_epoch(epoch: int) -> None:
        if cfg.save_interval > 0 and (epoch + 1) % cfg.save_interval == 0:
            save(f"epoch{epoch + 1:04d}", epoch + 1)

    report = pretrain(model, head, train_samples, cfg.train_config("pretrain"), on_epoch)
    save("final", cfg.epochs)
    _write_log(os.path.join(args.out, "pretrain_log.txt"), report)
    print(f"pretrain done: final loss {report.final_train_loss():.6f}, out {args.out}")
    return 0


def cmd_finetune(args) -> int:
    cfg = resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    if args.checkpoint:
        ck = load_checkpoint(args.checkpoint)
        model, _ = restore_models(ck)
        run_meta = dict(ck.meta)
        for key in ("bands", "n_classes", "train_count", "val_count", "noise", "input_size", "patch_size"):
            if key in run_meta:
                setattr(cfg, key, run_meta[key])
    else:
        model = MaskedAutoencoder(cfg.model_config(), seed=cfg.seed)
    train_samples, val_samples = _make_datasets(cfg)
    report = finetune(model, train_samples, val_samples, cfg.train_config("finetune"), cfg.n_classes)
    save_checkpoint(
        os.path.join(args.out, "checkpoint_finetuned.msmae"),
        model.cfg,
        collect_arrays(model, None),
        epoch=cfg.epochs,
        seed=cfg.seed,
        meta=cfg.meta(),
    )
    _write_log(os.path.join(args.out, "finetune_log.txt"), report)
    print(f"finetune done: best {report.best_value:.4f} at epoch {report.best_epoch}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    ck = load_checkpoint(args.checkpoint)
    model, _ = restore_models(ck)
    if not model.has_classifier():
        raise CheckpointError(
            "architecture mismatch, first differing tensor: cls.head.w (checkpoint has no classifier)"
        )
    for key in ("bands", "n_classes", "train_count", "val_count", "noise", "task"):
        if key in ck.meta:
            setattr(cfg, key, ck.meta[key])
    _, val_samples = _make_datasets(cfg)
    value = evaluate(model, val_samples, cfg.n_classes, cfg.task)
    name = "map" if cfg.task == "multilabel" else "top1"
    print(f"{name}={value:.17g}")
    return 0


def cmd_reconstruct(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    model, head = restore_models(ck)
    meta = ck.meta
    cfg = RunConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta.items()})
    os.makedirs(args.out, exist_ok=True)

    samples = synth_dataset(
        ck.seed, cfg.train_count, cfg.n_channels(), cfg.source_size(), cfg.n_classes, cfg.noise
    )
    if not 0 <= args.index < len(samples):
        raise ConfigError(f"sample index {args.index} out of range 0..{len(samples) - 1}")
    source = center_crop(samples[args.index].pixels, 4 * cfg.input_size)
    levels = cfg.levels
    pyr = pyramid_batch(source[None].astype(model.cfg.dtype), levels)

    mask_seed = args.seed if args.seed is not None else ck.seed
    plan = sample_mask(model.cfg, model.cfg.n_per_group, mask_seed)
    grouping = model.cfg.grouping

    with no_grad():
        recon = model.reconstruct(pyr.base, plan)
        scaled = []
        if head is not None and levels >= 2:
            feats = head.lift_to_features(recon)
            feats = head.upsample_block(feats, 1)
            scaled.append(head.project_to_image(feats, 1).data[0])
            if levels == 3 and head.levels == 3:
                feats = head.upsample_block(feats, 2)
                scaled.append(head.project_to_image(feats, 2).data[0])

    base = pyr.base[0]
    proxy_base = rgb_proxy(base, grouping)
    masked = proxy_base.copy()
    P = model.cfg.patch_size
    grid = model.cfg.grid
    for patch_idx in plan.masked[0]:
        r, c = divmod(int(patch_idx), grid)
        masked[:, r * P : (r + 1) * P, c * P : (c + 1) * P] = 0.0

    prefix = os.path.join(args.out, f"sample{args.index:04d}")
    write_ppm(f"{prefix}_original.ppm", proxy_base)
    write_ppm(f"{prefix}_masked.ppm", masked)
    write_ppm(f"{prefix}_recon1x.ppm", rgb_proxy(recon.data[0], grouping))
    for factor, img in zip((2, 4), scaled):
        write_ppm(f"{prefix}_recon{factor}x.ppm", rgb_proxy(img, grouping))
    n_files = 3 + len(scaled)
    print(f"wrote {n_files} ppm files to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    scales = [int(s) for s in args.scales.split(",")]
    if not scales or any(s not in (1, 2, 3) for s in scales):
        raise ConfigError(f"scales must come from {{1,2,3}}, got {args.scales!r}")
    seeds = [int(s) for s in args.seeds.split(",")]
    train_samples, val_samples = _make_datasets(cfg)
    finetune_cfg = cfg.train_config("finetune")
    if args.finetune_epochs:
        finetune_cfg = replace(
            finetune_cfg,
            total_epochs=args.finetune_epochs,
            warmup_epochs=min(finetune_cfg.warmup_epochs, max(0, args.finetune_epochs - 1)),
        )
    if args.finetune_lr:
        finetune_cfg = replace(finetune_cfg, base_lr=args.finetune_lr)
    try:
        rows = ablation_compare(
            train_samples,
            val_samples,
            cfg.model_config(),
            cfg.train_config("pretrain"),
            finetune_cfg,
            scales=scales,
            seeds=seeds,
            n_classes=cfg.n_classes,
            feat_ch=cfg.feat_ch,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e
    for row in rows:
        print(f"scales={row.scales} top1={row.top1:.17g} best_epoch={row.best_epoch:.17g}")
    return 0


# -- argument parsing --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msmae",
        description="Multi-scale masked-autoencoder pre-training on synthetic multi-band imagery.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_shared(p, needs_out=True):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, default=None, help="run seed (overrides config)")
        p.add_argument("--levels", type=int, default=None, help="reconstruction scales: 1, 2 or 3")
        p.add_argument("--alpha", default=None, help="loss weights, e.g. 1.0,1.0,1.0")
        if needs_out:
            p.add_argument("--out", default="runs", help="output directory")

    p = sub.add_parser("pretrain", help="masked multi-scale reconstruction pre-training")
    add_shared(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="classification finetuning from a checkpoint")
    add_shared(p)
    p.add_argument("--checkpoint", default=None, help="pre-training checkpoint (omit to train from scratch)")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a finetuned checkpoint on the held-out split")
    add_shared(p, needs_out=False)
    p.add_argument("--checkpoint", required=True, help="finetuned checkpoint")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct", help="dump original/masked/reconstruction PPM images")
    add_shared(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint to reconstruct with")
    p.add_argument("--index", type=int, default=0, help="sample index")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("ablate", help="compare pre-training scale counts")
    add_shared(p, needs_out=False)
    p.add_argument("--scales", default="1,2,3", help="comma-separated scale counts")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds (needs >= 3)")
    p.add_argument("--finetune-epochs", type=int, default=0, help="override finetune epochs")
    p.add_argument("--finetune-lr", type=float, default=0.0, help="override finetune base lr")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    limit_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return 4
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
