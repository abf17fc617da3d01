"""Binary checkpoints: header + named float64 tensor section.

Layout (little-endian):

    magic   8 bytes  "MSMAE-CK"
    version u32
    meta    u32 length + UTF-8 JSON (model config, run settings, epoch, seed)
    epoch   u32
    seed    u64
    count   u32
    tensor  repeated: name_len u32, name UTF-8, rank u32, extents u64 * rank,
            data float64

Tensors are stored in double precision regardless of training precision so
round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import ChannelGrouping
from .model import MaskedAutoencoder, ModelConfig
from .multiscale import MultiScaleHead

CHECKPOINT_MAGIC = b"MSMAE-CK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable checkpoint or architecture mismatch."""


def _config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "patch_size": cfg.patch_size,
        "embed_dim": cfg.embed_dim,
        "depth": cfg.depth,
        "heads": cfg.heads,
        "decoder_dim": cfg.decoder_dim,
        "decoder_depth": cfg.decoder_depth,
        "mask_ratio": cfg.mask_ratio,
        "grouping": [list(g) for g in cfg.grouping.groups],
        "input_size": cfg.input_size,
        "enc_split": list(cfg.enc_split),
        "dtype": cfg.dtype,
    }


def _config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["grouping"] = ChannelGrouping(tuple(tuple(g) for g in d["grouping"]))
    d["enc_split"] = tuple(d["enc_split"])
    return ModelConfig(**d)


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    epoch: int
    seed: int
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)


def save_checkpoint(
    path: str,
    model_cfg: ModelConfig,
    arrays: dict[str, np.ndarray],
    epoch: int,
    seed: int,
    meta: dict | None = None,
) -> None:
    payload = {"model": _config_to_dict(model_cfg), "run": meta or {}}
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<IQ", epoch, seed))
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            enc = name.encode("utf-8")
            f.write(struct.pack("<I", len(enc)))
            f.write(enc)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"not a checkpoint (magic {magic!r})")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", f.read(4))
        payload = json.loads(f.read(blob_len).decode("utf-8"))
        epoch, seed = struct.unpack("<IQ", f.read(12))
        (count,) = struct.unpack("<I", f.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}Q", f.read(8 * rank)) if rank else ()
            n = int(np.prod(shape)) if shape else 1
            arrays[name] = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(shape).copy()
    return Checkpoint(
        model_cfg=_config_from_dict(payload["model"]),
        epoch=epoch,
        seed=seed,
        arrays=arrays,
        meta=payload.get("run", {}),
    )


def collect_arrays(model: MaskedAutoencoder, head: MultiScaleHead | None) -> dict[str, np.ndarray]:
    arrays = model.params.state_arrays()
    if head is not None:
        arrays.update(head.params.state_arrays())
    return arrays


def restore_models(ck: Checkpoint) -> tuple[MaskedAutoencoder, MultiScaleHead | None]:
    """Rebuild model (and head, when present) and load the stored tensors."""
    model = MaskedAutoencoder(ck.model_cfg, seed=0)
    if "cls.head.w" in ck.arrays:
        model.add_classifier(int(ck.arrays["cls.head.w"].shape[1]), seed=0)

    head = None
    head_arrays = {n: a for n, a in ck.arrays.items() if n.startswith("head.")}
    model_arrays = {n: a for n, a in ck.arrays.items() if not n.startswith("head.")}
    if head_arrays:
        head = MultiScaleHead(
            n_channels=ck.model_cfg.n_channels,
            feat_ch=int(ck.arrays["head.lift.w"].shape[0]),
            levels=3 if "head.up2.tconv.w" in ck.arrays else 2,
            dtype=ck.model_cfg.dtype,
            seed=0,
        )

    def load(store, arrays):
        expected = set(store.names())
        got = set(arrays)
        if expected != got:
            mismatched = sorted(expected.symmetric_difference(got))
            raise CheckpointError(
                f"architecture mismatch, first differing tensor: {mismatched[0]} "
                f"(all: {', '.join(mismatched)})"
            )
        for name in store.names():
            if store[name].data.shape != arrays[name].shape:
                raise CheckpointError(
                    f"architecture mismatch, first differing tensor: {name} "
                    f"(stored {arrays[name].shape}, model {store[name].data.shape})"
                )
        store.load_arrays(arrays)

    load(model.params, model_arrays)
    if head is not None:
        load(head.params, head_arrays)
    return model, head
