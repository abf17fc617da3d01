"""Masked autoencoder for multi-band imagery.

Channel groups get separate patch-embedding layers and independent masks;
their token sequences are concatenated along the token axis.  Positional
encodings concatenate x, y and group slices to the embedding width.  The
encoder sees visible tokens only; the decoder restores original order with a
shared learned mask token, adds encodings for all tokens, and projects each
group back to pixel space.

All model operations carry a leading batch axis; the per-sample contracts
hold on the trailing axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import ChannelGrouping, single_group
from .tensor import ParamStore, Tensor

OMEGA_DEFAULT = 10000.0


def sinusoidal_encoding(pos: float, d_axis: int, omega: float = OMEGA_DEFAULT) -> np.ndarray:
    """Interleaved sin/cos encoding of one position into ``d_axis`` features."""
    if d_axis % 2:
        raise ValueError(f"encoding width must be even, got {d_axis}")
    if omega <= 1.0:
        raise ValueError(f"omega must exceed 1, got {omega}")
    return _sin_table(np.array([pos], dtype=np.float64), d_axis, omega)[0]


def _sin_table(positions: np.ndarray, d_axis: int, omega: float = OMEGA_DEFAULT) -> np.ndarray:
    """[len(positions), d_axis] table; even columns sin, odd columns cos."""
    half = np.arange(d_axis // 2, dtype=np.float64)
    freq = omega ** (-2.0 * half / d_axis)
    ang = positions[:, None] * freq[None, :]
    out = np.empty((len(positions), d_axis), dtype=np.float64)
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


def _split_widths(enc_split: tuple[float, float, float], d_model: int) -> tuple[int, int, int]:
    widths = []
    for frac in enc_split:
        w = frac * d_model
        if abs(w - round(w)) > 1e-9:
            raise ValueError(f"enc_split {enc_split} does not divide D={d_model} integrally")
        w = int(round(w))
        if w % 2:
            raise ValueError(f"enc_split slice width {w} must be even (D={d_model})")
        widths.append(w)
    if sum(widths) != d_model:
        raise ValueError(f"enc_split {enc_split} must sum to D={d_model}, got {sum(widths)}")
    return tuple(widths)


def encoding_for_tokens(
    rows: np.ndarray,
    cols: np.ndarray,
    groups: np.ndarray,
    d_model: int,
    enc_split: tuple[float, float, float],
    omega: float = OMEGA_DEFAULT,
) -> np.ndarray:
    """Per-token [enc_x(col) || enc_y(row) || enc_group(g)] encodings."""
    wx, wy, wg = _split_widths(enc_split, d_model)
    parts = [
        _sin_table(np.asarray(cols, dtype=np.float64), wx, omega),
        _sin_table(np.asarray(rows, dtype=np.float64), wy, omega),
    ]
    if wg:
        parts.append(_sin_table(np.asarray(groups, dtype=np.float64), wg, omega))
    return np.concatenate(parts, axis=1)


def grid_pos_encoding(
    rows: int,
    cols: int,
    d_model: int,
    enc_split: tuple[float, float, float],
    group_ids: tuple[int, ...] = (0,),
    omega: float = OMEGA_DEFAULT,
) -> np.ndarray:
    """[N_total, D] encodings for a row-major grid repeated per group."""
    r = np.repeat(np.arange(rows), cols)
    c = np.tile(np.arange(cols), rows)
    r_all = np.concatenate([r] * len(group_ids))
    c_all = np.concatenate([c] * len(group_ids))
    g_all = np.repeat(np.asarray(group_ids), rows * cols)
    return encoding_for_tokens(r_all, c_all, g_all, d_model, enc_split, omega)


@dataclass
class ModelConfig:
    patch_size: int = 8
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    decoder_dim: int = 64
    decoder_depth: int = 4
    mask_ratio: float = 0.75
    grouping: ChannelGrouping | str = "rgb-single-group"
    input_size: int = 32
    enc_split: tuple[float, float, float] | None = None
    dtype: str = "float64"

    def __post_init__(self):
        if isinstance(self.grouping, str):
            if self.grouping != "rgb-single-group":
                raise ValueError(f"unknown grouping preset: {self.grouping!r}")
            self.grouping = single_group(3)
        if self.enc_split is None:
            self.enc_split = (0.5, 0.5, 0.0) if self.grouping.n_groups == 1 else (0.375, 0.375, 0.25)
        self.enc_split = tuple(float(f) for f in self.enc_split)
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if self.input_size % self.patch_size:
            raise ValueError(
                f"input_size {self.input_size} not divisible by patch_size {self.patch_size}"
            )
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if np.dtype(self.dtype) not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        _split_widths(self.enc_split, self.embed_dim)
        _split_widths(self.enc_split, self.decoder_dim)

    @property
    def grid(self) -> int:
        return self.input_size // self.patch_size

    @property
    def n_per_group(self) -> int:
        return self.grid * self.grid

    @property
    def n_groups(self) -> int:
        return self.grouping.n_groups

    @property
    def n_tokens(self) -> int:
        return self.n_groups * self.n_per_group

    @property
    def n_channels(self) -> int:
        return self.grouping.n_channels


@dataclass
class MaskPlan:
    """Per-group disjoint visible/masked patch indices (into that group)."""

    visible: tuple[np.ndarray, ...]
    masked: tuple[np.ndarray, ...]
    n_per_group: int

    @property
    def n_groups(self) -> int:
        return len(self.visible)

    @property
    def n_visible(self) -> int:
        return sum(len(v) for v in self.visible)

    @property
    def n_masked(self) -> int:
        return sum(len(m) for m in self.masked)

    def global_visible(self) -> np.ndarray:
        return np.concatenate(
            [g * self.n_per_group + v for g, v in enumerate(self.visible)]
        )

    def global_masked(self) -> np.ndarray:
        return np.concatenate(
            [g * self.n_per_group + m for g, m in enumerate(self.masked)]
        )


def sample_mask(cfg: ModelConfig, n_per_group: int, seed: int) -> MaskPlan:
    """Independent uniform masking per channel group at ratio ``cfg.mask_ratio``."""
    n_mask = int(cfg.mask_ratio * n_per_group + 0.5)  # round half up
    if n_mask <= 0 or n_mask >= n_per_group:
        raise ValueError(
            f"degenerate mask: {n_mask} of {n_per_group} patches at ratio {cfg.mask_ratio}"
        )
    rng = np.random.default_rng(seed)
    visible, masked = [], []
    for _ in range(cfg.n_groups):
        perm = rng.permutation(n_per_group)
        masked.append(np.sort(perm[:n_mask]))
        visible.append(np.sort(perm[n_mask:]))
    return MaskPlan(visible=tuple(visible), masked=tuple(masked), n_per_group=n_per_group)


@dataclass
class TokenSequence:
    """Embedded tokens plus the bookkeeping that ties them to the image grid."""

    tokens: Tensor  # [B, N_total, D]
    group_of_token: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    n_per_group: int

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[1]


class MaskedAutoencoder:
    """Grouped patch embeddings, transformer encoder/decoder, pixel heads."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.params = ParamStore()
        self._np_dtype = np.dtype(cfg.dtype)
        rng = np.random.default_rng(seed)
        P, D, dec = cfg.patch_size, cfg.embed_dim, cfg.decoder_dim

        for gi, group in enumerate(cfg.grouping.groups):
            in_dim = P * P * len(group)
            self._add_linear(rng, f"embed.g{gi}.w", in_dim, D)
            self._add_zeros(f"embed.g{gi}.b", (D,))
        for i in range(cfg.depth):
            self._add_block(rng, f"enc.block{i}", D)
        self._add_ones(f"enc.ln.g", (D,))
        self._add_zeros(f"enc.ln.b", (D,))

        self._add_linear(rng, "dec.embed.w", D, dec)
        self._add_zeros("dec.embed.b", (dec,))
        self._add_trunc(rng, "dec.mask_token", (dec,))
        for i in range(cfg.decoder_depth):
            self._add_block(rng, f"dec.block{i}", dec)
        self._add_ones("dec.ln.g", (dec,))
        self._add_zeros("dec.ln.b", (dec,))
        for gi, group in enumerate(cfg.grouping.groups):
            out_dim = P * P * len(group)
            self._add_linear(rng, f"dec.out.g{gi}.w", dec, out_dim)
            self._add_zeros(f"dec.out.g{gi}.b", (out_dim,))

        group_ids = tuple(range(cfg.n_groups))
        self._enc_pos = grid_pos_encoding(
            cfg.grid, cfg.grid, D, cfg.enc_split, group_ids
        ).astype(self._np_dtype)
        self._dec_pos = grid_pos_encoding(
            cfg.grid, cfg.grid, dec, cfg.enc_split, group_ids
        ).astype(self._np_dtype)

    # -- parameter helpers ---------------------------------------------------

    def _add_trunc(self, rng, name, shape):
        self.params.add(name, T.trunc_normal(rng, shape, dtype=self._np_dtype))

    def _add_linear(self, rng, name, fan_in, fan_out):
        # tokens (mask/class) keep trunc-normal 0.02; weight matrices use
        # xavier so content is not drowned by the O(1) positional encodings
        self.params.add(
            name, T.xavier_uniform(rng, (fan_in, fan_out), fan_in, fan_out, dtype=self._np_dtype)
        )

    def _add_zeros(self, name, shape):
        self.params.add(name, np.zeros(shape, dtype=self._np_dtype))

    def _add_ones(self, name, shape):
        self.params.add(name, np.ones(shape, dtype=self._np_dtype))

    def _add_block(self, rng, prefix, d):
        hidden = 4 * d
        self._add_ones(f"{prefix}.ln1.g", (d,))
        self._add_zeros(f"{prefix}.ln1.b", (d,))
        self._add_linear(rng, f"{prefix}.attn.wqkv", d, 3 * d)
        self._add_zeros(f"{prefix}.attn.bqkv", (3 * d,))
        self._add_linear(rng, f"{prefix}.attn.wo", d, d)
        self._add_zeros(f"{prefix}.attn.bo", (d,))
        self._add_ones(f"{prefix}.ln2.g", (d,))
        self._add_zeros(f"{prefix}.ln2.b", (d,))
        self._add_linear(rng, f"{prefix}.mlp.w1", d, hidden)
        self._add_zeros(f"{prefix}.mlp.b1", (hidden,))
        self._add_linear(rng, f"{prefix}.mlp.w2", hidden, d)
        self._add_zeros(f"{prefix}.mlp.b2", (d,))

    # -- transformer pieces ----------------------------------------------------

    def _attention(self, x: Tensor, prefix: str, heads: int) -> Tensor:
        p = self.params
        B, N, d = x.shape
        dh = d // heads
        qkv = T.matmul(x, p[f"{prefix}.attn.wqkv"]) + p[f"{prefix}.attn.bqkv"]
        qkv = qkv.reshape(B, N, 3, heads, dh).transpose(2, 0, 3, 1, 4)
        q = T.take(qkv, np.array([0]), axis=0).reshape(B, heads, N, dh)
        k = T.take(qkv, np.array([1]), axis=0).reshape(B, heads, N, dh)
        v = T.take(qkv, np.array([2]), axis=0).reshape(B, heads, N, dh)
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * float(1.0 / np.sqrt(dh))
        attn = T.softmax(scores, axis=-1)
        ctx = T.matmul(attn, v).transpose(0, 2, 1, 3).reshape(B, N, d)
        return T.matmul(ctx, p[f"{prefix}.attn.wo"]) + p[f"{prefix}.attn.bo"]

    def _mlp(self, x: Tensor, prefix: str) -> Tensor:
        p = self.params
        h = T.gelu(T.matmul(x, p[f"{prefix}.mlp.w1"]) + p[f"{prefix}.mlp.b1"])
        return T.matmul(h, p[f"{prefix}.mlp.w2"]) + p[f"{prefix}.mlp.b2"]

    def _block(self, x: Tensor, prefix: str, heads: int) -> Tensor:
        p = self.params
        x = x + self._attention(
            T.layer_norm(x, p[f"{prefix}.ln1.g"], p[f"{prefix}.ln1.b"]), prefix, heads
        )
        return x + self._mlp(
            T.layer_norm(x, p[f"{prefix}.ln2.g"], p[f"{prefix}.ln2.b"]), prefix
        )

    def _trunk(self, x: Tensor, stem: str, depth: int, heads: int) -> Tensor:
        for i in range(depth):
            x = self._block(x, f"{stem}.block{i}", heads)
        p = self.params
        return T.layer_norm(x, p[f"{stem}.ln.g"], p[f"{stem}.ln.b"])

    # -- patch embedding ---------------------------------------------------------

    def _as_batch(self, images) -> Tensor:
        if isinstance(images, Tensor):
            x = images
        else:
            x = Tensor(np.asarray(images, dtype=self._np_dtype))
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        if x.ndim != 4:
            raise T.ShapeError(f"expected [B,C,H,W] or [C,H,W], got {x.shape}")
        return x

    def _patchify(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        P = self.cfg.patch_size
        h, w = H // P, W // P
        x = x.reshape(B, C, h, P, w, P).transpose(0, 2, 4, 3, 5, 1)
        return x.reshape(B, h * w, P * P * C)

    def _unpatchify(self, seq: Tensor, channels: int, H: int, W: int) -> Tensor:
        B, N, _ = seq.shape
        P = self.cfg.patch_size
        h, w = H // P, W // P
        x = seq.reshape(B, h, w, P, P, channels).transpose(0, 5, 1, 3, 2, 4)
        return x.reshape(B, channels, H, W)

    def patch_embed(self, images) -> TokenSequence:
        """Per-group linear patch embeddings, concatenated along the token axis."""
        cfg = self.cfg
        x = self._as_batch(images)
        if x.shape[1] != cfg.n_channels:
            raise T.ShapeError(
                f"input has {x.shape[1]} bands but grouping covers {cfg.n_channels}"
            )
        parts = []
        for gi, group in enumerate(cfg.grouping.groups):
            sub = T.take(x, np.asarray(group, dtype=np.intp), axis=1)
            seq = self._patchify(sub)
            parts.append(
                T.matmul(seq, self.params[f"embed.g{gi}.w"]) + self.params[f"embed.g{gi}.b"]
            )
        tokens = T.concat(parts, axis=1) if len(parts) > 1 else parts[0]
        grid = cfg.grid
        rows = np.tile(np.repeat(np.arange(grid), grid), cfg.n_groups)
        cols = np.tile(np.tile(np.arange(grid), grid), cfg.n_groups)
        groups = np.repeat(np.arange(cfg.n_groups), cfg.n_per_group)
        return TokenSequence(
            tokens=tokens,
            group_of_token=groups,
            rows=rows,
            cols=cols,
            n_per_group=cfg.n_per_group,
        )

    # -- encoder / decoder ---------------------------------------------------------

    def encode(self, seq: TokenSequence, plan: MaskPlan) -> Tensor:
        """Run the encoder over visible tokens only; order follows visible indices."""
        cfg = self.cfg
        if plan.n_per_group != seq.n_per_group or plan.n_groups != cfg.n_groups:
            raise T.ShapeError(
                f"mask plan ({plan.n_groups} groups x {plan.n_per_group}) does not match "
                f"token sequence ({cfg.n_groups} groups x {seq.n_per_group})"
            )
        gvis = plan.global_visible()
        x = T.take(seq.tokens, gvis, axis=1)
        pos = encoding_for_tokens(
            seq.rows[gvis],
            seq.cols[gvis],
            seq.group_of_token[gvis],
            cfg.embed_dim,
            cfg.enc_split,
        ).astype(self._np_dtype)
        x = x + Tensor(pos)
        return self._trunk(x, "enc", cfg.depth, cfg.heads)

    def assemble_decoder_tokens(self, visible_feats: Tensor, plan: MaskPlan) -> Tensor:
        """Project to decoder width, restore original slots, fill the rest
        with the shared mask token.  Positional encodings are not yet added."""
        p = self.params
        B = visible_feats.shape[0]
        x = T.matmul(visible_feats, p["dec.embed.w"]) + p["dec.embed.b"]
        n_masked = plan.n_masked
        mtok = p["dec.mask_token"].reshape(1, 1, self.cfg.decoder_dim)
        mtok = T.broadcast_to(mtok, (B, n_masked, self.cfg.decoder_dim))
        stacked = T.concat([x, mtok], axis=1)
        order = np.concatenate([plan.global_visible(), plan.global_masked()])
        return T.take(stacked, np.argsort(order), axis=1)

    def decode_reconstruct(self, visible_feats: Tensor, plan: MaskPlan) -> Tensor:
        """Decode to a full [B, C, H, W] reconstruction at the base scale."""
        cfg = self.cfg
        x = self.assemble_decoder_tokens(visible_feats, plan)
        x = x + Tensor(self._dec_pos)
        x = self._trunk(x, "dec", cfg.decoder_depth, cfg.heads)
        H = W = cfg.input_size
        n = cfg.n_per_group
        group_imgs = []
        for gi, group in enumerate(cfg.grouping.groups):
            rows = T.take(x, np.arange(gi * n, (gi + 1) * n), axis=1)
            seq = T.matmul(rows, self.params[f"dec.out.g{gi}.w"]) + self.params[f"dec.out.g{gi}.b"]
            group_imgs.append(self._unpatchify(seq, len(group), H, W))
        stacked = T.concat(group_imgs, axis=1) if len(group_imgs) > 1 else group_imgs[0]
        restore = np.argsort(cfg.grouping.channel_order())
        return T.take(stacked, restore, axis=1)

    def reconstruct(self, images, plan: MaskPlan) -> Tensor:
        """Full pretraining forward pass: embed, mask, encode, decode."""
        seq = self.patch_embed(images)
        feats = self.encode(seq, plan)
        return self.decode_reconstruct(feats, plan)

    # -- classification head ---------------------------------------------------------

    def add_classifier(self, n_classes: int, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        self._add_trunc(rng, "cls.token", (self.cfg.embed_dim,))
        self._add_linear(rng, "cls.head.w", self.cfg.embed_dim, n_classes)
        self._add_zeros("cls.head.b", (n_classes,))

    def has_classifier(self) -> bool:
        return "cls.token" in self.params

    def classify(self, images) -> Tensor:
        """Class-token logits over all (unmasked) tokens."""
        if not self.has_classifier():
            raise RuntimeError("classifier head not initialized; call add_classifier")
        cfg = self.cfg
        seq = self.patch_embed(images)
        x = seq.tokens + Tensor(self._enc_pos)
        B = x.shape[0]
        cls = self.params["cls.token"].reshape(1, 1, cfg.embed_dim)
        x = T.concat([T.broadcast_to(cls, (B, 1, cfg.embed_dim)), x], axis=1)
        x = self._trunk(x, "enc", cfg.depth, cfg.heads)
        head = T.take(x, np.array([0]), axis=1).reshape(B, cfg.embed_dim)
        return T.matmul(head, self.params["cls.head.w"]) + self.params["cls.head.b"]
