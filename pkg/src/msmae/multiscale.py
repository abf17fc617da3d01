"""Multi-scale reconstruction head.

The base-scale reconstruction is lifted back into feature space by a 1x1
projection, doubled in resolution by convolutional upsample blocks (transpose
conv -> channel norm -> leaky relu -> two-conv residual block), and projected
back to image space at each scale.  The combined objective is MSE at the base
scale plus L1 at the upsampled scales, weighted per scale.

The second upsample block consumes the feature output of the first block, not
its image projection, so the upsampling path chains in feature space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ParamStore, Tensor


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0

    def __post_init__(self):
        if self.alpha1 <= 0:
            raise ValueError(f"alpha1 must be positive, got {self.alpha1}")
        if self.alpha2 < 0 or self.alpha3 < 0:
            raise ValueError(f"loss weights must be nonnegative: {self}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.alpha1, self.alpha2, self.alpha3)


@dataclass
class MultiScaleResult:
    loss: Tensor
    l1: Tensor
    l2: Tensor | None
    l3: Tensor | None
    mid_recon: Tensor | None
    top_recon: Tensor | None

    def parts(self) -> tuple[float, float, float]:
        return (
            self.l1.item(),
            self.l2.item() if self.l2 is not None else 0.0,
            self.l3.item() if self.l3 is not None else 0.0,
        )


def combine_losses(
    weights: LossWeights,
    l1: Tensor,
    l2: Tensor | None,
    l3: Tensor | None,
    normalize: bool = False,
) -> Tensor:
    """Weighted sum alpha1*L1 + alpha2*L2 + alpha3*L3 over the present scales.

    ``normalize`` divides by the sum of the participating weights (the
    weighted-mean reading of the objective).
    """
    loss = weights.alpha1 * l1
    total = weights.alpha1
    if l2 is not None:
        loss = loss + weights.alpha2 * l2
        total += weights.alpha2
    if l3 is not None:
        loss = loss + weights.alpha3 * l3
        total += weights.alpha3
    if normalize:
        loss = loss * (1.0 / total)
    return loss


class MultiScaleHead:
    """Feature lift, chained upsample blocks, per-scale image projections."""

    def __init__(
        self,
        n_channels: int,
        feat_ch: int = 64,
        levels: int = 3,
        dtype: str = "float64",
        seed: int = 0,
    ):
        if levels not in (2, 3):
            raise ValueError(f"multiscale head needs levels 2 or 3, got {levels}")
        self.n_channels = n_channels
        self.feat_ch = feat_ch
        self.levels = levels
        self.params = ParamStore()
        self._np_dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)

        self.params.add(
            "head.lift.w",
            T.fanin_uniform(rng, (feat_ch, n_channels, 1, 1), n_channels, dtype=self._np_dtype),
        )
        self.params.add("head.lift.b", np.zeros(feat_ch, dtype=self._np_dtype))
        for i in range(1, levels):
            self._add_upsample_block(rng, i)
            self.params.add(
                f"head.proj{i}.w",
                T.fanin_uniform(rng, (n_channels, feat_ch, 1, 1), feat_ch, dtype=self._np_dtype),
            )
            self.params.add(f"head.proj{i}.b", np.zeros(n_channels, dtype=self._np_dtype))

    def _add_upsample_block(self, rng, i: int):
        c = self.feat_ch
        d = self._np_dtype
        self.params.add(f"head.up{i}.tconv.w", T.fanin_uniform(rng, (c, c, 2, 2), 4 * c, dtype=d))
        self.params.add(f"head.up{i}.tconv.b", np.zeros(c, dtype=d))
        self.params.add(f"head.up{i}.norm.g", np.ones(c, dtype=d))
        self.params.add(f"head.up{i}.norm.b", np.zeros(c, dtype=d))
        self.params.add(f"head.up{i}.conv1.w", T.fanin_uniform(rng, (c, c, 3, 3), 9 * c, dtype=d))
        self.params.add(f"head.up{i}.conv1.b", np.zeros(c, dtype=d))
        self.params.add(f"head.up{i}.conv2.w", T.fanin_uniform(rng, (c, c, 3, 3), 9 * c, dtype=d))
        self.params.add(f"head.up{i}.conv2.b", np.zeros(c, dtype=d))

    # -- pieces -----------------------------------------------------------

    def lift_to_features(self, image: Tensor) -> Tensor:
        """1x1 per-pixel linear map from image channels to feature width."""
        return T.conv2d(image, self.params["head.lift.w"], self.params["head.lift.b"])

    def _channel_norm(self, x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
        # layer norm over the channel axis at every spatial position,
        # batch-independent by construction
        moved = x.transpose(0, 2, 3, 1)
        return T.layer_norm(moved, gain, bias).transpose(0, 3, 1, 2)

    def upsample_block(self, x: Tensor, index: int = 1) -> Tensor:
        """Double spatial extents: tconv -> norm -> leaky relu -> residual convs."""
        p = self.params
        pre = f"head.up{index}"
        x = T.transpose_conv2d(x, p[f"{pre}.tconv.w"], p[f"{pre}.tconv.b"])
        x = self._channel_norm(x, p[f"{pre}.norm.g"], p[f"{pre}.norm.b"])
        x = T.leaky_relu(x)
        r = T.conv2d(x, p[f"{pre}.conv1.w"], p[f"{pre}.conv1.b"], pad=1)
        r = T.leaky_relu(r)
        r = T.conv2d(r, p[f"{pre}.conv2.w"], p[f"{pre}.conv2.b"], pad=1)
        return x + r

    def project_to_image(self, feats: Tensor, index: int = 1) -> Tensor:
        """1x1 per-pixel linear map from feature width back to image channels."""
        return T.conv2d(
            feats, self.params[f"head.proj{index}.w"], self.params[f"head.proj{index}.b"]
        )

    # -- combined objective --------------------------------------------------

    def _as_target(self, arr: np.ndarray, like: Tensor) -> Tensor:
        t = np.asarray(arr, dtype=like.dtype)
        if t.ndim == 3:
            t = t[None]
        return Tensor(t)

    def forward(
        self,
        base_recon: Tensor,
        pyramid,
        weights: LossWeights,
        levels: int,
        normalize: bool = False,
    ) -> MultiScaleResult:
        """Reconstruct upward through the pyramid and combine the losses."""
        if levels not in (1, 2, 3):
            raise ValueError(f"levels must be 1, 2 or 3, got {levels}")
        if levels > 1 and levels > self.levels:
            raise ValueError(f"head built for {self.levels} levels, asked for {levels}")
        base = self._as_target(pyramid.base, base_recon)
        if base_recon.shape != base.shape:
            raise T.ShapeError(
                f"reconstruction {base_recon.shape} does not match base {base.shape}"
            )
        l1 = T.mse_loss(base_recon, base)
        l2 = l3 = mid_recon = top_recon = None
        if levels >= 2:
            if pyramid.mid is None:
                raise ValueError("pyramid has no mid level but levels >= 2 requested")
            feats = self.lift_to_features(base_recon)
            feats_mid = self.upsample_block(feats, 1)
            mid_recon = self.project_to_image(feats_mid, 1)
            l2 = T.l1_loss(mid_recon, self._as_target(pyramid.mid, base_recon))
        if levels == 3:
            if pyramid.top is None:
                raise ValueError("pyramid has no top level but levels=3 requested")
            feats_top = self.upsample_block(feats_mid, 2)
            top_recon = self.project_to_image(feats_top, 2)
            l3 = T.l1_loss(top_recon, self._as_target(pyramid.top, base_recon))
        loss = combine_losses(weights, l1, l2, l3, normalize=normalize)
        return MultiScaleResult(
            loss=loss, l1=l1, l2=l2, l3=l3, mid_recon=mid_recon, top_recon=top_recon
        )
