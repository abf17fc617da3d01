"""Band metadata, synthetic multi-band imagery, scale pyramids, patchification.

The synthetic generator stands in for the real satellite archives: each sample
renders a class-dependent pattern (oriented gratings, checkers, blobs) whose
spatial frequency also depends on the class, simulates per-band ground sample
distance by low-pass filtering coarse bands more strongly, and normalizes each
band to [0, 1].  Everything is a pure function of its seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .tensor import ShapeError

DATASET_MAGIC = b"MSMAE-DS"
DATASET_VERSION = 1


@dataclass(frozen=True)
class BandSpec:
    name: str
    gsd_m: float
    wavelength_nm: float


@dataclass(frozen=True)
class ChannelGrouping:
    """Ordered partition of band indices into same-GSD groups."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        flat = [i for g in self.groups for i in g]
        if len(flat) != len(set(flat)):
            raise ValueError(f"groups overlap: {self.groups}")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def n_channels(self) -> int:
        return sum(len(g) for g in self.groups)

    def channel_order(self) -> np.ndarray:
        """All channel indices in group-major order."""
        return np.array([i for g in self.groups for i in g], dtype=np.intp)


@dataclass
class ImageSample:
    pixels: np.ndarray  # [C, H, W], values in [0, 1]
    label: int
    band_meta: list[BandSpec] = field(default_factory=list)


@dataclass
class ScalePyramid:
    """One sample's images at (H,W), (2H,2W) and optionally (4H,4W)."""

    base: np.ndarray
    mid: np.ndarray | None = None
    top: np.ndarray | None = None

    @property
    def levels(self) -> int:
        return 1 + (self.mid is not None) + (self.top is not None)


_SENTINEL2_ROWS = [
    ("B1", 60, 443),
    ("B2", 10, 490),
    ("B3", 10, 560),
    ("B4", 10, 665),
    ("B5", 20, 705),
    ("B6", 20, 740),
    ("B7", 20, 783),
    ("B8", 10, 842),
    ("B8A", 20, 865),
    ("B9", 60, 940),
    ("B10", 60, 1375),
    ("B11", 20, 1610),
    ("B12", 20, 2190),
]

_DISCARDED_BANDS = ("B1", "B9", "B10")


def sentinel2_band_table() -> list[BandSpec]:
    """All 13 Sentinel-2 bands with GSD and central wavelength."""
    return [BandSpec(n, float(g), float(w)) for n, g, w in _SENTINEL2_ROWS]


def retained_bands() -> list[BandSpec]:
    """The 10 bands kept for training (B1, B9, B10 dropped)."""
    return [b for b in sentinel2_band_table() if b.name not in _DISCARDED_BANDS]


def default_grouping() -> ChannelGrouping:
    """Same-GSD groups over the retained bands: {B2,B3,B4,B8}, {B5,B6,B7,B8A}, {B11,B12}."""
    bands = retained_bands()
    index = {b.name: i for i, b in enumerate(bands)}
    names = (("B2", "B3", "B4", "B8"), ("B5", "B6", "B7", "B8A"), ("B11", "B12"))
    return ChannelGrouping(tuple(tuple(index[n] for n in g) for g in names))


def single_group(n_channels: int) -> ChannelGrouping:
    """One group covering all channels (the plain-RGB configuration)."""
    return ChannelGrouping((tuple(range(n_channels)),))


def synthetic_bands(n_channels: int) -> list[BandSpec]:
    """Band metadata for a synthetic C-channel stack."""
    if n_channels == 13:
        return sentinel2_band_table()
    if n_channels == 10:
        return retained_bands()
    if n_channels == 3:
        rgb = {"B4", "B3", "B2"}
        return [b for b in sentinel2_band_table() if b.name in rgb]
    gsd_cycle = (10, 10, 20, 20, 60)
    return [
        BandSpec(f"S{i}", float(gsd_cycle[i % len(gsd_cycle)]), 400.0 + 100.0 * i)
        for i in range(n_channels)
    ]


# -- resampling and pyramids -----------------------------------------------


def bilinear_downsample(img: np.ndarray) -> np.ndarray:
    """Factor-2 bilinear resampling (align-corners disabled).

    At exactly factor 2 the bilinear kernel lands on the center of every
    2x2 block, so the result is the block average.
    """
    *lead, H, W = img.shape
    if H % 2 or W % 2:
        raise ShapeError(f"bilinear_downsample needs even extents, got {img.shape}")
    return img.reshape(*lead, H // 2, 2, W // 2, 2).mean(axis=(-3, -1))


def build_scale_pyramid(source: np.ndarray, levels: int) -> ScalePyramid:
    """Derive the reconstruction targets from one source raster.

    levels=3 treats ``source`` as the (4H,4W) top, levels=2 as the (2H,2W)
    mid; levels=1 passes it through as the base.
    """
    H, W = source.shape[-2:]
    if levels == 3:
        if H % 4 or W % 4:
            raise ShapeError(f"3-level pyramid needs extents divisible by 4, got {source.shape}")
        top = source
        mid = bilinear_downsample(top)
        return ScalePyramid(base=bilinear_downsample(mid), mid=mid, top=top)
    if levels == 2:
        if H % 2 or W % 2:
            raise ShapeError(f"2-level pyramid needs even extents, got {source.shape}")
        mid = source
        return ScalePyramid(base=bilinear_downsample(mid), mid=mid)
    if levels == 1:
        return ScalePyramid(base=source)
    raise ValueError(f"levels must be 1, 2 or 3, got {levels}")


def random_crop(source: np.ndarray, out_size: int, rng: np.random.Generator) -> np.ndarray:
    """Random spatial window, the desk-scale stand-in for resize+crop."""
    H, W = source.shape[-2:]
    if out_size > H or out_size > W:
        raise ShapeError(f"crop {out_size} larger than source {source.shape}")
    y = int(rng.integers(0, H - out_size + 1))
    x = int(rng.integers(0, W - out_size + 1))
    return source[..., y : y + out_size, x : x + out_size]


def center_crop(source: np.ndarray, out_size: int) -> np.ndarray:
    H, W = source.shape[-2:]
    y = (H - out_size) // 2
    x = (W - out_size) // 2
    return source[..., y : y + out_size, x : x + out_size]


# -- synthetic dataset -------------------------------------------------------


def _pattern(rng: np.random.Generator, label: int, size: int, n_classes: int) -> np.ndarray:
    """Class-dependent texture in [-1, 1] at source resolution."""
    yy, xx = np.meshgrid(
        np.linspace(0.0, 1.0, size, endpoint=False),
        np.linspace(0.0, 1.0, size, endpoint=False),
        indexing="ij",
    )
    family = label % 3
    level = label // 3
    cycles = 4.0 * (1.8**level)
    theta = np.pi * ((label * 0.381966) % 1.0)
    if family == 0:  # oriented grating
        phase = rng.uniform(0.0, 2.0 * np.pi)
        u = xx * np.cos(theta) + yy * np.sin(theta)
        return np.sin(2.0 * np.pi * cycles * u + phase)
    if family == 1:  # checkerboard
        px = rng.uniform(0.0, 2.0 * np.pi)
        py = rng.uniform(0.0, 2.0 * np.pi)
        u = xx * np.cos(theta) + yy * np.sin(theta)
        v = -xx * np.sin(theta) + yy * np.cos(theta)
        board = np.sin(2.0 * np.pi * cycles * u + px) * np.sin(2.0 * np.pi * cycles * v + py)
        return np.tanh(4.0 * board)
    # blobs: class sets the dot radius and density
    n_blobs = 6 + 3 * level
    radius = 0.035 + 0.02 * level
    acc = np.zeros((size, size))
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0.0, 1.0, 2)
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        acc += np.exp(-d2 / (2.0 * radius**2))
    return np.clip(acc, 0.0, 1.0) * 2.0 - 1.0


def synth_dataset(
    seed: int,
    count: int,
    n_channels: int,
    size: int,
    n_classes: int,
    noise: float = 0.03,
    blur_scale: float = 0.8,
) -> list[ImageSample]:
    """Deterministic procedural multi-band imagery with recoverable labels.

    ``size`` is the source resolution; model inputs come from pyramid
    downsampling.  Bands share the class pattern but differ in gain, phase
    and GSD-driven blur, so channel groups see genuinely different content.
    """
    if n_classes < 2:
        raise ValueError(f"n_classes must be >= 2, got {n_classes}")
    bands = synthetic_bands(n_channels)
    samples = []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        label = i % n_classes
        pattern = _pattern(rng, label, size, n_classes)
        # smooth shared background so bands are not pure texture
        bg = ndimage.gaussian_filter(rng.standard_normal((size, size)), size / 8.0)
        bg = bg / (np.abs(bg).max() + 1e-9)
        band_phase = rng.uniform(0.0, 2.0 * np.pi)
        pixels = np.empty((n_channels, size, size))
        for c, band in enumerate(bands):
            gain = 0.75 + 0.25 * np.sin(2.0 * np.pi * c / n_channels + band_phase)
            img = 0.55 * gain * pattern + 0.3 * bg
            sigma = blur_scale * (band.gsd_m / 10.0)
            if sigma > 0:
                img = ndimage.gaussian_filter(img, sigma, mode="reflect")
            img = img + noise * rng.standard_normal((size, size))
            lo, hi = img.min(), img.max()
            pixels[c] = (img - lo) / (hi - lo + 1e-12)
        samples.append(ImageSample(pixels=pixels, label=label, band_meta=bands))
    return samples


# -- patchification ----------------------------------------------------------


def patchify(img: np.ndarray, patch: int) -> np.ndarray:
    """[C,H,W] -> [N, P*P*C] in row-major patch order."""
    C, H, W = img.shape
    if H % patch or W % patch:
        raise ShapeError(f"extents {(H, W)} not divisible by patch {patch}")
    h, w = H // patch, W // patch
    x = img.reshape(C, h, patch, w, patch)
    x = x.transpose(1, 3, 2, 4, 0)  # [h, w, P, P, C]
    return x.reshape(h * w, patch * patch * C)


def unpatchify(seq: np.ndarray, patch: int, H: int, W: int) -> np.ndarray:
    """Exact inverse of :func:`patchify`."""
    h, w = H // patch, W // patch
    N, D = seq.shape
    if N != h * w or D % (patch * patch):
        raise ShapeError(f"sequence {seq.shape} does not tile {(H, W)} with patch {patch}")
    C = D // (patch * patch)
    x = seq.reshape(h, w, patch, patch, C)
    x = x.transpose(4, 0, 2, 1, 3)  # [C, h, P, w, P]
    return x.reshape(C, H, W)


# -- binary container --------------------------------------------------------


def save_dataset(samples: list[ImageSample], path: str) -> None:
    """Flat little-endian container: header + per-sample label and f32 pixels."""
    if not samples:
        raise ValueError("cannot export an empty dataset")
    C, H, W = samples[0].pixels.shape
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<IIIII", DATASET_VERSION, len(samples), C, H, W))
        for s in samples:
            if s.pixels.shape != (C, H, W):
                raise ShapeError(
                    f"inconsistent sample shape {s.pixels.shape}, expected {(C, H, W)}"
                )
            f.write(struct.pack("<I", s.label))
            f.write(s.pixels.astype("<f4").tobytes())


def load_dataset(path: str) -> list[ImageSample]:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != DATASET_MAGIC:
            raise ValueError(f"not a dataset container (magic {magic!r})")
        version, count, C, H, W = struct.unpack("<IIIII", f.read(20))
        if version != DATASET_VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        bands = synthetic_bands(C)
        samples = []
        for _ in range(count):
            (label,) = struct.unpack("<I", f.read(4))
            pixels = np.frombuffer(f.read(4 * C * H * W), dtype="<f4").reshape(C, H, W)
            samples.append(
                ImageSample(pixels=pixels.astype(np.float64), label=label, band_meta=bands)
            )
    return samples
