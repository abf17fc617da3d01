#!/usr/bin/env python3
"""Synthetic multi-band imagery: band table, channel groups, scale pyramid.

Writes PPM previews of one sample's pyramid into demos/out/.

Run:  python3 demos/synthetic_imagery.py
"""

import os

import numpy as np

from msmae.cli import rgb_proxy, write_ppm
from msmae.data import (
    build_scale_pyramid,
    default_grouping,
    retained_bands,
    sentinel2_band_table,
    synth_dataset,
)

print("== Sentinel-2 band table ==")
for band in sentinel2_band_table():
    print(f"  {band.name:4s} gsd {band.gsd_m:4.0f} m   wavelength {band.wavelength_nm:6.0f} nm")

grouping = default_grouping()
bands = retained_bands()
print("\n== channel groups (same GSD within each group) ==")
for gi, group in enumerate(grouping.groups):
    names = ", ".join(bands[i].name for i in group)
    print(f"  group {gi}: {names}")

print("\n== synthetic dataset ==")
samples = synth_dataset(seed=7, count=6, n_channels=10, size=128, n_classes=6)
for i, s in enumerate(samples):
    print(
        f"  sample {i}: label {s.label}, pixels {s.pixels.shape},"
        f" range [{s.pixels.min():.3f}, {s.pixels.max():.3f}]"
    )

print("\n== scale pyramid ==")
pyr = build_scale_pyramid(samples[0].pixels, levels=3)
print(f"  base {pyr.base.shape}  mid {pyr.mid.shape}  top {pyr.top.shape}")
consistency = np.abs(pyr.base - (pyr.mid.reshape(10, 32, 2, 32, 2).mean(axis=(2, 4)))).max()
print(f"  base equals downsampled mid exactly: max |diff| = {consistency}")

out = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out, exist_ok=True)
for name, level in (("base", pyr.base), ("mid", pyr.mid), ("top", pyr.top)):
    path = os.path.join(out, f"pyramid_{name}.ppm")
    write_ppm(path, rgb_proxy(level, grouping))
    print(f"  wrote {path}")
