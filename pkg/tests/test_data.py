import numpy as np
import pytest

from msmae.data import (
    ChannelGrouping,
    bilinear_downsample,
    build_scale_pyramid,
    center_crop,
    default_grouping,
    load_dataset,
    patchify,
    random_crop,
    retained_bands,
    save_dataset,
    sentinel2_band_table,
    single_group,
    synth_dataset,
    unpatchify,
)
from msmae.tensor import ShapeError


class TestBandTable:
    def test_has_thirteen_rows(self):
        assert len(sentinel2_band_table()) == 13

    def test_b2_is_blue_10m(self):
        b2 = next(b for b in sentinel2_band_table() if b.name == "B2")
        assert b2.gsd_m == 10 and b2.wavelength_nm == 490

    def test_b10_is_cirrus_60m(self):
        b10 = next(b for b in sentinel2_band_table() if b.name == "B10")
        assert b10.gsd_m == 60 and b10.wavelength_nm == 1375

    def test_gsd_values_restricted(self):
        assert {b.gsd_m for b in sentinel2_band_table()} == {10, 20, 60}

    def test_names_unique(self):
        names = [b.name for b in sentinel2_band_table()]
        assert len(names) == len(set(names))


class TestGrouping:
    def test_group_sizes(self):
        assert [len(g) for g in default_grouping().groups] == [4, 4, 2]

    def test_groups_are_gsd_homogeneous(self):
        bands = retained_bands()
        gsds = []
        for group in default_grouping().groups:
            group_gsd = {bands[i].gsd_m for i in group}
            assert len(group_gsd) == 1
            gsds.append(group_gsd.pop())
        assert gsds == [10, 20, 20]

    def test_discarded_bands_absent(self):
        bands = retained_bands()
        names = {bands[i].name for g in default_grouping().groups for i in g}
        assert names.isdisjoint({"B1", "B9", "B10"})
        assert len(names) == 10

    def test_partition_covers_retained_bands(self):
        grouping = default_grouping()
        covered = sorted(i for g in grouping.groups for i in g)
        assert covered == list(range(10))

    def test_overlapping_groups_rejected(self):
        with pytest.raises(ValueError):
            ChannelGrouping(((0, 1), (1, 2)))

    def test_single_group(self):
        g = single_group(3)
        assert g.groups == ((0, 1, 2),)
        assert g.n_channels == 3


class TestBilinearDownsample:
    def test_constant_preserved(self):
        img = np.full((2, 8, 8), 0.37)
        np.testing.assert_array_equal(bilinear_downsample(img), np.full((2, 4, 4), 0.37))

    def test_two_by_two_average(self):
        img = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        np.testing.assert_array_equal(bilinear_downsample(img), [[[2.5]]])

    def test_linear_ramp_stays_linear(self):
        x = np.linspace(0.0, 1.0, 16)
        img = np.broadcast_to(x, (1, 16, 16)).copy()
        out = bilinear_downsample(img)
        row = out[0, 0]
        diffs = np.diff(row)
        assert np.abs(diffs - diffs[0]).max() < 1e-6

    def test_odd_extent_rejected(self):
        with pytest.raises(ShapeError):
            bilinear_downsample(np.zeros((1, 5, 4)))


class TestScalePyramid:
    def test_three_level_shapes(self):
        src = np.zeros((3, 128, 128))
        pyr = build_scale_pyramid(src, levels=3)
        assert pyr.top.shape == (3, 128, 128)
        assert pyr.mid.shape == (3, 64, 64)
        assert pyr.base.shape == (3, 32, 32)

    def test_levels_are_bit_exact_downsamples(self, rng):
        src = rng.uniform(0, 1, (2, 64, 64))
        pyr = build_scale_pyramid(src, levels=3)
        np.testing.assert_array_equal(pyr.mid, bilinear_downsample(pyr.top))
        np.testing.assert_array_equal(pyr.base, bilinear_downsample(pyr.mid))

    def test_constant_source_constant_levels(self):
        pyr = build_scale_pyramid(np.full((1, 16, 16), 0.5), levels=3)
        for level in (pyr.base, pyr.mid, pyr.top):
            np.testing.assert_array_equal(level, np.full_like(level, 0.5))

    def test_two_level_treats_source_as_mid(self):
        src = np.zeros((1, 32, 32))
        pyr = build_scale_pyramid(src, levels=2)
        assert pyr.mid.shape == (1, 32, 32)
        assert pyr.base.shape == (1, 16, 16)
        assert pyr.top is None

    def test_divisibility_enforced(self):
        with pytest.raises(ShapeError):
            build_scale_pyramid(np.zeros((1, 30, 30)), levels=3)


class TestSynthDataset:
    def test_identical_seed_bit_identical(self):
        a = synth_dataset(seed=7, count=4, n_channels=10, size=32, n_classes=4)
        b = synth_dataset(seed=7, count=4, n_channels=10, size=32, n_classes=4)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.pixels, sb.pixels)
            assert sa.label == sb.label

    def test_pixels_in_unit_interval(self):
        for s in synth_dataset(seed=1, count=6, n_channels=3, size=32, n_classes=3):
            assert s.pixels.min() >= 0.0 and s.pixels.max() <= 1.0

    def test_class_histogram_near_uniform(self):
        n_classes = 5
        samples = synth_dataset(seed=3, count=1000, n_channels=3, size=16, n_classes=n_classes)
        counts = np.bincount([s.label for s in samples], minlength=n_classes)
        expected = 1000 / n_classes
        assert (np.abs(counts - expected) <= 0.2 * expected).all()

    def test_band_meta_matches_channels(self):
        samples = synth_dataset(seed=2, count=1, n_channels=10, size=16, n_classes=2)
        assert len(samples[0].band_meta) == 10
        assert samples[0].pixels.shape == (10, 16, 16)

    def test_coarse_bands_are_smoother(self):
        # GSD simulation: 60 m bands must carry less high-frequency energy
        samples = synth_dataset(seed=5, count=8, n_channels=13, size=64, n_classes=4)
        bands = samples[0].band_meta

        def roughness(img):
            return np.abs(np.diff(img, axis=-1)).mean()

        fine = np.mean(
            [roughness(s.pixels[i]) for s in samples for i, b in enumerate(bands) if b.gsd_m == 10]
        )
        coarse = np.mean(
            [roughness(s.pixels[i]) for s in samples for i, b in enumerate(bands) if b.gsd_m == 60]
        )
        assert coarse < fine


class TestPatchify:
    def test_patch_counts(self):
        assert patchify(np.zeros((3, 224, 224)), 16).shape == (196, 16 * 16 * 3)
        assert patchify(np.zeros((10, 96, 96)), 8).shape == (144, 8 * 8 * 10)

    def test_round_trip_bit_exact(self, rng):
        img = rng.uniform(0, 1, (5, 24, 16))
        seq = patchify(img, 8)
        np.testing.assert_array_equal(unpatchify(seq, 8, 24, 16), img)

    def test_divisibility_enforced(self):
        with pytest.raises(ShapeError):
            patchify(np.zeros((1, 10, 10)), 4)


class TestCrops:
    def test_random_crop_within_bounds(self, rng):
        src = np.arange(3 * 16 * 16, dtype=float).reshape(3, 16, 16)
        crop = random_crop(src, 8, rng)
        assert crop.shape == (3, 8, 8)

    def test_center_crop(self):
        src = np.zeros((1, 16, 16))
        src[0, 4:12, 4:12] = 1.0
        np.testing.assert_array_equal(center_crop(src, 8), np.ones((1, 8, 8)))

    def test_oversized_crop_rejected(self, rng):
        with pytest.raises(ShapeError):
            random_crop(np.zeros((1, 8, 8)), 16, rng)


class TestContainer:
    def test_round_trip(self, tmp_path, rng):
        samples = synth_dataset(seed=4, count=3, n_channels=4, size=16, n_classes=2)
        path = str(tmp_path / "toy.msmae-ds")
        save_dataset(samples, path)
        loaded = load_dataset(path)
        assert len(loaded) == 3
        for orig, back in zip(samples, loaded):
            assert back.label == orig.label
            np.testing.assert_array_equal(
                back.pixels, orig.pixels.astype("<f4").astype(np.float64)
            )

    def test_second_round_trip_is_lossless(self, tmp_path):
        samples = synth_dataset(seed=4, count=2, n_channels=3, size=16, n_classes=2)
        p1, p2 = str(tmp_path / "a.ds"), str(tmp_path / "b.ds")
        save_dataset(samples, p1)
        save_dataset(load_dataset(p1), p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ds"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            load_dataset(str(path))
