import numpy as np
import pytest

from msmae.checkpoint import (
    CheckpointError,
    collect_arrays,
    load_checkpoint,
    restore_models,
    save_checkpoint,
)
from msmae.data import default_grouping
from msmae.model import MaskedAutoencoder, ModelConfig
from msmae.multiscale import MultiScaleHead


def small_cfg(**kw):
    defaults = dict(
        patch_size=4,
        embed_dim=16,
        depth=1,
        heads=2,
        decoder_dim=16,
        decoder_depth=1,
        grouping=default_grouping(),
        input_size=8,
        dtype="float64",
    )
    defaults.update(kw)
    return ModelConfig(**defaults)


class TestRoundTrip:
    def test_bit_exact_reload(self, tmp_path):
        model = MaskedAutoencoder(small_cfg(), seed=3)
        head = MultiScaleHead(10, feat_ch=4, levels=3, seed=4)
        model.add_classifier(5, seed=5)
        path = str(tmp_path / "ck.msmae")
        save_checkpoint(
            path, model.cfg, collect_arrays(model, head), epoch=7, seed=42, meta={"note": 1}
        )
        ck = load_checkpoint(path)
        assert ck.epoch == 7 and ck.seed == 42
        assert ck.meta == {"note": 1}
        arrays = collect_arrays(model, head)
        assert set(ck.arrays) == set(arrays)
        for name, arr in arrays.items():
            np.testing.assert_array_equal(ck.arrays[name], arr)

    def test_save_load_save_is_byte_identical(self, tmp_path):
        model = MaskedAutoencoder(small_cfg(), seed=1)
        p1, p2 = str(tmp_path / "a.msmae"), str(tmp_path / "b.msmae")
        save_checkpoint(p1, model.cfg, collect_arrays(model, None), epoch=0, seed=0, meta={})
        ck = load_checkpoint(p1)
        save_checkpoint(p2, ck.model_cfg, ck.arrays, epoch=ck.epoch, seed=ck.seed, meta=ck.meta)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_float32_training_stored_as_float64(self, tmp_path):
        model = MaskedAutoencoder(small_cfg(dtype="float32"), seed=1)
        path = str(tmp_path / "ck.msmae")
        save_checkpoint(path, model.cfg, collect_arrays(model, None), epoch=0, seed=0)
        ck = load_checkpoint(path)
        assert all(a.dtype == np.float64 for a in ck.arrays.values())


class TestRestoreModels:
    def test_rebuilds_model_head_and_classifier(self, tmp_path):
        model = MaskedAutoencoder(small_cfg(), seed=3)
        head = MultiScaleHead(10, feat_ch=4, levels=2, seed=4)
        model.add_classifier(3, seed=5)
        path = str(tmp_path / "ck.msmae")
        save_checkpoint(path, model.cfg, collect_arrays(model, head), epoch=1, seed=9)
        model2, head2 = restore_models(load_checkpoint(path))
        assert model2.has_classifier()
        assert head2 is not None and head2.levels == 2 and head2.feat_ch == 4
        for name, t in model.params.items():
            np.testing.assert_array_equal(model2.params[name].data, t.data)
        for name, t in head.params.items():
            np.testing.assert_array_equal(head2.params[name].data, t.data)

    def test_missing_tensor_reported_by_name(self, tmp_path):
        model = MaskedAutoencoder(small_cfg(), seed=0)
        arrays = collect_arrays(model, None)
        arrays.pop("enc.ln.g")
        path = str(tmp_path / "ck.msmae")
        save_checkpoint(path, model.cfg, arrays, epoch=0, seed=0)
        with pytest.raises(CheckpointError, match="enc.ln.g"):
            restore_models(load_checkpoint(path))

    def test_shape_mismatch_reported_by_name(self, tmp_path):
        model = MaskedAutoencoder(small_cfg(), seed=0)
        arrays = collect_arrays(model, None)
        arrays["dec.mask_token"] = np.zeros(99)
        path = str(tmp_path / "ck.msmae")
        save_checkpoint(path, model.cfg, arrays, epoch=0, seed=0)
        with pytest.raises(CheckpointError, match="dec.mask_token"):
            restore_models(load_checkpoint(path))


class TestHeaderValidation:
    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.msmae"
        path.write_bytes(b"WRONGMAG" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(str(path))

    def test_bad_version_rejected(self, tmp_path):
        model = MaskedAutoencoder(small_cfg(), seed=0)
        path = str(tmp_path / "ck.msmae")
        save_checkpoint(path, model.cfg, collect_arrays(model, None), epoch=0, seed=0)
        raw = bytearray(open(path, "rb").read())
        raw[8:12] = (99).to_bytes(4, "little")
        open(path, "wb").write(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)
