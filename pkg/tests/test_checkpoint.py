import numpy as np
import pytest
import torch

from covcast import (ChannelSchema, CheckpointError, DataFileError, NormStats,
                     load_checkpoint, save_checkpoint, select_trainables)
from covcast.checkpoint import MAGIC
from covcast.training import apply_param_groups

from conftest import tiny_model


def stats_fixture():
    return NormStats(("y", "c"), np.array([1.0, -2.0]), np.array([3.0, 0.5]))


def schema_fixture():
    return ChannelSchema(targets=("y",), past_covariates=("c",),
                         future_covariates=("c",), frequency="1h")


class TestRoundTrip:
    def test_parameters_bit_exact(self, tmp_path):
        model = tiny_model(seed=42)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, stats=stats_fixture(), schema=schema_fixture(),
                        train_mode="frozen_backbone")
        loaded = load_checkpoint(path)
        original = model.state_dict()
        restored = loaded.model.state_dict()
        assert original.keys() == restored.keys()
        for k in original:
            assert torch.equal(original[k], restored[k]), k
        assert loaded.meta["train_mode"] == "frozen_backbone"

    def test_stats_and_schema_survive(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, stats=stats_fixture(), schema=schema_fixture())
        loaded = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.stats.mean, [1.0, -2.0])
        assert loaded.schema.targets == ("y",)
        assert loaded.schema.future_covariates == ("c",)

    def test_freeze_flags_restored(self, tmp_path):
        model = tiny_model()
        apply_param_groups(model, select_trainables(model, "frozen_backbone"))
        path = tmp_path / "frozen.ckpt"
        save_checkpoint(path, model)
        loaded = load_checkpoint(path)
        for (name, p_orig), (_, p_new) in zip(model.named_parameters(),
                                              loaded.model.named_parameters()):
            assert p_orig.requires_grad == p_new.requires_grad, name

    def test_save_is_deterministic(self, tmp_path):
        model = tiny_model(seed=3)
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(a, model, stats=stats_fixture())
        save_checkpoint(b, model, stats=stats_fixture())
        assert a.read_bytes() == b.read_bytes()

    def test_backbone_only_model(self, tmp_path):
        model = tiny_model(with_fusion=False, n_past=0, n_future=0)
        path = tmp_path / "bb.ckpt"
        save_checkpoint(path, model)
        loaded = load_checkpoint(path)
        assert loaded.model.fusion is None
        x = torch.randn(1, 1, 12, dtype=torch.float64)
        model.eval(), loaded.model.eval()
        assert torch.equal(model(x, horizon=8), loaded.model(x, horizon=8))


class TestContainerFormat:
    def test_magic_header(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        assert path.read_bytes()[:8] == MAGIC

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_payload_rejected(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        blob = path.read_bytes()
        (tmp_path / "cut.ckpt").write_bytes(blob[:len(blob) - 128])
        with pytest.raises(CheckpointError, match="overruns"):
            load_checkpoint(tmp_path / "cut.ckpt")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataFileError):
            load_checkpoint(tmp_path / "nope.ckpt")

    def test_payload_is_little_endian_float64(self, tmp_path):
        import json
        model = tiny_model()
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        blob = path.read_bytes()
        header_len = int.from_bytes(blob[8:16], "little")
        header = json.loads(blob[16:16 + header_len])
        assert header["dtype"] == "float64" and header["endianness"] == "little"
        first = header["tensors"][0]
        numel = int(np.prod(first["shape"]))
        raw = blob[16 + header_len:16 + header_len + numel * 8]
        decoded = np.frombuffer(raw, dtype="<f8").reshape(first["shape"])
        expected = model.state_dict()[first["name"]].numpy()
        np.testing.assert_array_equal(decoded, expected)
