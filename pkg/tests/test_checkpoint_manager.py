import json
import struct

import numpy as np
import pytest

import checkpoint_manager
import database as db
from errors import ParseError
from metrics import MetricsReport
from network import init_params


def f32_params(cfg, seed: int = 0) -> dict[str, np.ndarray]:
    return {k: v.astype(np.float32).astype(np.float64) for k, v in init_params(cfg, seed=seed).items()}


class TestCheckpointFile:
    def test_save_then_load_is_exact_at_f32(self, tmp_path, make_config):
        cfg = make_config("segmentation", 4)
        params = f32_params(cfg)
        path = checkpoint_manager.save_checkpoint(tmp_path / "ck" / "best.ckpt", cfg, params, {"epoch": 3})
        loaded_cfg, loaded, meta = checkpoint_manager.load_checkpoint(path)
        assert loaded_cfg == cfg
        assert meta == {"epoch": 3}
        assert set(loaded) == set(params)
        for name in params:
            np.testing.assert_array_equal(loaded[name], params[name])
            assert loaded[name].dtype == np.float64

    def test_float32_config_loads_float32(self, tmp_path, make_config):
        cfg = make_config(dtype="float32")
        path = checkpoint_manager.save_checkpoint(tmp_path / "a.ckpt", cfg, init_params(cfg))
        _, params, _ = checkpoint_manager.load_checkpoint(path)
        assert all(v.dtype == np.float32 for v in params.values())

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            checkpoint_manager.load_checkpoint(tmp_path / "none.ckpt")

    def test_bad_magic(self, tmp_path, make_config):
        cfg = make_config()
        path = checkpoint_manager.save_checkpoint(tmp_path / "a.ckpt", cfg, init_params(cfg))
        data = bytearray(path.read_bytes())
        data[:4] = b"XXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(ParseError) as info:
            checkpoint_manager.load_checkpoint(path)
        assert info.value.position == "byte 0"

    def test_truncated_tensor_data(self, tmp_path, make_config):
        cfg = make_config()
        path = checkpoint_manager.save_checkpoint(tmp_path / "a.ckpt", cfg, init_params(cfg))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ParseError, match="tensor data"):
            checkpoint_manager.load_checkpoint(path)

    def test_shape_that_does_not_fit_the_config(self, tmp_path, make_config):
        cfg = make_config()
        params = init_params(cfg)
        params["head.fc2.bias"] = np.zeros(7)
        path = checkpoint_manager.save_checkpoint(tmp_path / "a.ckpt", cfg, params)
        with pytest.raises(ParseError, match="head.fc2.bias"):
            checkpoint_manager.load_checkpoint(path)

    def test_missing_tensor(self, tmp_path, make_config):
        cfg = make_config()
        params = init_params(cfg)
        del params["head.fc1.weight"]
        path = checkpoint_manager.save_checkpoint(tmp_path / "a.ckpt", cfg, params)
        with pytest.raises(ParseError, match="missing tensor 'head.fc1.weight'"):
            checkpoint_manager.load_checkpoint(path)

    def test_corrupt_header(self, tmp_path):
        header = b"{not json"
        path = tmp_path / "a.ckpt"
        path.write_bytes(struct.pack("<4sII", b"PCKP", 1, len(header)) + header)
        with pytest.raises(ParseError, match="bad header"):
            checkpoint_manager.load_checkpoint(path)

    def test_header_records_tensor_order(self, tmp_path, make_config):
        cfg = make_config()
        params = init_params(cfg)
        path = checkpoint_manager.save_checkpoint(tmp_path / "a.ckpt", cfg, params)
        data = path.read_bytes()
        (length,) = struct.unpack_from("<I", data, 8)
        header = json.loads(data[12:12 + length])
        assert [name for name, _ in header["tensors"]] == list(params)
        assert header["format_version"] == 1

    def test_config_hash(self, make_config):
        a, b = make_config(), make_config()
        assert checkpoint_manager.config_hash(a) == checkpoint_manager.config_hash(b)
        assert len(checkpoint_manager.config_hash(a)) == 16
        assert checkpoint_manager.config_hash(make_config(heads=4)) != checkpoint_manager.config_hash(a)


# =============================================================================
# Registry
# =============================================================================


class TestRegistry:
    def test_register_and_drop_stale_rows(self, tmp_path, make_config):
        db.init_db()
        cfg = make_config()
        path = checkpoint_manager.save_checkpoint(tmp_path / "a.ckpt", cfg, init_params(cfg))
        run_id = db.create_run("run-a", cfg.task, checkpoint_manager.config_hash(cfg), cfg.to_flat())
        checkpoint_manager.register_checkpoint(path, run_id, 4, 0.75)
        row = checkpoint_manager.get_registered_checkpoint(path)
        assert (row["epoch"], row["score"], row["run_id"]) == (4, 0.75, run_id)
        assert row["file_size"] == path.stat().st_size

        checkpoint_manager.register_checkpoint(path, run_id, 9, 0.9)
        assert checkpoint_manager.get_registered_checkpoint(path)["epoch"] == 9

        path.unlink()
        assert checkpoint_manager.get_registered_checkpoint(path) is None
        assert db.get_checkpoint(str(path.resolve())) is None

    def test_unregistered_checkpoint(self, tmp_path):
        db.init_db()
        assert checkpoint_manager.get_registered_checkpoint(tmp_path / "nothing.ckpt") is None


class TestDatabase:
    def test_recreating_a_run_replaces_its_epochs(self):
        db.init_db()
        first = db.create_run("r", "classification", "abc", {"heads": "2"})
        db.record_epoch(first, 1, 1e-3, 1.0, 0.5, 0.5)
        second = db.create_run("r", "classification", "abc", {"heads": "2"})
        assert db.get_run("r")["id"] == second
        assert db.get_epochs(first) == []
        assert json.loads(db.get_run("r")["config_json"]) == {"heads": "2"}

    def test_epochs_in_order(self):
        db.init_db()
        run = db.create_run("r", "classification", "abc", {})
        for epoch in (3, 1, 2):
            db.record_epoch(run, epoch, 0.1, 1.0 / epoch, 0.5, 0.4, test_oa=None if epoch == 2 else 0.6)
        rows = db.get_epochs(run)
        assert [r["epoch"] for r in rows] == [1, 2, 3]
        assert rows[1]["test_oa"] is None

    def test_reports(self):
        db.init_db()
        report = MetricsReport(oa=0.9, macc=0.8, miou=0.7, ins_miou=0.6, cat_miou=0.5)
        db.record_report("/tmp/a.ckpt", "test", report)
        rows = db.list_reports("/tmp/a.ckpt")
        assert len(rows) == 1
        assert (rows[0]["split"], rows[0]["oa"], rows[0]["cat_miou"]) == ("test", 0.9, 0.5)

    def test_bench_results(self):
        db.init_db()
        db.record_bench("h", "points", 2048, 0.2, 3, 100)
        db.record_bench("h", "points", 1024, 0.1, 3, 100)
        db.record_bench("other", "tokens", 64, 0.01, 1, 5)
        assert [r["count"] for r in db.list_bench("h")] == [1024, 2048]

    def test_switching_path_reconnects(self, tmp_path, monkeypatch):
        db.init_db()
        db.create_run("only-here", "classification", "abc", {})
        monkeypatch.setattr(db, "DB_PATH", tmp_path / "second.db")
        db.init_db()
        assert db.get_run("only-here") is None
