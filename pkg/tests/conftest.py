import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parent.parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

import database as db  # noqa: E402
from network import ModelConfig  # noqa: E402

# two stages, widths small enough for finite differences
SMALL_MODEL = {
    "token_counts": "16,8",
    "radii": "0.6,1.2",
    "k_neighbors": "4,4",
    "ks": "4,8",
    "out_dim_per_scale": "4",
    "heads": "2",
    "d_model": "8",
    "d_ff": "8",
    "head_dim": "8",
    "decoder_dim": "8",
    "dtype": "float64",
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def runs_db(tmp_path, monkeypatch):
    """Every test gets its own run registry."""
    monkeypatch.setattr(db, "DB_PATH", tmp_path / "runs.db")
    yield
    db.close_db()


@pytest.fixture
def make_config():
    def make(task: str = "classification", num_classes: int = 3, **overrides) -> ModelConfig:
        values = dict(SMALL_MODEL, task=task, num_classes=str(num_classes))
        values.update({k: str(v) for k, v in overrides.items()})
        return ModelConfig.from_flat(values)

    return make


@pytest.fixture
def sphere(rng):
    """Unit-sphere surface samples drawn from the shared generator."""

    def make(n: int) -> np.ndarray:
        v = rng.normal(size=(n, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    return make


@pytest.fixture
def small_config_file(tmp_path):
    """Flat config file with the small model and a two-epoch schedule."""
    path = tmp_path / "small.cfg"
    values = dict(SMALL_MODEL, epochs="2", batch_size="3", base_lr="0.01")
    path.write_text("".join(f"{k}={v}\n" for k, v in values.items()))
    return path
