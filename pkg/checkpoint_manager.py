"""
Model checkpoint container and its registry entries.

Layout: magic "PCKP", u32 format version, u32 header length, JSON header
{format_version, config, meta, tensors: [[name, shape], ...]}, then each
tensor's data as f32 little-endian in header order.
"""
import hashlib
import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

import config
import database as db
from errors import ParseError
from network import ModelConfig, param_shapes

CHECKPOINT_DIR = config.CHECKPOINT_DIR
MAGIC = b"PCKP"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sII")


def config_hash(cfg: ModelConfig) -> str:
    """Deterministic short hash of a model config, used to group runs and benchmarks."""
    return hashlib.sha256(json.dumps(cfg.to_flat(), sort_keys=True).encode()).hexdigest()[:16]


def default_run_dir(run_name: str | None) -> Path:
    """Where a run writes best.ckpt and train.log when no output directory is given."""
    return CHECKPOINT_DIR / (run_name or "latest")


def at_storage_precision(params: Mapping[str, np.ndarray], dtype) -> dict[str, np.ndarray]:
    """The values `load_checkpoint` would return for these parameters."""
    return {name: np.asarray(value, dtype="<f4").astype(dtype) for name, value in params.items()}


def save_checkpoint(
    path: str | os.PathLike,
    cfg: ModelConfig,
    params: Mapping[str, np.ndarray],
    meta: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(params)
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "config": cfg.to_flat(),
        "meta": meta or {},
        "tensors": [[name, list(np.shape(params[name]))] for name in names],
    }).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        for name in names:
            fh.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())
    return path


def load_checkpoint(path: str | os.PathLike) -> tuple[ModelConfig, dict[str, np.ndarray], dict]:
    """Returns (config, parameters at the config's dtype, meta)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < _PREFIX.size:
        raise ParseError(path, f"byte {len(data)}", f"truncated prefix: expected {_PREFIX.size} bytes")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ParseError(path, "byte 0", f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise ParseError(path, "byte 4", f"unsupported checkpoint version {version}")
    end = _PREFIX.size + header_len
    if len(data) < end:
        raise ParseError(path, f"byte {_PREFIX.size}", f"truncated header: expected {header_len} bytes, got {len(data) - _PREFIX.size}")
    try:
        header = json.loads(data[_PREFIX.size:end])
        cfg = ModelConfig.from_flat(header["config"])
        tensors = [(str(name), tuple(int(d) for d in shape)) for name, shape in header["tensors"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(path, f"byte {_PREFIX.size}", f"bad header: {exc}") from None

    expected = sum(int(np.prod(shape)) * 4 for _, shape in tensors)
    if len(data) - end != expected:
        raise ParseError(path, f"byte {end}", f"tensor data: expected {expected} bytes, got {len(data) - end}")

    shapes = param_shapes(cfg)
    params: dict[str, np.ndarray] = {}
    offset = end
    for name, shape in tensors:
        if shapes.get(name) != shape:
            raise ParseError(path, f"byte {offset}", f"tensor '{name}' shape {shape} does not fit the stored config")
        count = int(np.prod(shape))
        params[name] = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape).astype(cfg.np_dtype)
        offset += count * 4
    missing = sorted(set(shapes) - set(params))
    if missing:
        raise ParseError(path, f"byte {end}", f"missing tensor '{missing[0]}'")
    return cfg, params, header.get("meta", {})


def register_checkpoint(path: str | os.PathLike, run_id: int | None, epoch: int, score: float) -> None:
    """Record a saved checkpoint in the run registry."""
    path = str(Path(path).resolve())
    db.upsert_checkpoint(path, run_id, epoch, score, os.path.getsize(path))


def get_registered_checkpoint(path: str | os.PathLike):
    """Registry row for a checkpoint whose file still exists; stale rows are dropped."""
    path = str(Path(path).resolve())
    row = db.get_checkpoint(path)
    if row and os.path.isfile(path):
        return row
    if row:
        db.delete_checkpoint(path)
    return None
