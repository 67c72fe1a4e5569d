"""
Point-cloud file formats.

text:   header "N d" (or "N d L" when a label column follows), then N rows of
        d whitespace-separated floats, first three are coordinates.
binary: magic "PCAT", u32 version, u32 N, u32 d, u8 has_labels, then N*d f32
        little-endian row-major, then N u32 labels when flagged.
"""
import os
import struct
from pathlib import Path

import numpy as np

from errors import ArgumentError, ParseError
from spatial import PointCloud

MAGIC = b"PCAT"
VERSION = 1
_HEADER = struct.Struct("<4sIIIB")
TEXT_SUFFIXES = (".txt", ".pts", ".xyz")


def infer_format(path: str | os.PathLike) -> str:
    return "text" if Path(path).suffix.lower() in TEXT_SUFFIXES else "binary"


def _rows(cloud: PointCloud) -> np.ndarray:
    rows = cloud.coords if cloud.feats is None else np.hstack([cloud.coords, cloud.feats])
    return rows.astype(np.float32)


# ---------------------------------------------------------------------------
# Read
# ---------------------------------------------------------------------------

def load_cloud(path: str | os.PathLike, fmt: str | None = None) -> PointCloud:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"cloud file not found: {path}")
    fmt = fmt or infer_format(path)
    if fmt == "text":
        return _load_text(Path(path))
    if fmt == "binary":
        return _load_binary(Path(path))
    raise ArgumentError(f"unknown cloud format '{fmt}'")


def _load_text(path: Path) -> PointCloud:
    lines = path.read_text().splitlines()
    if not lines:
        raise ParseError(path, "line 1", "missing header")
    head = lines[0].split()
    if len(head) not in (2, 3) or (len(head) == 3 and head[2] != "L"):
        raise ParseError(path, "line 1", f"expected header 'N d' or 'N d L', got '{lines[0]}'")
    try:
        n, d = int(head[0]), int(head[1])
    except ValueError:
        raise ParseError(path, "line 1", f"non-integer header '{lines[0]}'") from None
    if n < 1 or d < 3:
        raise ParseError(path, "line 1", f"need N >= 1 and d >= 3, got N={n} d={d}")
    has_labels = len(head) == 3
    width = d + int(has_labels)

    body = [(i + 2, line) for i, line in enumerate(lines[1:]) if line.strip()]
    if len(body) != n:
        where = f"line {body[-1][0] if body else 1}"
        raise ParseError(path, where, f"expected {n} rows, found {len(body)}")

    values = np.empty((n, d), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64) if has_labels else None
    for row, (lineno, line) in enumerate(body):
        parts = line.split()
        if len(parts) != width:
            raise ParseError(path, f"line {lineno}", f"expected {width} values, got {len(parts)}")
        try:
            nums = [float(p) for p in parts[:d]]
        except ValueError:
            raise ParseError(path, f"line {lineno}", "non-numeric value") from None
        if not all(np.isfinite(nums)):
            raise ParseError(path, f"line {lineno}", "non-finite value")
        values[row] = nums
        if has_labels:
            try:
                labels[row] = int(parts[d])
            except ValueError:
                raise ParseError(path, f"line {lineno}", f"label '{parts[d]}' is not an integer") from None
            if labels[row] < 0:
                raise ParseError(path, f"line {lineno}", "negative label")
    return PointCloud(values[:, :3], values[:, 3:] if d > 3 else None, labels)


def _load_binary(path: Path) -> PointCloud:
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ParseError(path, f"byte {len(data)}", f"truncated header: expected {_HEADER.size} bytes, got {len(data)}")
    magic, version, n, d, has_labels = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ParseError(path, "byte 0", f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ParseError(path, "byte 4", f"unsupported version {version}")
    if n < 1 or d < 3:
        raise ParseError(path, "byte 8", f"need N >= 1 and d >= 3, got N={n} d={d}")
    if has_labels not in (0, 1):
        raise ParseError(path, "byte 16", f"has_labels must be 0 or 1, got {has_labels}")

    expected = n * d * 4 + (n * 4 if has_labels else 0)
    actual = len(data) - _HEADER.size
    if actual != expected:
        kind = "truncated body" if actual < expected else "trailing bytes after body"
        raise ParseError(path, f"byte {_HEADER.size}", f"{kind}: expected {expected} bytes, got {actual}")

    values = np.frombuffer(data, dtype="<f4", count=n * d, offset=_HEADER.size).reshape(n, d)
    bad = np.flatnonzero(~np.isfinite(values).reshape(-1))
    if bad.size:
        raise ParseError(path, f"byte {_HEADER.size + 4 * int(bad[0])}", "non-finite value")
    labels = None
    if has_labels:
        labels = np.frombuffer(data, dtype="<u4", count=n, offset=_HEADER.size + n * d * 4).astype(np.int64)
    values = values.astype(np.float32)
    return PointCloud(values[:, :3], values[:, 3:] if d > 3 else None, labels)


# ---------------------------------------------------------------------------
# Write
# ---------------------------------------------------------------------------

def save_cloud(path: str | os.PathLike, cloud: PointCloud, fmt: str | None = None) -> Path:
    """Write at f32 precision; labels are written when the cloud carries them."""
    path = Path(path)
    fmt = fmt or infer_format(path)
    rows = _rows(cloud)
    n, d = rows.shape
    has_labels = cloud.labels is not None
    if fmt == "text":
        header = f"{n} {d} L" if has_labels else f"{n} {d}"
        lines = [header]
        for i in range(n):
            # %.9g round-trips every float32 exactly
            line = " ".join(f"{v:.9g}" for v in rows[i].tolist())
            lines.append(f"{line} {int(cloud.labels[i])}" if has_labels else line)
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "binary":
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, n, d, int(has_labels)))
            fh.write(rows.astype("<f4").tobytes())
            if has_labels:
                fh.write(np.asarray(cloud.labels).astype("<u4").tobytes())
    else:
        raise ArgumentError(f"unknown cloud format '{fmt}'")
    return path
