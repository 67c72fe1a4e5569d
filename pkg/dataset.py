"""
Datasets: synthetic toy shapes, normalization, and the on-disk directory layout.

A dataset directory holds one cloud file per sample plus manifest.txt:

    # kind=cls3
    # task=classification
    # classes=sphere,cube,torus
    # categories=
    sample_00000.pcat 2 train <cx> <cy> <cz> <scale>
    ...
"""
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cloud_io import load_cloud, save_cloud
from errors import ArgumentError, ParseError
from metrics import Grouping
from spatial import PointCloud

KINDS = {"cls3": "classification", "seg2": "segmentation"}
MANIFEST = "manifest.txt"
SPLITS = ("train", "test")


@dataclass
class NormRecord:
    centroid: np.ndarray
    scale: float

    def apply(self, coords: np.ndarray) -> np.ndarray:
        return (np.asarray(coords, dtype=np.float64) - self.centroid) / self.scale

    def invert(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords, dtype=np.float64) * self.scale + self.centroid


def normalize(cloud: PointCloud) -> tuple[PointCloud, NormRecord]:
    """Center on the centroid and scale the farthest point to norm 1."""
    centroid = cloud.coords.mean(axis=0)
    radius = float(np.linalg.norm(cloud.coords - centroid, axis=1).max())
    record = NormRecord(centroid, radius if radius > 0 else 1.0)
    return PointCloud(record.apply(cloud.coords), cloud.feats, cloud.labels), record


@dataclass
class Dataset:
    kind: str
    task: str
    samples: list[PointCloud]
    class_names: list[str]
    targets: np.ndarray                      # class id (classification) or category id (segmentation)
    train_ids: np.ndarray
    test_ids: np.ndarray
    norms: list[NormRecord]
    categories: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.int64)
        self.train_ids = np.asarray(self.train_ids, dtype=np.int64)
        self.test_ids = np.asarray(self.test_ids, dtype=np.int64)
        if self.task not in KINDS.values():
            raise ArgumentError(f"unknown task '{self.task}'")
        if not (len(self.samples) == len(self.targets) == len(self.norms)):
            raise ArgumentError("samples, targets and norms must have equal length")
        c = self.num_classes
        if self.task == "classification" and self.targets.size and self.targets.max() >= c:
            raise ArgumentError(f"class id {int(self.targets.max())} >= {c} classes")
        for i, cloud in enumerate(self.samples):
            if self.task == "segmentation":
                if cloud.labels is None:
                    raise ArgumentError(f"segmentation sample {i} has no point labels")
                if cloud.labels.max() >= c:
                    raise ArgumentError(f"sample {i}: part label {int(cloud.labels.max())} >= {c} classes")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def in_feat_dim(self) -> int:
        return self.samples[0].feat_dim if self.samples else 0

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ArgumentError(f"unknown split '{name}', expected one of {SPLITS}")
        return self.train_ids if name == "train" else self.test_ids

    def grouping(self, ids) -> Grouping:
        """Point-to-shape grouping over the concatenation of the given samples."""
        ids = np.asarray(ids, dtype=np.int64)
        shape_ids = np.concatenate([np.full(len(self.samples[i]), k) for k, i in enumerate(ids)])
        return Grouping(shape_ids, self.targets[ids])


# ---------------------------------------------------------------------------
# Synthetic shapes
# ---------------------------------------------------------------------------

def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def _z_rotation(rng: np.random.Generator) -> np.ndarray:
    t = rng.uniform(0.0, 2.0 * np.pi)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _sphere(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _box_surface(rng: np.random.Generator, n: int, half: np.ndarray) -> np.ndarray:
    """Area-uniform samples on an axis-aligned box surface centred at the origin."""
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]]).repeat(2)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    return pts


def _torus(rng: np.random.Generator, n: int, major: float = 1.0, minor: float = 0.35) -> np.ndarray:
    u = rng.uniform(0.0, 2.0 * np.pi, n)
    v = rng.uniform(0.0, 2.0 * np.pi, n)
    ring = major + minor * np.cos(v)
    return np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], axis=1)


CLS3_SHAPES = ("sphere", "cube", "torus")


def _cls3_sample(rng: np.random.Generator, target: int, n: int) -> np.ndarray:
    if target == 0:
        pts = _sphere(rng, n)
    elif target == 1:
        pts = _box_surface(rng, n, np.ones(3))
    else:
        pts = _torus(rng, n)
    pts = pts @ _random_rotation(rng).T
    sigma = rng.uniform(0.01, 0.02)
    return pts + rng.normal(scale=sigma, size=pts.shape)


def _seg2_sample(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Cube (part 0) with a square pole standing on its top face (part 1)."""
    n_pole = max(1, n // 4)
    cube = _box_surface(rng, n - n_pole, np.full(3, 0.5))
    pole = _box_surface(rng, n_pole, np.array([0.08, 0.08, 0.4]))
    pole[:, 2] += 0.9
    pts = np.vstack([cube, pole]) @ _z_rotation(rng).T
    pts = pts + rng.normal(scale=0.005, size=pts.shape)
    labels = np.r_[np.zeros(n - n_pole, dtype=np.int64), np.ones(n_pole, dtype=np.int64)]
    return pts, labels


def _split(rng: np.random.Generator, n: int, test_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    n_test = min(int(round(n * test_fraction)), n - 1)
    order = rng.permutation(n)
    return np.sort(order[n_test:]), np.sort(order[:n_test])


def gen_synthetic(
    kind: str,
    n_samples: int,
    points_per_cloud: int,
    seed: int = 0,
    test_fraction: float = 0.2,
) -> Dataset:
    if kind not in KINDS:
        raise ArgumentError(f"unknown dataset kind '{kind}', expected one of {sorted(KINDS)}")
    if n_samples < 1:
        raise ArgumentError(f"n_samples must be >= 1, got {n_samples}")
    min_points = 2 if kind == "seg2" else 1
    if points_per_cloud < min_points:
        raise ArgumentError(f"points_per_cloud must be >= {min_points}, got {points_per_cloud}")
    if not 0.0 <= test_fraction < 1.0:
        raise ArgumentError(f"test_fraction must be in [0, 1), got {test_fraction}")

    rng = np.random.default_rng(seed)
    samples, norms = [], []
    if kind == "cls3":
        targets = rng.permutation(np.arange(n_samples) % len(CLS3_SHAPES))
        for target in targets:
            cloud, record = normalize(PointCloud(_cls3_sample(rng, int(target), points_per_cloud)))
            samples.append(cloud)
            norms.append(record)
        class_names, categories = list(CLS3_SHAPES), []
    else:
        targets = np.zeros(n_samples, dtype=np.int64)
        for _ in range(n_samples):
            pts, labels = _seg2_sample(rng, points_per_cloud)
            cloud, record = normalize(PointCloud(pts, labels=labels))
            samples.append(cloud)
            norms.append(record)
        class_names, categories = ["cube", "pole"], ["cube_pole"]
    train_ids, test_ids = _split(rng, n_samples, test_fraction)
    return Dataset(kind, KINDS[kind], samples, class_names, targets, train_ids, test_ids, norms, categories)


# ---------------------------------------------------------------------------
# Directory layout
# ---------------------------------------------------------------------------

def save_dataset(ds: Dataset, out_dir: str | os.PathLike, fmt: str = "binary") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = ".pcat" if fmt == "binary" else ".txt"
    test = set(ds.test_ids.tolist())
    lines = [
        f"# kind={ds.kind}",
        f"# task={ds.task}",
        f"# classes={','.join(ds.class_names)}",
        f"# categories={','.join(ds.categories)}",
    ]
    for i, (cloud, record) in enumerate(zip(ds.samples, ds.norms)):
        name = f"sample_{i:05d}{suffix}"
        save_cloud(out_dir / name, cloud, fmt)
        cx, cy, cz = (repr(float(v)) for v in record.centroid)
        split = "test" if i in test else "train"
        lines.append(f"{name} {int(ds.targets[i])} {split} {cx} {cy} {cz} {record.scale!r}")
    (out_dir / MANIFEST).write_text("\n".join(lines) + "\n")
    return out_dir


def load_dataset(data_dir: str | os.PathLike) -> Dataset:
    data_dir = Path(data_dir)
    manifest = data_dir / MANIFEST
    if not manifest.is_file():
        raise FileNotFoundError(f"dataset manifest not found: {manifest}")

    header: dict[str, str] = {}
    samples, targets, norms, train_ids, test_ids = [], [], [], [], []
    for lineno, raw in enumerate(manifest.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line.lstrip("#").strip().partition("=")
            if sep:
                header[key.strip()] = value.strip()
            continue
        parts = line.split()
        if len(parts) != 7:
            raise ParseError(manifest, f"line {lineno}", f"expected 7 fields, got {len(parts)}")
        name, target, split = parts[:3]
        if split not in SPLITS:
            raise ParseError(manifest, f"line {lineno}", f"unknown split '{split}'")
        try:
            target_id = int(target)
            cx, cy, cz, scale = (float(v) for v in parts[3:])
        except ValueError:
            raise ParseError(manifest, f"line {lineno}", "non-numeric target or normalization field") from None
        (train_ids if split == "train" else test_ids).append(len(samples))
        samples.append(load_cloud(data_dir / name))
        targets.append(target_id)
        norms.append(NormRecord(np.array([cx, cy, cz]), scale))

    if "classes" not in header:
        raise ParseError(manifest, "line 1", "missing '# classes=' header")
    kind = header.get("kind", "custom")
    task = header.get("task") or KINDS.get(kind, "classification")
    categories = [c for c in header.get("categories", "").split(",") if c]
    return Dataset(
        kind=kind,
        task=task,
        samples=samples,
        class_names=[c for c in header["classes"].split(",") if c],
        targets=np.array(targets, dtype=np.int64),
        train_ids=np.array(train_ids, dtype=np.int64),
        test_ids=np.array(test_ids, dtype=np.int64),
        norms=norms,
        categories=categories,
    )
