"""
Accuracy and IoU metrics.

OA      correct / total
mAcc    mean per-class accuracy over classes that occur in the labels
mIoU    mean per-class IoU over all points (classes absent from both sides skipped)
ins.    mean over shapes of the shape's mean part IoU
cat.    mean over categories of the mean ins. IoU of that category's shapes
"""
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from errors import ArgumentError


@dataclass
class Grouping:
    """Which shape each point belongs to, and which parts each shape's category owns."""
    shape_ids: np.ndarray                          # per point
    shape_categories: np.ndarray                   # per shape
    category_parts: Sequence[Sequence[int]] | None = None


@dataclass
class MetricsReport:
    oa: float
    macc: float
    miou: float
    ins_miou: float
    cat_miou: float
    per_class_acc: dict[int, float] = field(default_factory=dict)
    per_class_iou: dict[int, float] = field(default_factory=dict)

    def as_lines(self) -> list[str]:
        lines = [f"{key}={round(getattr(self, key), 6)}" for key in ("oa", "macc", "miou", "ins_miou", "cat_miou")]
        lines += [f"acc_class{c}={round(v, 6)}" for c, v in sorted(self.per_class_acc.items())]
        lines += [f"iou_class{c}={round(v, 6)}" for c, v in sorted(self.per_class_iou.items())]
        return lines


def confusion_matrix(preds, labels, num_classes: int) -> np.ndarray:
    """Rows are ground truth, columns are predictions."""
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.shape != labels.shape:
        raise ArgumentError(f"preds has {preds.size} entries, labels has {labels.size}")
    for name, arr in (("preds", preds), ("labels", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ArgumentError(f"{name} contain ids outside [0, {num_classes})")
    return np.bincount(labels * num_classes + preds, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def _part_ious(preds: np.ndarray, labels: np.ndarray, parts: Sequence[int]) -> float:
    ious = []
    for part in parts:
        p, g = preds == part, labels == part
        union = np.count_nonzero(p | g)
        # a part missing from both sides scores 1
        ious.append(1.0 if union == 0 else np.count_nonzero(p & g) / union)
    return float(np.mean(ious))


def metrics(preds, labels, num_classes: int, grouping: Grouping | None = None) -> MetricsReport:
    preds = np.asarray(preds, dtype=np.int64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if preds.size == 0:
        raise ArgumentError("metrics needs at least one prediction")
    cm = confusion_matrix(preds, labels, num_classes)

    support = cm.sum(axis=1)
    tp = np.diag(cm)
    union = support + cm.sum(axis=0) - tp
    per_class_acc = {c: float(tp[c] / support[c]) for c in range(num_classes) if support[c] > 0}
    per_class_iou = {c: float(tp[c] / union[c]) for c in range(num_classes) if union[c] > 0}

    if grouping is None:
        grouping = Grouping(np.zeros(preds.size, dtype=np.int64), np.zeros(1, dtype=np.int64))
    shape_ids = np.asarray(grouping.shape_ids, dtype=np.int64).reshape(-1)
    if shape_ids.shape != preds.shape:
        raise ArgumentError(f"grouping covers {shape_ids.size} points, got {preds.size} predictions")
    shape_categories = np.asarray(grouping.shape_categories, dtype=np.int64).reshape(-1)

    shape_scores: dict[int, list[float]] = {}
    for shape in np.unique(shape_ids):
        mask = shape_ids == shape
        category = int(shape_categories[shape])
        parts = range(num_classes) if grouping.category_parts is None else grouping.category_parts[category]
        shape_scores.setdefault(category, []).append(_part_ious(preds[mask], labels[mask], parts))
    all_shapes = [s for scores in shape_scores.values() for s in scores]

    return MetricsReport(
        oa=float(tp.sum() / preds.size),
        macc=float(np.mean(list(per_class_acc.values()))),
        miou=float(np.mean(list(per_class_iou.values()))),
        ins_miou=float(np.mean(all_shapes)),
        cat_miou=float(np.mean([np.mean(v) for v in shape_scores.values()])),
        per_class_acc=per_class_acc,
        per_class_iou=per_class_iou,
    )
