"""
Mini-batch training and evaluation.

Each sample gets its own graph over freshly bound parameter leaves, so samples
can run on a thread pool; per-sample gradients are summed in batch order and
the batch gradient is their mean.
"""
import math
import os
from contextlib import nullcontext
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

import checkpoint_manager
import database as db
from autograd import backward
from batch_queue import BatchEntry, EpochQueue
from config import parse_bool
from dataset import Dataset
from errors import ArgumentError, NumericError
from metrics import MetricsReport, metrics
from network import ModelConfig, bind, classify, init_params, loss_cls, loss_seg, segment
from optim import OPTIMIZERS, SCHEDULES, OptimizerState, learning_rate, optimizer_step
from spatial import PointCloud

JITTER_SIGMA = 0.01
JITTER_CLIP = 0.05


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    base_lr: float = 1e-3
    optimizer: str = "adam"
    schedule: str = "cosine"
    seed: int = 0
    weight_decay: float = 0.0
    augment_rotate: bool = False
    augment_jitter: bool = False
    threads: int = 1
    checkpoint: str | None = None

    KEYS = (
        "epochs", "batch_size", "base_lr", "optimizer", "schedule", "seed", "weight_decay",
        "augment_rotate", "augment_jitter", "threads", "checkpoint",
    )

    def __post_init__(self):
        if self.epochs < 1:
            raise ArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.base_lr > 0:
            raise ArgumentError(f"base_lr must be > 0, got {self.base_lr}")
        if self.optimizer not in OPTIMIZERS:
            raise ArgumentError(f"unknown optimizer '{self.optimizer}', expected one of {OPTIMIZERS}")
        if self.schedule not in SCHEDULES:
            raise ArgumentError(f"unknown schedule '{self.schedule}', expected one of {SCHEDULES}")
        if self.threads < 1:
            raise ArgumentError(f"threads must be >= 1, got {self.threads}")
        if self.weight_decay < 0:
            raise ArgumentError("weight_decay must be >= 0")

    @classmethod
    def from_flat(cls, values: Mapping[str, str]) -> "TrainConfig":
        unknown = sorted(set(values) - set(cls.KEYS))
        if unknown:
            raise ArgumentError(f"unknown train config key '{unknown[0]}'")
        get = values.get
        try:
            return cls(
                epochs=int(get("epochs", "200")),
                batch_size=int(get("batch_size", "16")),
                base_lr=float(get("base_lr", "1e-3")),
                optimizer=get("optimizer", "adam"),
                schedule=get("schedule", "cosine"),
                seed=int(get("seed", "0")),
                weight_decay=float(get("weight_decay", "0")),
                augment_rotate=parse_bool(get("augment_rotate", "false")),
                augment_jitter=parse_bool(get("augment_jitter", "false")),
                threads=int(get("threads", "1")),
                checkpoint=get("checkpoint") or None,
            )
        except ValueError as exc:
            if isinstance(exc, ArgumentError):
                raise
            raise ArgumentError(f"bad train config value: {exc}") from None


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    oa: float
    macc: float
    test_oa: float | None = None

    def as_line(self) -> str:
        line = f"epoch={self.epoch} lr={self.lr:.6g} loss={self.loss:.6g} oa={self.oa:.6g} macc={self.macc:.6g}"
        return line if self.test_oa is None else f"{line} test_oa={self.test_oa:.6g}"


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    best_params: dict[str, np.ndarray]     # at checkpoint precision
    best_epoch: int
    history: list[EpochRecord] = field(default_factory=list)
    run_id: int | None = None


def augment(cloud: PointCloud, seed: int, rotate: bool, jitter: bool) -> PointCloud:
    """Random rotation about the z (up) axis and clipped Gaussian jitter."""
    if not (rotate or jitter):
        return cloud
    rng = np.random.default_rng(seed)
    coords = cloud.coords
    if rotate:
        t = rng.uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(t), np.sin(t)
        coords = coords @ np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]).T
    if jitter:
        coords = coords + np.clip(rng.normal(scale=JITTER_SIGMA, size=coords.shape), -JITTER_CLIP, JITTER_CLIP)
    return PointCloud(coords, cloud.feats, cloud.labels)


def _target(dataset: Dataset, index: int):
    return dataset.samples[index].labels if dataset.task == "segmentation" else int(dataset.targets[index])


def sample_loss(cloud: PointCloud, target, cfg: ModelConfig, params: Mapping[str, np.ndarray]):
    """
    Forward and backward for one sample.
    Returns (loss, {name: grad}, predicted ids).
    """
    nodes = bind(params)
    if cfg.task == "classification":
        probs = classify(cloud, cfg, nodes)
        loss = loss_cls(probs, target)
    else:
        probs = segment(cloud, cfg, nodes)
        loss = loss_seg(probs, target)
    value = float(loss.value)
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss {value}")
    backward(loss)
    grads = {name: (n.grad if n.grad is not None else np.zeros_like(n.value)) for name, n in nodes.items()}
    return value, grads, np.argmax(probs.value, axis=-1)


def _run_batch(pool: ThreadPoolExecutor | None, fn, items: list) -> list:
    return list(pool.map(fn, items)) if pool is not None else [fn(item) for item in items]


def evaluate(
    dataset: Dataset,
    cfg: ModelConfig,
    params: Mapping[str, np.ndarray],
    split: str = "test",
    threads: int = 1,
) -> tuple[MetricsReport, list[np.ndarray]]:
    ids = dataset.split(split)
    if ids.size == 0:
        raise ArgumentError(f"dataset has no '{split}' samples")
    nodes = bind(params, trainable=False)
    forward = classify if cfg.task == "classification" else segment

    def predict(i: int) -> np.ndarray:
        return np.argmax(forward(dataset.samples[i], cfg, nodes).value, axis=-1)

    with ThreadPoolExecutor(max_workers=threads) if threads > 1 else nullcontext() as pool:
        preds = _run_batch(pool, predict, [int(i) for i in ids])

    if cfg.task == "classification":
        report = metrics(np.array(preds), dataset.targets[ids], cfg.num_classes)
    else:
        labels = np.concatenate([dataset.samples[i].labels for i in ids])
        report = metrics(np.concatenate(preds), labels, cfg.num_classes, dataset.grouping(ids))
    return report, preds


def _check_compatible(dataset: Dataset, cfg: ModelConfig) -> None:
    if dataset.task != cfg.task:
        raise ArgumentError(f"dataset task '{dataset.task}' does not match model task '{cfg.task}'")
    if dataset.num_classes != cfg.num_classes:
        raise ArgumentError(f"dataset has {dataset.num_classes} classes, model has {cfg.num_classes}")
    if dataset.in_feat_dim != cfg.in_feat_dim:
        raise ArgumentError(f"dataset has {dataset.in_feat_dim} feature columns, model expects {cfg.in_feat_dim}")
    if dataset.train_ids.size == 0:
        raise ArgumentError("dataset has no training samples")


def train(
    dataset: Dataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    log_path: str | os.PathLike | None = None,
    run_name: str | None = None,
) -> TrainResult:
    _check_compatible(dataset, model_cfg)
    params = init_params(model_cfg, seed=train_cfg.seed)
    state = OptimizerState()
    queue = EpochQueue(dataset.train_ids, np.random.default_rng(train_cfg.seed))
    n_train = dataset.train_ids.size
    total_steps = train_cfg.epochs * math.ceil(n_train / train_cfg.batch_size)

    run_id = None
    if run_name is not None:
        db.init_db()
        run_id = db.create_run(run_name, model_cfg.task, checkpoint_manager.config_hash(model_cfg), model_cfg.to_flat())
    log_file = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w")

    def job(entry: BatchEntry):
        cloud = augment(dataset.samples[entry.sample], entry.aug_seed, train_cfg.augment_rotate, train_cfg.augment_jitter)
        return sample_loss(cloud, _target(dataset, entry.sample), model_cfg, params)

    history: list[EpochRecord] = []
    best_params, best_epoch, best_score = params, 0, None
    step = 0
    pool = ThreadPoolExecutor(max_workers=train_cfg.threads) if train_cfg.threads > 1 else None
    try:
        for epoch in range(1, train_cfg.epochs + 1):
            queue.refill()
            epoch_lr = learning_rate(train_cfg.schedule, step, total_steps, train_cfg.base_lr)
            losses, preds, labels = [], [], []
            while len(queue):
                batch = queue.pop_batch(train_cfg.batch_size)
                lr = learning_rate(train_cfg.schedule, step, total_steps, train_cfg.base_lr)
                results = _run_batch(pool, job, batch)
                grads = {name: np.zeros_like(value) for name, value in params.items()}
                for entry, (loss, sample_grads, pred) in zip(batch, results):
                    for name, g in sample_grads.items():
                        grads[name] += g
                    losses.append(loss)
                    preds.append(np.atleast_1d(pred))
                    labels.append(np.atleast_1d(_target(dataset, entry.sample)))
                grads = {name: g / len(batch) for name, g in grads.items()}
                params, state = optimizer_step(params, grads, state, train_cfg.optimizer, lr, train_cfg.weight_decay)
                step += 1

            report = metrics(np.concatenate(preds), np.concatenate(labels), model_cfg.num_classes)
            test_oa = None
            if dataset.test_ids.size:
                test_oa = evaluate(dataset, model_cfg, params, "test", train_cfg.threads)[0].oa
            record = EpochRecord(epoch, epoch_lr, float(np.mean(losses)), report.oa, report.macc, test_oa)
            history.append(record)
            print(f"[train] {record.as_line()}")
            if log_file is not None:
                log_file.write(record.as_line() + "\n")
                log_file.flush()
            if run_id is not None:
                db.record_epoch(run_id, epoch, record.lr, record.loss, record.oa, record.macc, test_oa)

            score = (record.oa if test_oa is None else test_oa, -record.loss)
            if best_score is None or score > best_score:
                best_score, best_epoch = score, epoch
                best_params = checkpoint_manager.at_storage_precision(params, model_cfg.np_dtype)
                if train_cfg.checkpoint:
                    path = checkpoint_manager.save_checkpoint(
                        train_cfg.checkpoint, model_cfg, best_params,
                        {"epoch": epoch, "score": score[0], "train": record.as_line()},
                    )
                    if run_id is not None:
                        checkpoint_manager.register_checkpoint(path, run_id, epoch, score[0])
                    print(f"[checkpoint] saved best epoch={epoch} -> {path}")
    finally:
        if pool is not None:
            pool.shutdown()
        if log_file is not None:
            log_file.close()

    return TrainResult(params, best_params, best_epoch, history, run_id)
