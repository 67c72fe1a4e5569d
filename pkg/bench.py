"""
Latency scaling of the encoder.

mode="points": full encoder forward at each raw point count P, token counts fixed.
mode="tokens": one LAU forward at each token count M, neighbor count fixed.
The log-log slope of median time against the count estimates the exponent.
"""
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

import checkpoint_manager
import database as db
from attention import MhaParams, lau_forward
from autograd import constant
from errors import ArgumentError
from network import ModelConfig, bind, count_parameters, encode, init_params
from spatial import PointCloud
from tokenizer import TokenSet

MODES = ("points", "tokens")


@dataclass
class BenchRow:
    count: int
    median_s: float
    times: list[float] = field(default_factory=list)


@dataclass
class BenchReport:
    mode: str
    rows: list[BenchRow]
    slope: float | None
    param_count: int

    def as_table(self) -> str:
        label = "points" if self.mode == "points" else "tokens"
        lines = [f"{label:>8}  {'median_s':>12}"]
        lines += [f"{row.count:>8}  {row.median_s:>12.6f}" for row in self.rows]
        lines.append("slope=nan" if self.slope is None else f"slope={self.slope:.4f}")
        lines.append(f"params={self.param_count}")
        return "\n".join(lines)


def fit_loglog_slope(counts: Sequence[float], times: Sequence[float]) -> float | None:
    """Least-squares slope of log(time) on log(count); None for fewer than two counts."""
    if len(counts) < 2:
        return None
    return float(np.polyfit(np.log(counts), np.log(times), 1)[0])


def _sphere_cloud(rng: np.random.Generator, n: int, feat_dim: int) -> PointCloud:
    pts = rng.normal(size=(n, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    feats = rng.normal(size=(n, feat_dim)) if feat_dim else None
    return PointCloud(pts, feats)


def _timed(fn, repeats: int) -> list[float]:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return times


def bench_scaling(
    model_cfg: ModelConfig,
    counts: Sequence[int],
    repeats: int = 3,
    seed: int = 0,
    mode: str = "points",
    record: bool = False,
) -> BenchReport:
    if mode not in MODES:
        raise ArgumentError(f"unknown bench mode '{mode}', expected one of {MODES}")
    if repeats < 1:
        raise ArgumentError(f"repeats must be >= 1, got {repeats}")
    if not counts or min(counts) < 1:
        raise ArgumentError("bench needs at least one positive count")
    rng = np.random.default_rng(seed)
    params = init_params(model_cfg, seed=seed)
    nodes = bind(params, trainable=False)
    stage = model_cfg.stages[0]
    rows = []
    for count in counts:
        if mode == "points":
            if count < stage.token_count:
                raise ArgumentError(f"point count {count} is below the first-stage token count {stage.token_count}")
            cloud = _sphere_cloud(rng, count, model_cfg.in_feat_dim)
            times = _timed(lambda: encode(cloud, model_cfg, nodes), repeats)
        else:
            if count < stage.attention.k_neighbors:
                raise ArgumentError(f"token count {count} is below k_neighbors {stage.attention.k_neighbors}")
            if not model_cfg.use_lau:
                raise ArgumentError("tokens mode times the LAU; the model has use_lau=false")
            tokens = TokenSet(
                constant(rng.normal(size=(count, model_cfg.d_model)), dtype=model_cfg.np_dtype),
                rng.uniform(-1.0, 1.0, size=(count, 3)),
            )
            lau = MhaParams.from_mapping(nodes, "stage0.lau0")
            times = _timed(lambda: lau_forward(tokens, lau, stage.attention), repeats)
        row = BenchRow(int(count), float(np.median(times)), times)
        rows.append(row)
        print(f"[bench] {mode}={row.count} median_s={row.median_s:.6g}")

    slope = fit_loglog_slope([r.count for r in rows], [r.median_s for r in rows])
    report = BenchReport(mode, rows, None if slope is None or math.isnan(slope) else slope, count_parameters(params))
    if record:
        db.init_db()
        key = checkpoint_manager.config_hash(model_cfg)
        for row in rows:
            db.record_bench(key, mode, row.count, row.median_s, repeats, report.param_count)
    return report
