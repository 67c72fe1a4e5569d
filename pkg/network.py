"""
Hierarchical encoder plus classification head and interpolation decoder.

Stage s: tokenize (s == 0) or reduce_tokens, optional projection to d_model,
LAU x lau_repeats, then GAU against the shared raw-point embedding. The input
cloud is put into canonical (lexicographic) order first so every reduction
over points runs in the same order for any permutation of the input.
"""
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from attention import AttentionConfig, MhaParams, gau_forward, lau_forward
from autograd import (
    Linear,
    Node,
    concat,
    constant,
    gather,
    log,
    matmul,
    mul,
    parameter,
    reduce_max,
    reduce_sum,
    relu,
    reshape,
    scale,
    softmax,
)
from config import DTYPE, parse_bool, parse_floats, parse_ints
from errors import ArgumentError, DimensionError
from spatial import PointCloud, canonical_order, interpolation_matrix
from tokenizer import ScaleConfig, TokenSet, reduce_tokens, tokenize

TASKS = ("classification", "segmentation")
LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class StageConfig:
    token_count: int
    scales: ScaleConfig
    attention: AttentionConfig
    lau_repeats: int = 1


@dataclass(frozen=True)
class ModelConfig:
    stages: tuple[StageConfig, ...]
    task: str = "classification"
    num_classes: int = 3
    in_feat_dim: int = 0
    head_dim: int = 128
    decoder_dim: int = 64
    interp_k: int = 3
    seed: int = 0
    use_lau: bool = True
    use_gau: bool = True
    use_mst: bool = True
    dtype: str = "float64"

    KEYS = (
        "task", "num_classes", "in_feat_dim", "head_dim", "decoder_dim", "interp_k", "seed",
        "use_lau", "use_gau", "use_mst", "dtype", "token_counts", "lau_repeats", "ks", "radii",
        "out_dim_per_scale", "heads", "d_model", "d_ff", "d_head", "k_neighbors", "pre_norm",
    )

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ArgumentError("model needs at least one stage")
        if self.task not in TASKS:
            raise ArgumentError(f"unknown task '{self.task}', expected one of {TASKS}")
        if self.num_classes < 2:
            raise ArgumentError(f"num_classes must be >= 2, got {self.num_classes}")
        counts = [s.token_count for s in self.stages]
        if any(b >= a for a, b in zip(counts, counts[1:])):
            raise ArgumentError(f"token counts must strictly decrease across stages, got {counts}")
        if len({s.attention.d_model for s in self.stages}) != 1:
            raise ArgumentError("all stages must share one d_model")
        if self.interp_k < 1 or self.head_dim < 1 or self.decoder_dim < 1 or self.in_feat_dim < 0:
            raise ArgumentError("head_dim, decoder_dim and interp_k must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ArgumentError(f"dtype must be float64 or float32, got '{self.dtype}'")

    @property
    def d_model(self) -> int:
        return self.stages[0].attention.d_model

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def uses_point_embedding(self) -> bool:
        return self.use_gau or self.task == "segmentation"

    def stage_scales(self, s: int) -> ScaleConfig:
        stage = self.stages[s]
        scales = replace(stage.scales, centroid_count=stage.token_count)
        return scales if self.use_mst else scales.single_scale()

    @classmethod
    def default(cls, task: str = "classification", num_classes: int = 3, **overrides) -> "ModelConfig":
        flat = {"task": task, "num_classes": str(num_classes)}
        flat.update({k: str(v) for k, v in overrides.items()})
        return cls.from_flat(flat)

    @classmethod
    def from_flat(cls, values: Mapping[str, str]) -> "ModelConfig":
        unknown = sorted(set(values) - set(cls.KEYS))
        if unknown:
            raise ArgumentError(f"unknown model config key '{unknown[0]}'")
        get = values.get
        counts = parse_ints(get("token_counts", "128,32,8"))
        n = len(counts)

        def per_stage(key: str, default: str, parse):
            vals = parse(get(key, default))
            if len(vals) == 1:
                return vals * n
            if len(vals) != n:
                raise ArgumentError(f"'{key}' needs 1 or {n} values, got {len(vals)}")
            return vals

        radii = per_stage("radii", "0.2,0.4,0.8" if n == 3 else "0.2", parse_floats)
        repeats = per_stage("lau_repeats", "1", parse_ints)
        k_neighbors = per_stage("k_neighbors", "16,16,8" if n == 3 else "16", parse_ints)
        ks = parse_ints(get("ks", "8,16,32"))
        d_head = get("d_head")
        pre_norm = parse_bool(get("pre_norm", "false"))
        stages = tuple(
            StageConfig(
                token_count=counts[s],
                scales=ScaleConfig(ks=ks, radius=radii[s], centroid_count=counts[s],
                                   out_dim_per_scale=int(get("out_dim_per_scale", "32"))),
                attention=AttentionConfig(
                    heads=int(get("heads", "4")),
                    d_model=int(get("d_model", "64")),
                    d_ff=int(get("d_ff", "128")),
                    k_neighbors=k_neighbors[s],
                    d_head=int(d_head) if d_head else None,
                    pre_norm=pre_norm,
                ),
                lau_repeats=repeats[s],
            )
            for s in range(n)
        )
        return cls(
            stages=stages,
            task=get("task", "classification"),
            num_classes=int(get("num_classes", "3")),
            in_feat_dim=int(get("in_feat_dim", "0")),
            head_dim=int(get("head_dim", "128")),
            decoder_dim=int(get("decoder_dim", "64")),
            interp_k=int(get("interp_k", "3")),
            seed=int(get("seed", "0")),
            use_lau=parse_bool(get("use_lau", "true")),
            use_gau=parse_bool(get("use_gau", "true")),
            use_mst=parse_bool(get("use_mst", "true")),
            dtype=get("dtype", DTYPE),
        )

    def to_flat(self) -> dict[str, str]:
        def join(vals) -> str:
            return ",".join(str(v) for v in vals)

        att = self.stages[0].attention
        return {
            "task": self.task,
            "num_classes": str(self.num_classes),
            "in_feat_dim": str(self.in_feat_dim),
            "head_dim": str(self.head_dim),
            "decoder_dim": str(self.decoder_dim),
            "interp_k": str(self.interp_k),
            "seed": str(self.seed),
            "use_lau": str(self.use_lau).lower(),
            "use_gau": str(self.use_gau).lower(),
            "use_mst": str(self.use_mst).lower(),
            "dtype": self.dtype,
            "token_counts": join(s.token_count for s in self.stages),
            "lau_repeats": join(s.lau_repeats for s in self.stages),
            "ks": join(self.stages[0].scales.ks),
            "radii": join(repr(s.scales.radius) for s in self.stages),
            "out_dim_per_scale": str(self.stages[0].scales.out_dim_per_scale),
            "heads": str(att.heads),
            "d_model": str(att.d_model),
            "d_ff": str(att.d_ff),
            "d_head": str(att.d_head),
            "k_neighbors": join(s.attention.k_neighbors for s in self.stages),
            "pre_norm": str(att.pre_norm).lower(),
        }


@dataclass
class StageCache:
    order: np.ndarray                      # canonical order of the input points
    coords: np.ndarray                     # input coordinates in canonical order
    point_embed: Node | None = None        # shared raw-point lift (P x d_model)
    stages: list[TokenSet] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.d_model
    shapes: dict[str, tuple[int, ...]] = {}
    if cfg.uses_point_embedding:
        shapes["embed.weight"] = (3 + cfg.in_feat_dim, d)
        shapes["embed.bias"] = (d,)
    for s, stage in enumerate(cfg.stages):
        scales = cfg.stage_scales(s)
        in_dim = 3 + (cfg.in_feat_dim if s == 0 else d)
        shapes[f"stage{s}.delta.weight"] = (in_dim, scales.out_dim_per_scale)
        shapes[f"stage{s}.delta.bias"] = (scales.out_dim_per_scale,)
        if scales.width != d:
            shapes[f"stage{s}.proj.weight"] = (scales.width, d)
            shapes[f"stage{s}.proj.bias"] = (d,)
        units = [f"lau{r}" for r in range(stage.lau_repeats)] if cfg.use_lau else []
        if cfg.use_gau:
            units.append("gau")
        for unit in units:
            for name, shape in stage.attention.param_shapes().items():
                shapes[f"stage{s}.{unit}.{name}"] = shape
    if cfg.task == "classification":
        shapes["head.fc1.weight"] = (d, cfg.head_dim)
        shapes["head.fc1.bias"] = (cfg.head_dim,)
        shapes["head.fc2.weight"] = (cfg.head_dim, cfg.num_classes)
        shapes["head.fc2.bias"] = (cfg.num_classes,)
    else:
        width = d
        for s in range(len(cfg.stages) - 1, 0, -1):
            shapes[f"decoder.level{s}.weight"] = (width + d, cfg.decoder_dim)
            shapes[f"decoder.level{s}.bias"] = (cfg.decoder_dim,)
            width = cfg.decoder_dim
        shapes["decoder.points.weight"] = (width + d, cfg.decoder_dim)
        shapes["decoder.points.bias"] = (cfg.decoder_dim,)
        shapes["decoder.out.weight"] = (cfg.decoder_dim, cfg.num_classes)
        shapes["decoder.out.bias"] = (cfg.num_classes,)
    return shapes


def init_params(cfg: ModelConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("bias"):
            params[name] = np.zeros(shape, dtype=cfg.np_dtype)
        else:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape).astype(cfg.np_dtype)
    return params


def bind(params: Mapping[str, np.ndarray], trainable: bool = True) -> dict[str, Node]:
    """Fresh leaf Nodes over parameter arrays; one binding per computation graph."""
    make = parameter if trainable else constant
    return {name: make(value) for name, value in params.items()}


def count_parameters(params: Mapping[str, np.ndarray]) -> int:
    return int(sum(np.asarray(v).size for v in params.values()))


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------

def _point_rows(cloud: PointCloud) -> np.ndarray:
    return cloud.coords if cloud.feats is None else np.hstack([cloud.coords, cloud.feats])


def encode(cloud: PointCloud, cfg: ModelConfig, params: Mapping[str, Node]) -> tuple[TokenSet, StageCache]:
    if len(cloud) < cfg.stages[0].token_count:
        raise ArgumentError(f"cloud has {len(cloud)} points, first stage needs {cfg.stages[0].token_count}")
    if cloud.feat_dim != cfg.in_feat_dim:
        raise DimensionError(f"cloud has {cloud.feat_dim} feature columns, model expects {cfg.in_feat_dim}")
    order = canonical_order(cloud)
    canon = cloud.take(order)
    cache = StageCache(order=order, coords=canon.coords)
    if cfg.uses_point_embedding:
        lift = Linear.from_mapping(params, "embed")
        cache.point_embed = lift(constant(_point_rows(canon), dtype=cfg.np_dtype))

    tokens: TokenSet | None = None
    for s, stage in enumerate(cfg.stages):
        delta = Linear.from_mapping(params, f"stage{s}.delta")
        scales = cfg.stage_scales(s)
        if tokens is None:
            tokens = tokenize(canon, scales, delta, seed=cfg.seed + s)
        else:
            tokens = reduce_tokens(tokens, stage.token_count, scales, delta, seed=cfg.seed + s)
        if f"stage{s}.proj.weight" in params:
            tokens = replace(tokens, feats=Linear.from_mapping(params, f"stage{s}.proj")(tokens.feats))
        if cfg.use_lau:
            for r in range(stage.lau_repeats):
                tokens = lau_forward(tokens, MhaParams.from_mapping(params, f"stage{s}.lau{r}"), stage.attention)
        if cfg.use_gau:
            tokens = gau_forward(tokens, cache.point_embed, MhaParams.from_mapping(params, f"stage{s}.gau"), stage.attention)
        cache.stages.append(tokens)
    return tokens, cache


def class_logits(cloud: PointCloud, cfg: ModelConfig, params: Mapping[str, Node]) -> Node:
    if cfg.task != "classification":
        raise ArgumentError(f"classify needs a classification model, got task '{cfg.task}'")
    tokens, _ = encode(cloud, cfg, params)
    pooled = reshape(reduce_max(tokens.feats, axis=0), (1, tokens.width))
    hidden = relu(Linear.from_mapping(params, "head.fc1")(pooled))
    return reshape(Linear.from_mapping(params, "head.fc2")(hidden), (cfg.num_classes,))


def classify(cloud: PointCloud, cfg: ModelConfig, params: Mapping[str, Node]) -> Node:
    return softmax(class_logits(cloud, cfg, params), axis=-1)


def segment_logits(cloud: PointCloud, cfg: ModelConfig, params: Mapping[str, Node]) -> Node:
    """Per-point logits, rows in the caller's point order."""
    if cfg.task != "segmentation":
        raise ArgumentError(f"segment needs a segmentation model, got task '{cfg.task}'")
    tokens, cache = encode(cloud, cfg, params)
    feats, anchors = tokens.feats, tokens.anchors
    for s in range(len(cfg.stages) - 1, 0, -1):
        finer = cache.stages[s - 1]
        weights = interpolation_matrix(finer.anchors, anchors, cfg.interp_k)
        up = matmul(constant(weights, dtype=cfg.np_dtype), feats)
        feats = relu(Linear.from_mapping(params, f"decoder.level{s}")(concat([up, finer.feats], axis=-1)))
        anchors = finer.anchors
    weights = interpolation_matrix(cache.coords, anchors, cfg.interp_k)
    up = matmul(constant(weights, dtype=cfg.np_dtype), feats)
    feats = relu(Linear.from_mapping(params, "decoder.points")(concat([up, cache.point_embed], axis=-1)))
    logits = Linear.from_mapping(params, "decoder.out")(feats)
    return gather(logits, np.argsort(cache.order))


def segment(cloud: PointCloud, cfg: ModelConfig, params: Mapping[str, Node]) -> Node:
    return softmax(segment_logits(cloud, cfg, params), axis=-1)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ArgumentError(f"label out of range for {num_classes} classes")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _targets(g, shape: tuple[int, ...]) -> np.ndarray:
    g = np.asarray(g)
    if g.shape == shape:
        if not (np.isin(g, (0.0, 1.0)).all() and (g.reshape(-1, shape[-1]).sum(axis=1) == 1).all()):
            raise ArgumentError("targets must be one-hot rows")
        return g.astype(np.float64)
    return one_hot(g, shape[-1]).reshape(shape)


def loss_cls(pred: Node, g) -> Node:
    """-sum_c g_c log p_c for one probability vector; `g` is one-hot or a class id."""
    target = _targets(g, pred.shape)
    return scale(reduce_sum(mul(log(pred, floor=LOG_FLOOR), constant(target, dtype=pred.dtype))), -1.0)


def loss_seg(pred: Node, g) -> Node:
    """Mean per-point cross-entropy; `g` is N one-hot rows or N class ids."""
    if pred.ndim != 2:
        raise DimensionError(f"loss_seg expects N x C probabilities, got {pred.shape}")
    target = _targets(g, pred.shape)
    total = reduce_sum(mul(log(pred, floor=LOG_FLOOR), constant(target, dtype=pred.dtype)))
    return scale(total, -1.0 / pred.shape[0])
