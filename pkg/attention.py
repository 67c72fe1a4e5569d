"""
Multi-head attention and the two residual units built on it.

LAU: self-attention restricted to each token's K nearest tokens (by anchor
distance, the token itself included), S = X + MHA, out = S + FF(S).
GAU: cross-attention from tokens to the embedded raw points, C = T + MHA,
out = C + FF(C). Cost is O(M * P) in the number of raw points.
"""
import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from autograd import (
    Linear,
    Node,
    add,
    bmm,
    gather,
    layer_norm,
    matmul,
    relu,
    reshape,
    scale,
    softmax,
    transpose,
)
from errors import ArgumentError, DimensionError
from spatial import knn_indices
from tokenizer import TokenSet


@dataclass(frozen=True)
class AttentionConfig:
    heads: int = 4
    d_model: int = 64
    d_ff: int = 128
    k_neighbors: int = 16
    d_head: int | None = None
    pre_norm: bool = False

    def __post_init__(self):
        if min(self.heads, self.d_model, self.d_ff, self.k_neighbors) < 1:
            raise ArgumentError("attention sizes must all be positive")
        if self.d_head is None:
            if self.d_model % self.heads:
                raise ArgumentError(f"d_model {self.d_model} is not divisible by {self.heads} heads")
            object.__setattr__(self, "d_head", self.d_model // self.heads)
        elif self.d_head < 1:
            raise ArgumentError("d_head must be positive")

    @property
    def inner(self) -> int:
        return self.heads * self.d_head

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        d, inner, ff = self.d_model, self.inner, self.d_ff
        return {
            "w_q": (d, inner),
            "w_k": (d, inner),
            "w_v": (d, inner),
            "w_o": (inner, d),
            "ff1.weight": (d, ff),
            "ff1.bias": (ff,),
            "ff2.weight": (ff, d),
            "ff2.bias": (d,),
        }


@dataclass
class MhaParams:
    w_q: Node
    w_k: Node
    w_v: Node
    w_o: Node
    ff1: Linear
    ff2: Linear

    @classmethod
    def from_mapping(cls, params: Mapping[str, Node], prefix: str) -> "MhaParams":
        return cls(
            w_q=params[f"{prefix}.w_q"],
            w_k=params[f"{prefix}.w_k"],
            w_v=params[f"{prefix}.w_v"],
            w_o=params[f"{prefix}.w_o"],
            ff1=Linear.from_mapping(params, f"{prefix}.ff1"),
            ff2=Linear.from_mapping(params, f"{prefix}.ff2"),
        )


def _check_width(x: Node, expected: int, what: str) -> None:
    if x.ndim != 2 or x.shape[1] != expected:
        raise DimensionError(f"{what}: expected width {expected}, got shape {x.shape}")


def _split_heads(x: Node, heads: int) -> Node:
    n, inner = x.shape
    return transpose(reshape(x, (n, heads, inner // heads)), (1, 0, 2))


def mha(query: Node, source: Node, params: MhaParams, heads: int, return_weights: bool = False):
    """
    Dense multi-head attention of Q query rows over S source rows.
    With `return_weights`, also returns the h x Q x S softmax weights.
    """
    _check_width(query, params.w_q.shape[0], "mha query")
    _check_width(source, params.w_k.shape[0], "mha source")
    q = _split_heads(matmul(query, params.w_q), heads)
    k = _split_heads(matmul(source, params.w_k), heads)
    v = _split_heads(matmul(source, params.w_v), heads)
    d_head = q.shape[2]

    weights = softmax(scale(bmm(q, transpose(k, (0, 2, 1))), 1.0 / math.sqrt(d_head)), axis=-1)
    merged = reshape(transpose(bmm(weights, v), (1, 0, 2)), (query.shape[0], heads * d_head))
    out = matmul(merged, params.w_o)
    return (out, weights.value) if return_weights else out


def local_mha(x: Node, anchors: np.ndarray, params: MhaParams, cfg: AttentionConfig):
    """
    Each row attends over its K nearest rows by anchor distance.
    Returns (output M x d, weights h x M x K, neighbor ids M x K).
    """
    m = x.shape[0]
    k = cfg.k_neighbors
    if k > m:
        raise ArgumentError(f"LAU needs k_neighbors <= token count, got K={k} for M={m}")
    _check_width(x, params.w_q.shape[0], "lau input")
    ids, _ = knn_indices(anchors, anchors, k)
    h, dh = cfg.heads, cfg.d_head

    q = reshape(matmul(x, params.w_q), (m * h, 1, dh))
    keys = gather(matmul(x, params.w_k), ids)
    vals = gather(matmul(x, params.w_v), ids)
    keys = reshape(transpose(reshape(keys, (m, k, h, dh)), (0, 2, 3, 1)), (m * h, dh, k))
    vals = reshape(transpose(reshape(vals, (m, k, h, dh)), (0, 2, 1, 3)), (m * h, k, dh))

    weights = softmax(scale(bmm(q, keys), 1.0 / math.sqrt(dh)), axis=-1)
    out = matmul(reshape(bmm(weights, vals), (m, h * dh)), params.w_o)
    return out, weights.value.reshape(m, h, k).transpose(1, 0, 2), ids


def feed_forward(x: Node, params: MhaParams) -> Node:
    return params.ff2(relu(params.ff1(x)))


def _norm(x: Node, enabled: bool) -> Node:
    return layer_norm(x) if enabled else x


def lau_forward(tokens: TokenSet, params: MhaParams, cfg: AttentionConfig) -> TokenSet:
    x = tokens.feats
    _check_width(x, cfg.d_model, "lau_forward")
    attended, _, _ = local_mha(_norm(x, cfg.pre_norm), tokens.anchors, params, cfg)
    s = add(x, attended)
    return replace(tokens, feats=add(s, feed_forward(_norm(s, cfg.pre_norm), params)))


def gau_forward(tokens: TokenSet, cloud_embed: Node, params: MhaParams, cfg: AttentionConfig) -> TokenSet:
    t = tokens.feats
    _check_width(t, cfg.d_model, "gau_forward tokens")
    _check_width(cloud_embed, cfg.d_model, "gau_forward points")
    c = add(t, mha(_norm(t, cfg.pre_norm), _norm(cloud_embed, cfg.pre_norm), params, cfg.heads))
    return replace(tokens, feats=add(c, feed_forward(_norm(c, cfg.pre_norm), params)))
