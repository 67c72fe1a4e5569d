"""
Multi-scale tokenization.

One sorted ball query per centroid; scale i pools the first K_i neighbors of
that sorted list, so every scale shares a single neighbor search and a single
linear lift.
"""
from dataclasses import dataclass, replace

import numpy as np

from autograd import Linear, Node, concat, constant, gather, reduce_max, reshape, slice_axis
from errors import ArgumentError, DimensionError
from spatial import NeighborIndex, PointCloud, ball_query_sorted, fps


@dataclass(frozen=True)
class ScaleConfig:
    ks: tuple[int, ...] = (8, 16, 32)
    radius: float = 0.2
    centroid_count: int = 128
    out_dim_per_scale: int = 32

    def __post_init__(self):
        ks = tuple(int(k) for k in self.ks)
        object.__setattr__(self, "ks", ks)
        if not ks or ks[0] < 1 or any(b <= a for a, b in zip(ks, ks[1:])):
            raise ArgumentError(f"scale ks must be strictly increasing and >= 1, got {ks}")
        if self.radius <= 0:
            raise ArgumentError(f"ball radius must be positive, got {self.radius}")
        if self.centroid_count < 1 or self.out_dim_per_scale < 1:
            raise ArgumentError("centroid_count and out_dim_per_scale must be >= 1")

    @property
    def cap(self) -> int:
        # ball cap equals the largest scale
        return self.ks[-1]

    @property
    def width(self) -> int:
        return len(self.ks) * self.out_dim_per_scale

    def single_scale(self) -> "ScaleConfig":
        """Largest scale only, same output width."""
        return replace(self, ks=(self.ks[-1],), out_dim_per_scale=self.width)


@dataclass
class TokenSet:
    feats: Node                              # M x D
    anchors: np.ndarray                      # M x 3
    centroid_ids: np.ndarray | None = None   # rows of the source set the anchors came from
    neighbors: NeighborIndex | None = None

    def __len__(self) -> int:
        return self.anchors.shape[0]

    @property
    def width(self) -> int:
        return self.feats.shape[1]


def _abstract(
    coords: np.ndarray,
    feats: Node | None,
    cfg: ScaleConfig,
    delta: Linear,
    seed: int,
) -> TokenSet:
    centroid_ids = fps(coords, cfg.centroid_count, seed)
    centers = coords[centroid_ids]
    hood = ball_query_sorted(coords, centers, cfg.radius, cfg.cap)
    hood.centroid_ids = centroid_ids
    idx, empty = hood.padded(cfg.cap)
    m, k = idx.shape

    dtype = delta.weight.dtype
    offsets = coords[np.where(idx < 0, 0, idx)] - centers[:, None, :]
    offsets[empty] = 0.0
    parts = [constant(offsets, dtype=dtype)]
    if feats is not None:
        if empty.any():
            # empty balls read a zero feature row appended past the end
            zero_row = constant(np.zeros((1, feats.shape[1]), dtype=dtype))
            parts.append(gather(concat([feats, zero_row], axis=0), np.where(idx < 0, coords.shape[0], idx)))
        else:
            parts.append(gather(feats, idx))
    rows = concat(parts, axis=-1) if len(parts) > 1 else parts[0]

    in_dim = rows.shape[-1]
    if in_dim != delta.in_dim:
        raise DimensionError(f"tokenize: neighbor rows have width {in_dim}, shared layer expects {delta.in_dim}")
    lifted = reshape(delta(reshape(rows, (m * k, in_dim))), (m, k, delta.out_dim))
    pooled = [reduce_max(slice_axis(lifted, 1, 0, ki), axis=1) for ki in cfg.ks]
    out = pooled[0] if len(pooled) == 1 else concat(pooled, axis=1)
    return TokenSet(out, centers.copy(), centroid_ids, hood)


def tokenize(cloud: PointCloud, cfg: ScaleConfig, delta: Linear, seed: int = 0) -> TokenSet:
    """Initial tokens from a raw cloud; neighbor rows are (p_j - c_i) concatenated with f_j."""
    if len(cloud) < 1:
        raise ArgumentError("cannot tokenize an empty cloud")
    feats = None if cloud.feats is None else constant(cloud.feats, dtype=delta.weight.dtype)
    return _abstract(cloud.coords, feats, cfg, delta, seed)


def reduce_tokens(tokens: TokenSet, m_next: int, cfg: ScaleConfig, delta: Linear, seed: int = 0) -> TokenSet:
    """Re-tokenize a token set (anchors as points, features as f_j) down to m_next tokens."""
    if m_next >= len(tokens):
        raise ArgumentError(f"reduce_tokens: next count {m_next} must be below current {len(tokens)}")
    return _abstract(tokens.anchors, tokens.feats, replace(cfg, centroid_count=m_next), delta, seed)
