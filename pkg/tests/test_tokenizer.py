import numpy as np
import pytest

from autograd import Linear, constant, gradient_check, mul, parameter, reduce_sum
from errors import ArgumentError, DimensionError
from spatial import PointCloud, fps, knn_indices
from tokenizer import ScaleConfig, TokenSet, reduce_tokens, tokenize


def make_delta(rng, in_dim: int, out_dim: int) -> Linear:
    return Linear(parameter(rng.normal(size=(in_dim, out_dim))), parameter(rng.normal(size=out_dim)))


def naive_tokens(cloud: PointCloud, cfg: ScaleConfig, delta: Linear, seed: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Separate K-NN per scale, each embedded and max-pooled on its own."""
    w, b = delta.weight.value, delta.bias.value
    centers = cloud.coords[fps(cloud, cfg.centroid_count, seed)]
    pooled, neighbor_sets = [], []
    for k in cfg.ks:
        ids, _ = knn_indices(centers, cloud.coords, k)
        rows = cloud.coords[ids] - centers[:, None, :]
        if cloud.feats is not None:
            rows = np.concatenate([rows, cloud.feats[ids]], axis=-1)
        pooled.append((rows.reshape(-1, rows.shape[-1]) @ w + b).reshape(len(centers), k, -1).max(axis=1))
        neighbor_sets.append(ids)
    return np.concatenate(pooled, axis=1), neighbor_sets


class TestScaleConfig:
    def test_rejects_non_increasing_scales(self):
        with pytest.raises(ArgumentError):
            ScaleConfig(ks=(8, 8))

    def test_rejects_non_positive_radius(self):
        with pytest.raises(ArgumentError):
            ScaleConfig(radius=0.0)

    def test_single_scale_keeps_width(self):
        cfg = ScaleConfig(ks=(4, 8, 16), out_dim_per_scale=8)
        single = cfg.single_scale()
        assert single.ks == (16,)
        assert single.width == cfg.width == 24


# =============================================================================
# Slicing semantics
# =============================================================================


class TestTokenize:
    def test_single_point_single_scale_is_bias_image(self, rng):
        delta = make_delta(rng, 3, 4)
        cfg = ScaleConfig(ks=(1,), radius=1.0, centroid_count=1, out_dim_per_scale=4)
        tokens = tokenize(PointCloud(np.array([[0.3, -0.2, 0.9]])), cfg, delta)
        np.testing.assert_array_equal(tokens.feats.value, delta.bias.value[None, :])

    def test_two_scales_slice_the_sorted_ball(self, rng):
        coords = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.0, 0.3, 0.0]])
        delta = make_delta(rng, 3, 4)
        cfg = ScaleConfig(ks=(1, 3), radius=1.0, centroid_count=1, out_dim_per_scale=4)
        tokens = tokenize(PointCloud(coords), cfg, delta)
        assert tokens.width == 8
        center = coords[tokens.centroid_ids[0]]
        lifted = (coords - center) @ delta.weight.value + delta.bias.value
        np.testing.assert_allclose(tokens.feats.value[0, :4], delta.bias.value, rtol=0, atol=1e-15)
        np.testing.assert_allclose(tokens.feats.value[0, 4:], lifted.max(axis=0), rtol=0, atol=1e-15)

    def test_isolated_centroids_pool_their_own_point(self, rng):
        coords = rng.normal(size=(20, 3))
        delta = make_delta(rng, 3, 4)
        cfg = ScaleConfig(ks=(2, 4), radius=1e-9, centroid_count=5, out_dim_per_scale=4)
        out = tokenize(PointCloud(coords), cfg, delta).feats.value
        np.testing.assert_array_equal(out, np.tile(delta.bias.value, (5, 2)))

    def test_width_mismatch_with_shared_layer(self, rng):
        cloud = PointCloud(rng.normal(size=(10, 3)), feats=rng.normal(size=(10, 2)))
        with pytest.raises(DimensionError):
            tokenize(cloud, ScaleConfig(ks=(2,), centroid_count=3), make_delta(rng, 3, 4))

    @pytest.mark.parametrize("block", range(4))
    def test_matches_naive_per_scale_knn(self, block):
        for seed in range(block * 25, block * 25 + 25):
            rng = np.random.default_rng(seed)
            cloud = PointCloud(rng.uniform(-1, 1, size=(64, 3)), feats=rng.normal(size=(64, 2)))
            cfg = ScaleConfig(ks=(2, 5, 9), radius=100.0, centroid_count=12, out_dim_per_scale=3)
            delta = make_delta(rng, 5, 3)
            tokens = tokenize(cloud, cfg, delta, seed=seed)
            expected, neighbor_sets = naive_tokens(cloud, cfg, delta, seed)
            idx, _ = tokens.neighbors.padded(cfg.cap)
            for k, ids in zip(cfg.ks, neighbor_sets):
                np.testing.assert_array_equal(idx[:, :k], ids)
            np.testing.assert_allclose(tokens.feats.value, expected, rtol=1e-12, atol=1e-12)

    def test_permutation_invariant(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            cloud = PointCloud(rng.normal(size=(48, 3)), feats=rng.normal(size=(48, 1)))
            cfg = ScaleConfig(ks=(3, 6), radius=0.9, centroid_count=10, out_dim_per_scale=4)
            delta = make_delta(rng, 4, 4)
            a = tokenize(cloud, cfg, delta, seed=seed)
            b = tokenize(cloud.take(rng.permutation(48)), cfg, delta, seed=seed)
            np.testing.assert_array_equal(a.feats.value, b.feats.value)
            np.testing.assert_array_equal(a.anchors, b.anchors)

    def test_translation_invariant_without_features(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            # dyadic coordinates make the shift exact
            coords = rng.integers(-64, 64, size=(40, 3)) / 32.0
            shift = rng.integers(-16, 16, size=3) / 4.0
            cfg = ScaleConfig(ks=(2, 4), radius=1.0, centroid_count=8, out_dim_per_scale=4)
            delta = make_delta(rng, 3, 4)
            a = tokenize(PointCloud(coords), cfg, delta, seed=seed)
            b = tokenize(PointCloud(coords + shift), cfg, delta, seed=seed)
            np.testing.assert_array_equal(a.feats.value, b.feats.value)

    def test_scales_nest_under_max_pool(self, rng):
        cloud = PointCloud(rng.normal(size=(80, 3)))
        cfg = ScaleConfig(ks=(2, 4, 8), radius=0.8, centroid_count=16, out_dim_per_scale=5)
        out = tokenize(cloud, cfg, make_delta(rng, 3, 5)).feats.value
        assert (out[:, 0:5] <= out[:, 5:10]).all()
        assert (out[:, 5:10] <= out[:, 10:15]).all()

    def test_gradient_wrt_shared_layer(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            cloud = PointCloud(rng.normal(size=(24, 3)), feats=rng.normal(size=(24, 1)))
            cfg = ScaleConfig(ks=(2, 4), radius=100.0, centroid_count=6, out_dim_per_scale=3)
            readout = rng.normal(size=(6, 6))

            def fn(xs):
                tokens = tokenize(cloud, cfg, Linear(xs[0], xs[1]), seed=seed)
                return reduce_sum(mul(tokens.feats, constant(readout)))

            assert gradient_check(fn, [rng.normal(size=(4, 3)), rng.normal(size=3)]) < 1e-4


# =============================================================================
# Token reduction
# =============================================================================


class TestReduceTokens:
    def _tokens(self, rng, m: int, width: int) -> TokenSet:
        return TokenSet(parameter(rng.normal(size=(m, width))), rng.normal(size=(m, 3)))

    def test_shapes(self, rng):
        cfg = ScaleConfig(ks=(2, 4), radius=2.0, out_dim_per_scale=3)
        out = reduce_tokens(self._tokens(rng, 16, 5), 6, cfg, make_delta(rng, 8, 3))
        assert len(out) == 6
        assert out.width == 6
        assert out.anchors.shape == (6, 3)

    def test_rejects_non_reducing_count(self, rng):
        cfg = ScaleConfig(ks=(2,), radius=2.0, out_dim_per_scale=3)
        with pytest.raises(ArgumentError):
            reduce_tokens(self._tokens(rng, 8, 5), 8, cfg, make_delta(rng, 8, 3))

    @pytest.mark.parametrize("seed", range(20))
    def test_gradient_reaches_token_features(self, seed):
        rng = np.random.default_rng(seed)
        anchors = rng.normal(size=(12, 3))
        cfg = ScaleConfig(ks=(2, 3), radius=100.0, out_dim_per_scale=2)
        delta = Linear(constant(rng.normal(size=(5, 2))), constant(rng.normal(size=2)))
        readout = rng.normal(size=(4, 4))

        def fn(xs):
            return reduce_sum(mul(reduce_tokens(TokenSet(xs[0], anchors), 4, cfg, delta).feats, constant(readout)))

        assert gradient_check(fn, [rng.normal(size=(12, 2))]) < 1e-4
