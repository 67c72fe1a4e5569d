import numpy as np
import pytest

from dataset import MANIFEST, Dataset, NormRecord, gen_synthetic, load_dataset, normalize, save_dataset
from errors import ArgumentError, ParseError
from spatial import PointCloud


class TestNormalize:
    def test_unit_radius_and_zero_centroid(self, rng):
        cloud, record = normalize(PointCloud(rng.normal(size=(50, 3)) * 4.0 + 7.0))
        np.testing.assert_allclose(cloud.coords.mean(axis=0), 0.0, atol=1e-12)
        assert np.linalg.norm(cloud.coords, axis=1).max() == pytest.approx(1.0)
        assert record.scale > 1.0

    def test_invert_restores_coordinates(self, rng):
        coords = rng.normal(size=(30, 3)) + 2.0
        cloud, record = normalize(PointCloud(coords))
        np.testing.assert_allclose(record.invert(cloud.coords), coords, rtol=0, atol=1e-12)

    def test_single_point_keeps_unit_scale(self):
        cloud, record = normalize(PointCloud(np.array([[1.0, 2.0, 3.0]])))
        assert record.scale == 1.0
        np.testing.assert_array_equal(cloud.coords, [[0.0, 0.0, 0.0]])

    def test_labels_survive(self, rng):
        cloud, _ = normalize(PointCloud(rng.normal(size=(4, 3)), labels=[0, 1, 1, 0]))
        assert cloud.labels.tolist() == [0, 1, 1, 0]


# =============================================================================
# Synthetic generators
# =============================================================================


class TestSynthetic:
    def test_cls3_balance_and_shapes(self):
        ds = gen_synthetic("cls3", 30, 64, seed=1)
        assert ds.task == "classification"
        assert ds.class_names == ["sphere", "cube", "torus"]
        assert np.bincount(ds.targets).tolist() == [10, 10, 10]
        assert all(len(s) == 64 for s in ds.samples)
        assert len(ds.train_ids) == 24 and len(ds.test_ids) == 6
        assert sorted(np.r_[ds.train_ids, ds.test_ids].tolist()) == list(range(30))

    def test_samples_are_normalized(self):
        for cloud in gen_synthetic("cls3", 6, 128, seed=2).samples:
            np.testing.assert_allclose(cloud.coords.mean(axis=0), 0.0, atol=1e-12)
            assert np.linalg.norm(cloud.coords, axis=1).max() == pytest.approx(1.0)

    def test_same_seed_same_data(self):
        a, b = gen_synthetic("seg2", 4, 40, seed=3), gen_synthetic("seg2", 4, 40, seed=3)
        for x, y in zip(a.samples, b.samples):
            np.testing.assert_array_equal(x.coords, y.coords)
        np.testing.assert_array_equal(a.test_ids, b.test_ids)

    def test_seg2_labels_mark_the_pole(self):
        ds = gen_synthetic("seg2", 3, 80, seed=4)
        assert ds.task == "segmentation"
        assert ds.categories == ["cube_pole"]
        for cloud, record in zip(ds.samples, ds.norms):
            assert np.bincount(cloud.labels).tolist() == [60, 20]
            z = record.invert(cloud.coords)[:, 2]
            # the pole stands above the cube's top face
            assert z[cloud.labels == 1].min() > 0.45
            assert z[cloud.labels == 0].max() < 0.55

    def test_at_least_one_training_sample(self):
        ds = gen_synthetic("cls3", 1, 16, test_fraction=0.9)
        assert ds.train_ids.tolist() == [0]
        assert ds.test_ids.size == 0

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kind": "cls9", "n_samples": 3, "points_per_cloud": 8},
            {"kind": "cls3", "n_samples": 0, "points_per_cloud": 8},
            {"kind": "seg2", "n_samples": 3, "points_per_cloud": 1},
            {"kind": "cls3", "n_samples": 3, "points_per_cloud": 8, "test_fraction": 1.0},
        ],
    )
    def test_rejects_bad_arguments(self, kwargs):
        with pytest.raises(ArgumentError):
            gen_synthetic(**kwargs)


class TestDataset:
    def test_split_lookup(self):
        ds = gen_synthetic("cls3", 10, 16, seed=0)
        np.testing.assert_array_equal(ds.split("test"), ds.test_ids)
        with pytest.raises(ArgumentError):
            ds.split("val")

    def test_grouping_spans_the_selected_samples(self):
        ds = gen_synthetic("seg2", 3, 12, seed=0)
        grouping = ds.grouping([2, 0])
        assert grouping.shape_ids.tolist() == [0] * 12 + [1] * 12
        assert grouping.shape_categories.tolist() == [0, 0]

    def test_rejects_unlabelled_segmentation_sample(self, rng):
        with pytest.raises(ArgumentError):
            Dataset(
                "seg2", "segmentation", [PointCloud(rng.normal(size=(4, 3)))], ["a", "b"], [0], [0], [],
                [NormRecord(np.zeros(3), 1.0)],
            )

    def test_rejects_out_of_range_class(self, rng):
        with pytest.raises(ArgumentError):
            Dataset(
                "cls3", "classification", [PointCloud(rng.normal(size=(4, 3)))], ["a", "b"], [2], [0], [],
                [NormRecord(np.zeros(3), 1.0)],
            )


# =============================================================================
# Directory layout
# =============================================================================


class TestDirectory:
    @pytest.mark.parametrize("fmt", ["binary", "text"])
    def test_save_then_load(self, tmp_path, fmt):
        ds = gen_synthetic("seg2", 5, 24, seed=6)
        loaded = load_dataset(save_dataset(ds, tmp_path / "data", fmt=fmt))
        assert loaded.kind == "seg2"
        assert loaded.task == "segmentation"
        assert loaded.class_names == ds.class_names
        assert loaded.categories == ds.categories
        np.testing.assert_array_equal(loaded.test_ids, ds.test_ids)
        for a, b, na, nb in zip(ds.samples, loaded.samples, ds.norms, loaded.norms):
            np.testing.assert_allclose(b.coords, a.coords, rtol=1e-6, atol=1e-6)
            np.testing.assert_array_equal(b.labels, a.labels)
            np.testing.assert_array_equal(nb.centroid, na.centroid)
            assert nb.scale == na.scale

    def test_manifest_layout(self, tmp_path):
        save_dataset(gen_synthetic("cls3", 3, 8, seed=0), tmp_path, fmt="text")
        lines = (tmp_path / MANIFEST).read_text().splitlines()
        assert lines[:4] == ["# kind=cls3", "# task=classification", "# classes=sphere,cube,torus", "# categories="]
        assert lines[4].startswith("sample_00000.txt ")
        assert len(lines[4].split()) == 7

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path)

    def test_malformed_manifest_line(self, tmp_path):
        (tmp_path / MANIFEST).write_text("# classes=a,b\nsample.txt 0 train 0 0\n")
        with pytest.raises(ParseError) as info:
            load_dataset(tmp_path)
        assert info.value.position == "line 2"

    def test_unknown_split(self, tmp_path):
        (tmp_path / MANIFEST).write_text("# classes=a,b\nsample.txt 0 val 0 0 0 1\n")
        with pytest.raises(ParseError, match="unknown split"):
            load_dataset(tmp_path)

    def test_missing_sample_file(self, tmp_path):
        (tmp_path / MANIFEST).write_text("# classes=a,b\nsample.txt 0 train 0 0 0 1\n")
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path)
