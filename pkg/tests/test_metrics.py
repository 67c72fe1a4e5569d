import numpy as np
import pytest

from errors import ArgumentError
from metrics import Grouping, MetricsReport, confusion_matrix, metrics


def confusion_oracle(preds, labels, c: int) -> np.ndarray:
    cm = np.zeros((c, c), dtype=np.int64)
    for p, g in zip(preds, labels):
        cm[g, p] += 1
    return cm


class TestConfusionMatrix:
    def test_rows_are_ground_truth(self):
        cm = confusion_matrix([1, 1, 0], [0, 1, 0], 2)
        assert cm.tolist() == [[1, 1], [0, 1]]

    def test_matches_counting_oracle(self, rng):
        for _ in range(50):
            c = int(rng.integers(2, 7))
            n = int(rng.integers(1, 200))
            preds, labels = rng.integers(0, c, size=n), rng.integers(0, c, size=n)
            np.testing.assert_array_equal(confusion_matrix(preds, labels, c), confusion_oracle(preds, labels, c))

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            confusion_matrix([0, 1], [0], 2)

    def test_out_of_range_ids(self):
        with pytest.raises(ArgumentError):
            confusion_matrix([0, 2], [0, 1], 2)
        with pytest.raises(ArgumentError):
            confusion_matrix([0, 1], [-1, 1], 2)


class TestMetrics:
    def test_perfect_predictions(self):
        report = metrics([0, 1, 2, 2], [0, 1, 2, 2], 3)
        assert report.oa == report.macc == report.miou == report.ins_miou == report.cat_miou == 1.0

    def test_hand_computed_values(self):
        # class 0: 2 of 3 right, class 1: 1 of 1 right, one 0 predicted as 1
        report = metrics([0, 0, 1, 1], [0, 0, 0, 1], 2)
        assert report.oa == pytest.approx(0.75)
        assert report.macc == pytest.approx((2 / 3 + 1.0) / 2)
        assert report.per_class_iou == pytest.approx({0: 2 / 3, 1: 1 / 2})
        assert report.miou == pytest.approx((2 / 3 + 1 / 2) / 2)

    def test_absent_classes_are_skipped(self):
        report = metrics([0, 0, 1], [0, 0, 0], 4)
        assert set(report.per_class_acc) == {0}
        assert set(report.per_class_iou) == {0, 1}
        assert report.macc == pytest.approx(2 / 3)

    def test_relabeling_classes_preserves_scores(self, rng):
        for _ in range(20):
            preds, labels = rng.integers(0, 5, size=80), rng.integers(0, 5, size=80)
            perm = rng.permutation(5)
            a, b = metrics(preds, labels, 5), metrics(perm[preds], perm[labels], 5)
            assert a.oa == b.oa
            assert a.macc == pytest.approx(b.macc, abs=1e-12)
            assert a.miou == pytest.approx(b.miou, abs=1e-12)

    def test_empty_input(self):
        with pytest.raises(ArgumentError):
            metrics([], [], 2)

    def test_report_lines(self):
        lines = metrics([0, 1], [0, 1], 2).as_lines()
        assert lines[:5] == ["oa=1.0", "macc=1.0", "miou=1.0", "ins_miou=1.0", "cat_miou=1.0"]
        assert "acc_class1=1.0" in lines
        assert "iou_class0=1.0" in lines

    def test_rounding_in_lines(self):
        report = MetricsReport(oa=1 / 3, macc=0.5, miou=0.25, ins_miou=0.0, cat_miou=0.0)
        assert report.as_lines()[0] == "oa=0.333333"


# =============================================================================
# Part IoU over shapes and categories
# =============================================================================


class TestPartIou:
    def test_part_missing_on_both_sides_scores_one(self):
        grouping = Grouping(np.zeros(3, dtype=np.int64), np.array([0]), category_parts=[[0, 1, 2]])
        report = metrics([0, 0, 1], [0, 0, 1], 3, grouping)
        assert report.ins_miou == 1.0

    def test_instance_and_category_means(self):
        # shapes 0 and 1 belong to category 0, shape 2 to category 1
        shape_ids = np.array([0, 0, 1, 1, 2, 2])
        grouping = Grouping(shape_ids, np.array([0, 0, 1]), category_parts=[[0, 1], [2, 3]])
        preds = np.array([0, 1, 0, 0, 2, 3])
        labels = np.array([0, 1, 0, 1, 2, 2])
        report = metrics(preds, labels, 4, grouping)
        shape_scores = [1.0, (1 / 2 + 0.0) / 2, (1 / 2 + 0.0) / 2]
        assert report.ins_miou == pytest.approx(np.mean(shape_scores))
        assert report.cat_miou == pytest.approx(np.mean([np.mean(shape_scores[:2]), shape_scores[2]]))

    def test_grouping_must_cover_every_point(self):
        with pytest.raises(ArgumentError):
            metrics([0, 1], [0, 1], 2, Grouping(np.zeros(3, dtype=np.int64), np.array([0])))


def test_one_class_right_one_class_wrong():
    report = metrics([0, 0, 0, 0], [0, 0, 1, 1], 2)
    assert report.oa == 0.5
    assert report.macc == 0.5
