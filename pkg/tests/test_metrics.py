import numpy as np
import pytest

from cropscd.grid import BinaryMask, Raster
from cropscd.metrics import (
    ConfusionMatrix,
    MetricError,
    build_cm,
    f1_from_pre_rec,
    kappa,
    miou,
    overall_accuracy,
    overall_report,
    per_class_prf,
)


def textbook_kappa(counts: np.ndarray) -> float:
    """Independent kappa implementation straight from the textbook formulas."""
    counts = counts.astype(np.float64)
    total = counts.sum()
    po = np.trace(counts) / total
    pe = 0.0
    for k in range(counts.shape[0]):
        pe += counts[k, :].sum() * counts[:, k].sum()
    pe /= total * total
    return (po - pe) / (1.0 - pe)


def binary_kappa_from_counts(tp, fn, fp, tn) -> float:
    """The published two-class form: marginal-product chance agreement."""
    total = tp + fn + fp + tn
    oa = (tp + tn) / total
    r = ((tp + fn) * (tp + fp) + (tn + fn) * (tn + fp)) / total**2
    return (oa - r) / (1.0 - r)


class TestBuildCm:
    def test_perfect_prediction_is_diagonal(self):
        cells = np.array([[0, 1], [2, 1]], dtype=np.uint16)
        cm = build_cm(Raster(cells), Raster(cells), 3)
        assert np.array_equal(cm.counts, np.diag([1, 2, 1]))

    def test_single_off_diagonal(self):
        truth = Raster(np.zeros((2, 2), dtype=np.uint16))
        pred = Raster(np.ones((2, 2), dtype=np.uint16))
        cm = build_cm(truth, pred, 2)
        assert cm.counts[0, 1] == 4
        assert cm.counts.sum() == 4

    def test_scene_mask_excludes_cells(self):
        truth = Raster(np.zeros((2, 2), dtype=np.uint16))
        pred = Raster(np.ones((2, 2), dtype=np.uint16))
        scene = BinaryMask(np.array([[1, 0], [0, 0]], dtype=np.uint16))
        cm = build_cm(truth, pred, 2, scene=scene)
        assert cm.total == 1

    def test_label_out_of_range(self):
        truth = Raster(np.full((2, 2), 5, dtype=np.uint16))
        with pytest.raises(MetricError):
            build_cm(truth, truth, 3)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_counting_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = 5
        truth = Raster(rng.integers(0, n, (12, 12)).astype(np.uint16))
        pred = Raster(rng.integers(0, n, (12, 12)).astype(np.uint16))
        cm = build_cm(truth, pred, n)
        want = np.zeros((n, n), dtype=np.int64)
        for r in range(12):
            for c in range(12):
                want[truth.cells[r, c], pred.cells[r, c]] += 1
        assert np.array_equal(cm.counts, want)


# (Pre, Rec, printed F1) triples transcribed from the published comparison
# tables; each row must reproduce its F1 from the formula to +-0.001.
PUBLISHED_PRF_ROWS = [
    (0.801, 0.815, 0.808),
    (0.856, 0.651, 0.740),
    (0.853, 0.936, 0.893),
    (0.943, 0.936, 0.939),
    (0.926, 0.857, 0.890),
    (0.827, 0.867, 0.847),
    (0.158, 0.805, 0.264),
    (0.225, 0.810, 0.352),
    (0.814, 0.830, 0.822),
    (0.941, 0.950, 0.945),
]


class TestPerClassPrf:
    @pytest.mark.parametrize("pre,rec,f1", PUBLISHED_PRF_ROWS)
    def test_published_f1_rows(self, pre, rec, f1):
        assert f1_from_pre_rec(pre, rec) == pytest.approx(f1, abs=1e-3)

    def test_perfect_class(self):
        cm = ConfusionMatrix(np.diag([3, 4]))
        assert per_class_prf(cm, 0) == (1.0, 1.0, 1.0)

    def test_zero_over_zero_convention(self):
        cm = ConfusionMatrix(np.array([[5, 0], [0, 0]]))
        assert per_class_prf(cm, 1) == (0.0, 0.0, 0.0)

    def test_counts_against_hand_example(self):
        counts = np.array([[8, 2], [1, 9]])
        cm = ConfusionMatrix(counts)
        pre, rec, f1 = per_class_prf(cm, 0)
        assert pre == pytest.approx(8 / 9)
        assert rec == pytest.approx(8 / 10)
        assert f1 == pytest.approx(2 * (8 / 9) * 0.8 / (8 / 9 + 0.8))


class TestOverallAccuracy:
    def test_diagonal_is_one(self):
        assert overall_accuracy(ConfusionMatrix(np.diag([2, 3, 4]))) == 1.0

    def test_zero_diagonal(self):
        cm = ConfusionMatrix(np.array([[0, 3], [4, 0]]))
        assert overall_accuracy(cm) == 0.0

    def test_random_vs_direct_count(self):
        rng = np.random.default_rng(4)
        counts = rng.integers(0, 50, (4, 4))
        cm = ConfusionMatrix(counts)
        assert overall_accuracy(cm) == pytest.approx(np.trace(counts) / counts.sum())


class TestKappa:
    def test_perfect_two_class(self):
        assert kappa(ConfusionMatrix(np.diag([10, 15]))) == pytest.approx(1.0)

    def test_chance_level_is_exactly_zero(self):
        assert kappa(ConfusionMatrix(np.array([[25, 25], [25, 25]]))) == 0.0

    def test_degenerate_single_category(self):
        cm = ConfusionMatrix(np.array([[7, 0], [0, 0]]))
        assert kappa(cm) == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_multiclass_matches_textbook_oracle(self, seed):
        rng = np.random.default_rng(seed)
        counts = rng.integers(1, 100, (7, 7))
        cm = ConfusionMatrix(counts)
        assert kappa(cm) == pytest.approx(textbook_kappa(counts), abs=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_two_class_matches_published_form(self, seed):
        rng = np.random.default_rng(100 + seed)
        tp, fn, fp, tn = rng.integers(1, 500, 4)
        cm = ConfusionMatrix(np.array([[tp, fn], [fp, tn]]))
        # Matrix rows are truth: row 0 = positives (TP, FN), row 1 = (FP, TN).
        assert kappa(cm) == pytest.approx(binary_kappa_from_counts(tp, fn, fp, tn), abs=1e-12)

    def test_upper_bound(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            counts = rng.integers(0, 30, (3, 3)) + np.eye(3, dtype=np.int64)
            assert kappa(ConfusionMatrix(counts)) <= 1.0 + 1e-12


class TestMiou:
    def test_diagonal_is_one(self):
        assert miou(ConfusionMatrix(np.diag([5, 5, 5]))) == 1.0

    def test_partial_class(self):
        # One class with TP=3, FP=1, FN=1; the other perfect.
        counts = np.array([[3, 1], [1, 20]])
        got = miou(ConfusionMatrix(counts))
        assert got == pytest.approx(np.mean([3 / 5, 20 / 22]))

    def test_absent_class_excluded(self):
        counts = np.diag([5, 0, 7])
        assert miou(ConfusionMatrix(counts)) == 1.0

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_per_class_oracle(self, seed):
        rng = np.random.default_rng(seed)
        counts = rng.integers(0, 40, (5, 5))
        cm = ConfusionMatrix(counts)
        ious = []
        for k in range(5):
            tp = counts[k, k]
            fp = counts[:, k].sum() - tp
            fn = counts[k, :].sum() - tp
            if tp + fp + fn > 0:
                ious.append(tp / (tp + fp + fn))
        assert miou(cm) == pytest.approx(np.mean(ious))


class TestOverallReport:
    def test_diagonal_all_ones(self):
        report = overall_report(ConfusionMatrix(np.diag([4, 4, 4])))
        overall = report["overall"]
        assert all(overall[k] == pytest.approx(1.0) for k in ("precision", "recall", "f1", "kappa", "oa", "miou"))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(7)
        counts = rng.integers(0, 60, (4, 4))
        perm = rng.permutation(4)
        permuted = counts[np.ix_(perm, perm)]
        a = overall_report(ConfusionMatrix(counts))["overall"]
        b = overall_report(ConfusionMatrix(permuted))["overall"]
        for key in a:
            assert a[key] == pytest.approx(b[key], abs=1e-12)

    def test_consistent_with_individual_metrics(self):
        rng = np.random.default_rng(8)
        counts = rng.integers(0, 60, (4, 4))
        cm = ConfusionMatrix(counts)
        report = overall_report(cm)
        pres = [per_class_prf(cm, k)[0] for k in range(4)]
        assert report["overall"]["precision"] == pytest.approx(np.mean(pres))
        assert report["overall"]["kappa"] == pytest.approx(kappa(cm))
        assert report["overall"]["oa"] == pytest.approx(overall_accuracy(cm))
        assert report["overall"]["miou"] == pytest.approx(miou(cm))

    def test_metric_ranges(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            counts = rng.integers(0, 30, (3, 3)) + 1
            overall = overall_report(ConfusionMatrix(counts))["overall"]
            for key in ("precision", "recall", "f1", "oa", "miou"):
                assert 0.0 <= overall[key] <= 1.0
            assert overall["kappa"] <= 1.0
