import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from omnedit import metrics
from omnedit.imgcore import ShapeMismatchError, l1_distance
from omnedit.metrics import EvalReport, UndefinedMetricError

from conftest import gray


def rank_count_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


class TestF1:
    def test_perfect(self):
        assert metrics.f1_at_threshold([1, 0, 1, 0], [1, 0, 1, 0], 0.5) == 1.0

    def test_all_wrong(self):
        assert metrics.f1_at_threshold([0, 1, 0, 1], [1, 0, 1, 0], 0.5) == 0.0

    def test_two_tp_one_fp_one_fn(self):
        scores = [0.9, 0.8, 0.7, 0.1, 0.0]
        labels = [1, 1, 0, 1, 0]
        p, r, _ = metrics.precision_recall(scores, labels, 0.5)
        assert (p, r) == (pytest.approx(2 / 3), pytest.approx(2 / 3))
        assert metrics.f1_at_threshold(scores, labels, 0.5) == pytest.approx(2 / 3)

    def test_empty_convention(self):
        assert metrics.f1_at_threshold([0.1, 0.2], [0, 0], 0.5) == 1.0

    def test_multilabel_is_pooled(self):
        scores = np.array([[0.9, 0.1], [0.2, 0.8]])
        labels = np.array([[1, 1], [0, 1]])
        assert metrics.f1_at_threshold(scores, labels, 0.5) == pytest.approx(0.8)

    def test_threshold_is_inclusive(self):
        assert metrics.f1_at_threshold([0.25], [1], 0.25) == 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=1, max_size=30), st.floats(0.01, 0.99))
    def test_harmonic_mean_and_range(self, pairs, th):
        s, y = zip(*pairs)
        f1 = metrics.f1_at_threshold(s, y, th)
        p, r, (tp, fp, fn) = metrics.precision_recall(s, y, th)
        assert 0 <= f1 <= 1
        if tp + fp + fn:
            expected = 0 if p + r == 0 else 2 * p * r / (p + r)
            assert f1 == pytest.approx(expected)


class TestAuc:
    def test_perfect(self):
        assert metrics.roc_auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0

    def test_inverted(self):
        assert metrics.roc_auc([0.1, 0.2, 0.9], [1, 1, 0]) == 0.0

    def test_all_ties(self):
        assert metrics.roc_auc([0.5] * 6, [1, 0, 1, 0, 0, 1]) == 0.5

    def test_example(self):
        assert metrics.roc_auc([0.9, 0.4, 0.6, 0.1], [1, 0, 1, 0]) == 1.0

    def test_single_class_raises(self):
        with pytest.raises(UndefinedMetricError):
            metrics.roc_auc([0.2, 0.4], [1, 1])

    def test_matches_rank_count(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 40))
            s = np.round(rng.random(n), 1)  # plenty of ties
            y = rng.random(n) < 0.5
            y[0], y[1] = True, False
            assert metrics.roc_auc(s, y) == pytest.approx(rank_count_auc(s, y), abs=1e-12)

    def test_invariant_under_monotone_transforms(self):
        rng = np.random.default_rng(3)
        transforms = [lambda s: s ** 3, np.exp, lambda s: 2 * s - 7, lambda s: np.log1p(s) + np.sqrt(s)]
        for i in range(100):
            n = int(rng.integers(4, 60))
            s = rng.random(n)
            y = rng.random(n) < 0.4
            y[:2] = [True, False]
            base = metrics.roc_auc(s, y)
            f = transforms[i % len(transforms)]
            assert metrics.roc_auc(f(s), y) == pytest.approx(base, abs=1e-12)


class TestIou:
    def test_identical(self):
        m = np.zeros((4, 4))
        m[1:3] = 1
        assert metrics.mask_iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((4, 4))
        a[:2] = 1
        assert metrics.mask_iou(a, 1 - a) == 0.0

    def test_half(self):
        a = np.zeros((4, 6))
        a[:, :3] = 1
        assert metrics.mask_iou(a, np.ones((4, 6))) == 0.5

    def test_both_empty(self):
        assert metrics.mask_iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0

    def test_soft_masks_binarized(self):
        a = np.full((2, 2), 0.6)
        b = np.full((2, 2), 0.9)
        assert metrics.mask_iou(a, b) == 1.0

    def test_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            metrics.mask_iou(np.zeros((2, 2)), np.zeros((3, 2)))

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, (2, 5, 5), elements=st.floats(0, 1)))
    def test_symmetric_and_bounded(self, ab):
        a, b = ab
        v = metrics.mask_iou(a, b)
        assert v == metrics.mask_iou(b, a) and 0 <= v <= 1
        assert metrics.mask_iou(a, a) == 1

    def test_grows_with_intersection(self):
        union = np.ones((4, 4))
        b = union.copy()
        prev = -1
        for k in range(1, 5):
            a = np.zeros((4, 4))
            a[:k] = 1
            v = metrics.mask_iou(a, b)
            assert v > prev
            prev = v


class TestDatasetL1:
    def test_identical(self):
        assert metrics.dataset_l1([(gray(0.3), gray(0.3))] * 3) == 0

    def test_mean_of_pairs(self):
        assert metrics.dataset_l1([(gray(0), gray(1)), (gray(0.2), gray(0.2))]) == pytest.approx(0.5)

    def test_skips_mismatch(self, caplog):
        mean, used, skipped = metrics.dataset_l1_detail([(gray(0, 4), gray(1, 5)), (gray(0), gray(0.5))])
        assert (mean, used, skipped) == (0.5, 1, 1)
        assert "skipped" in caplog.text

    def test_equals_arithmetic_mean(self, rng):
        pairs = [tuple(rng.random((2, 5, 7, 3))) for _ in range(20)]
        direct = sum(l1_distance(a, b) for a, b in pairs) / len(pairs)
        assert abs(metrics.dataset_l1(pairs) - direct) < 1e-12


class TestReport:
    def test_round_trip(self, tmp_path):
        rep = EvalReport(sample_count=3, l1=0.1, f1={0.15: 0.5, 0.2: 0.75}, roc_auc=0.9)
        rep.save(tmp_path / "r.json")
        back = EvalReport.load(tmp_path / "r.json")
        assert back.to_dict() == rep.to_dict()
        assert back.f1 == {"0.15": 0.5, "0.20": 0.75}
        assert back.averaging == "micro"

    def test_stable_text(self):
        a = EvalReport(sample_count=1, f1={0.3: 1.0, 0.15: 0.0})
        b = EvalReport(sample_count=1, f1={0.15: 0.0, 0.3: 1.0})
        assert a.dumps() == b.dumps()

    def test_version_checked(self):
        with pytest.raises(ValueError):
            EvalReport.from_dict({"version": 99})
