"""Tests for AUC and precision against explicit pair-counting oracles."""

import numpy as np
import pytest

from stackfed.errors import InputError, UndefinedMetricError
from stackfed.metrics import auc_binary, auc_macro_ovr, precision_per_class


def pair_auc(scores, labels):
    """O(n^2) oracle: fraction of (pos, neg) pairs ranked correctly, ties 0.5."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else (0.5 if p == q else 0.0)
    return wins / (pos.size * neg.size)


def macro_pair_auc(probs, labels):
    values = []
    for c in np.unique(labels):
        values.append(pair_auc(probs[:, c], (labels == c).astype(int)))
    return float(np.mean(values))


class TestAucBinary:
    def test_perfect_ranking(self):
        assert auc_binary(np.array([0.9, 0.8, 0.2, 0.1]), np.array([1, 1, 0, 0])) == 1.0

    def test_all_ties(self):
        assert auc_binary(np.full(6, 0.4), np.array([1, 0, 1, 0, 1, 0])) == 0.5

    def test_hand_example_pair_oracle(self):
        scores = np.array([0.1, 0.4, 0.35, 0.8])
        labels = np.array([0, 0, 1, 1])
        assert auc_binary(scores, labels) == pytest.approx(pair_auc(scores, labels), abs=1e-15)
        assert auc_binary(scores, labels) == pytest.approx(0.75, abs=1e-15)

    def test_matches_pair_oracle_including_ties(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(4, 40))
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            # quantized scores force ties
            scores = np.round(rng.random(n), 1)
            assert auc_binary(scores, labels) == pytest.approx(
                pair_auc(scores, labels), abs=1e-12
            )

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            auc_binary(np.array([0.1, 0.2]), np.array([1, 1]))

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.random(30)
        labels = rng.integers(0, 2, size=30)
        labels[:2] = [0, 1]
        base = auc_binary(scores, labels)
        assert auc_binary(np.exp(3 * scores), labels) == pytest.approx(base, abs=1e-12)
        assert auc_binary(2 * scores - 7, labels) == pytest.approx(base, abs=1e-12)

    def test_complement_identity(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            scores = np.round(rng.random(25), 1)
            labels = rng.integers(0, 2, size=25)
            labels[:2] = [0, 1]
            total = auc_binary(scores, labels) + auc_binary(scores, 1 - labels)
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_rejects_non_binary_labels(self):
        with pytest.raises(InputError):
            auc_binary(np.array([0.1, 0.2]), np.array([0, 2]))


class TestAucMacroOvr:
    def test_binary_reduction(self):
        rng = np.random.default_rng(3)
        p1 = rng.random(40)
        probs = np.column_stack([1 - p1, p1])
        labels = rng.integers(0, 2, size=40)
        labels[:2] = [0, 1]
        assert auc_macro_ovr(probs, labels) == pytest.approx(
            auc_binary(p1, labels), abs=1e-12
        )

    def test_one_hot_perfect(self):
        labels = np.array([0, 1, 2, 1, 0, 2])
        probs = np.eye(3)[labels]
        assert auc_macro_ovr(probs, labels) == 1.0

    def test_three_class_pair_oracle(self):
        rng = np.random.default_rng(4)
        probs = rng.random((20, 3))
        probs /= probs.sum(axis=1, keepdims=True)
        labels = rng.integers(0, 3, size=20)
        labels[:3] = [0, 1, 2]
        assert auc_macro_ovr(probs, labels) == pytest.approx(
            macro_pair_auc(probs, labels), abs=1e-12
        )

    def test_absent_class_skipped(self):
        # column 2 exists but class 2 never occurs; mean is over classes 0/1
        rng = np.random.default_rng(5)
        probs = rng.random((30, 3))
        labels = rng.integers(0, 2, size=30)
        labels[:2] = [0, 1]
        assert auc_macro_ovr(probs, labels) == pytest.approx(
            macro_pair_auc(probs, labels), abs=1e-12
        )

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            auc_macro_ovr(np.random.default_rng(6).random((5, 3)), np.zeros(5, dtype=int))

    def test_bounded(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            probs = rng.random((15, 4))
            labels = rng.integers(0, 4, size=15)
            if np.unique(labels).size < 2:
                continue
            assert 0.0 <= auc_macro_ovr(probs, labels) <= 1.0


class TestPrecisionPerClass:
    def test_perfect_predictions(self):
        labels = np.array([0, 1, 2, 0, 1, 2])
        np.testing.assert_array_equal(precision_per_class(labels, labels, 3), np.ones(3))

    def test_constant_predictor_counting(self):
        true = np.array([0, 0, 1, 1])
        pred = np.zeros(4, dtype=int)
        np.testing.assert_allclose(precision_per_class(pred, true, 2), [0.5, 0.0])

    def test_confusion_matrix_oracle(self):
        rng = np.random.default_rng(8)
        pred = rng.integers(0, 3, size=30)
        true = rng.integers(0, 3, size=30)
        expected = np.zeros(3)
        for c in range(3):
            tp = np.sum((pred == c) & (true == c))
            fp = np.sum((pred == c) & (true != c))
            expected[c] = tp / (tp + fp) if tp + fp > 0 else 0.0
        np.testing.assert_allclose(precision_per_class(pred, true, 3), expected, atol=1e-15)

    def test_entries_bounded(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            pred = rng.integers(0, 4, size=25)
            true = rng.integers(0, 4, size=25)
            p = precision_per_class(pred, true, 4)
            assert np.all((p >= 0.0) & (p <= 1.0))

    def test_rejects_out_of_range(self):
        with pytest.raises(InputError):
            precision_per_class(np.array([0, 5]), np.array([0, 1]), 3)
