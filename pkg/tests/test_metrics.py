"""Confusion matrix, accuracy, ROC/AUC exactness, multi-label accuracy."""

import numpy as np
import pytest

import oracles
from xdx.labels import CHEST_CONDITIONS
from xdx.metrics import (
    ConfusionMatrix,
    accuracy,
    auc_table,
    confusion_matrix,
    multilabel_mean_accuracy,
    roc_curve,
)


# -- confusion matrix -----------------------------------------------------------


def test_perfect_predictions_are_diagonal():
    labels = ["a", "b", "c", "a", "b"]
    cm = confusion_matrix(labels, labels, ["a", "b", "c"])
    assert np.array_equal(cm.counts, np.diag([2, 2, 1]))


def test_reference_binary_layout():
    # Rows actual, columns predicted: (4712, 5) for radiographs,
    # (72, 4928) for the photographs.
    actual = ["xray"] * 4717 + ["other"] * 5000
    predicted = ["xray"] * 4712 + ["other"] * 5 + ["xray"] * 72 + ["other"] * 4928
    cm = confusion_matrix(actual, predicted, ["xray", "other"])
    assert cm.counts[0].tolist() == [4712, 5]
    assert cm.counts[1].tolist() == [72, 4928]
    assert cm.total == 9717


def test_random_counts_match_tally_oracle():
    rng = np.random.default_rng(0)
    names = ["a", "b", "c"]
    for _ in range(30):
        actual = rng.choice(names, size=40).tolist()
        predicted = rng.choice(names, size=40).tolist()
        cm = confusion_matrix(actual, predicted, names)
        for i, ai in enumerate(names):
            for j, pj in enumerate(names):
                want = sum(1 for a, p in zip(actual, predicted) if a == ai and p == pj)
                assert cm.counts[i, j] == want
        assert cm.counts.sum() == 40
        assert np.all(cm.counts >= 0)
        # row sums equal per-class actual counts
        for i, ai in enumerate(names):
            assert cm.counts[i].sum() == actual.count(ai)


def test_unknown_label_rejected():
    with pytest.raises(ValueError, match="unknown actual"):
        confusion_matrix(["z"], ["a"], ["a", "b"])


def test_accuracy_values():
    cm = confusion_matrix(["a", "a", "b"], ["a", "a", "b"], ["a", "b"])
    assert accuracy(cm) == 1.0
    cm2 = confusion_matrix(["a", "b"], ["b", "a"], ["a", "b"])
    assert accuracy(cm2) == 0.0
    with pytest.raises(ValueError, match="empty"):
        accuracy(ConfusionMatrix(["a"], np.zeros((1, 1), dtype=np.int64)))


def test_reference_counts_imply_0_99208():
    cm = ConfusionMatrix(["xray", "other"], np.array([[4712, 5], [72, 4928]]))
    assert accuracy(cm) == pytest.approx(0.99208, abs=1e-5)


# -- ROC / AUC ----------------------------------------------------------------------


def test_perfect_separation_auc_one():
    curve = roc_curve([0.9, 0.1], [1, 0])
    assert curve.auc == 1.0
    assert curve.points[0] == (0.0, 0.0)
    assert curve.points[-1] == (1.0, 1.0)


def test_constant_scores_auc_half():
    curve = roc_curve([0.4, 0.4, 0.4, 0.4], [1, 0, 1, 0])
    assert curve.auc == 0.5


def test_single_class_rejected():
    with pytest.raises(ValueError, match="positive and one negative"):
        roc_curve([0.1, 0.9], [1, 1])


def test_curve_monotone_and_anchored():
    rng = np.random.default_rng(1)
    for _ in range(50):
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            continue
        scores = np.round(rng.uniform(size=n), 1)  # coarse grid forces ties
        curve = roc_curve(scores, labels)
        fprs = [p[0] for p in curve.points]
        tprs = [p[1] for p in curve.points]
        assert curve.points[0] == (0.0, 0.0)
        assert curve.points[-1] == (1.0, 1.0)
        assert all(b >= a for a, b in zip(fprs, fprs[1:]))
        assert all(b >= a for a, b in zip(tprs, tprs[1:]))


def test_trapezoid_equals_mann_whitney_exactly():
    rng = np.random.default_rng(2)
    for _ in range(300):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            continue
        if rng.uniform() < 0.5:
            scores = rng.choice([0.1, 0.25, 0.5, 0.75], size=n)  # heavy ties
        else:
            scores = rng.uniform(size=n)
        got = roc_curve(scores, labels).auc
        want = oracles.mann_whitney_auc(scores.tolist(), labels.tolist())
        assert got == want  # exact equality, not approximate


def test_score_reversal_flips_auc():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(2, 40))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            continue
        scores = rng.permutation(np.linspace(0.0, 1.0, n))  # tie-free
        a = roc_curve(scores, labels).auc
        b = roc_curve(-scores, labels).auc
        assert a + b == pytest.approx(1.0, abs=1e-12)


# -- multi-label accuracy --------------------------------------------------------------


def test_multilabel_all_correct():
    probs = np.ones((5, 14))
    targets = np.ones((5, 14))
    assert multilabel_mean_accuracy(probs, targets) == 1.0


def test_multilabel_at_threshold_predicts_positive():
    probs = np.full((4, 3), 0.5)
    targets = np.array([[1, 0, 1], [1, 1, 0], [0, 0, 1], [1, 0, 0]])
    # >= convention: everything predicted positive, accuracy = prevalence.
    assert multilabel_mean_accuracy(probs, targets) == pytest.approx(targets.mean())


def test_multilabel_matches_counting_oracle():
    rng = np.random.default_rng(4)
    probs = rng.uniform(size=(5, 14))
    targets = rng.integers(0, 2, size=(5, 14))
    got = multilabel_mean_accuracy(probs, targets)
    per_label = []
    for j in range(14):
        correct = sum(
            1 for i in range(5) if (probs[i, j] >= 0.5) == bool(targets[i, j])
        )
        per_label.append(correct / 5)
    assert got == pytest.approx(np.mean(per_label), abs=1e-12)


# -- AUC table ------------------------------------------------------------------------


def test_auc_table_reference_footer():
    table = auc_table({"Atelectasis": 0.81, "Cardiomegaly": 0.91, "Hernia": 0.99})
    text = table.to_text()
    assert "Atelectasis" in text and "0.81" in text
    assert "Hernia" in text and "0.99" in text
    assert "Reference scores" in text


def test_auc_table_empty():
    assert auc_table({}).rows == []


def test_auc_table_row_order_is_fixed():
    table = auc_table({name: 0.5 for name in CHEST_CONDITIONS})
    assert [name for name, _ in table.rows] == list(CHEST_CONDITIONS)


def test_auc_table_rejects_unknown_condition():
    with pytest.raises(ValueError, match="unknown condition"):
        auc_table({"Scoliosis": 0.5})
