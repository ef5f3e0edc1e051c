import numpy as np
import pytest

from hsiclass import (
    ConfusionMatrix,
    DataError,
    LabelMap,
    ProbabilityTensor,
    classify_argmax,
    compute_metrics,
    confusion_from_predictions,
    metrics_from_confusion,
    misclassification_heatmap,
)


def labeled(grid) -> LabelMap:
    grid = np.asarray(grid)
    return LabelMap(grid.shape[0], grid.shape[1], grid)


def all_testing(labels: LabelMap) -> np.ndarray:
    rows, cols = np.nonzero(labels.labels > 0)
    return np.column_stack([rows, cols, labels.labels[rows, cols]])


def test_argmax_one_hot():
    t = ProbabilityTensor(1, 1, 4, np.array([0.0, 0.0, 1.0, 0.0]).reshape(4, 1, 1))
    assert classify_argmax(t).labels[0, 0] == 3


def test_argmax_tie_takes_smallest_class():
    t = ProbabilityTensor(1, 1, 2, np.array([0.5, 0.5]).reshape(2, 1, 1))
    assert classify_argmax(t).labels[0, 0] == 1


def test_argmax_matches_scalar_loop():
    rng = np.random.default_rng(0)
    vals = rng.uniform(size=(4, 8, 8))
    t = ProbabilityTensor(8, 8, 4, vals)
    out = classify_argmax(t)
    for i in range(8):
        for j in range(8):
            best, best_k = -np.inf, 0
            for k in range(4):
                if vals[k, i, j] > best:
                    best, best_k = vals[k, i, j], k
            assert out.labels[i, j] == best_k + 1


def test_perfect_prediction_metrics():
    truth = labeled([[1, 2], [2, 1]])
    rep = compute_metrics(truth, truth, all_testing(truth))
    assert rep.oa == 1.0 and rep.aa == 1.0 and rep.kappa == 1.0
    assert np.array_equal(rep.per_class_accuracy, [1.0, 1.0])


def test_hand_confusion_matrix_is_exact():
    rep = metrics_from_confusion(ConfusionMatrix([[40, 10], [20, 30]]))
    assert rep.oa == 0.70
    assert rep.aa == 0.70
    assert rep.kappa == 0.40
    assert rep.per_class_accuracy[0] == 0.8
    assert rep.per_class_accuracy[1] == 0.6


def test_constant_prediction_on_balanced_truth_has_zero_kappa():
    rep = metrics_from_confusion(ConfusionMatrix([[50, 0], [50, 0]]))
    assert rep.oa == 0.5
    assert rep.kappa == 0.0


def test_metrics_scored_on_testing_pixels_only():
    truth = labeled([[1, 1], [2, 2]])
    pred = labeled([[1, 2], [1, 2]])
    testing = np.array([[0, 0, 1], [1, 1, 2]])  # both of these are correct
    rep = compute_metrics(pred, truth, testing)
    assert rep.oa == 1.0
    assert rep.confusion.total == 2


def test_empty_testing_set_rejected():
    truth = labeled([[1]])
    with pytest.raises(DataError, match="empty testing"):
        compute_metrics(truth, truth, np.empty((0, 3), dtype=np.int64))


def test_aa_skips_classes_without_test_pixels():
    # class 2 never appears among the testing pixels
    rep = metrics_from_confusion(ConfusionMatrix([[8, 0, 2], [0, 0, 0], [0, 0, 10]]))
    assert rep.aa == (0.8 + 1.0) / 2
    assert np.isnan(rep.per_class_accuracy[1])


def test_heatmap_counts():
    truth = labeled([[1, 2], [1, 2]])
    perfect = truth
    wrong = labeled([[2, 2], [1, 2]])
    testing = all_testing(truth)

    counts, tested = misclassification_heatmap([perfect] * 10, truth, [testing] * 10)
    assert not counts.any()
    assert tested.all()

    counts, _ = misclassification_heatmap([wrong], truth, [testing])
    assert counts[0, 0] == 1 and counts.sum() == 1

    # planted errors across three runs with differing testing sets
    t0 = np.array([[0, 0, 1]])
    t1 = np.array([[0, 0, 1], [1, 0, 1]])
    counts, tested = misclassification_heatmap([wrong, wrong, perfect], truth, [t0, t1, t1])
    assert counts[0, 0] == 2  # wrong in runs 1 and 2, not tested in run 3... tested twice
    assert counts[1, 0] == 0  # pixel correct in every run that tested it
    assert tested[0, 0] and tested[1, 0] and not tested[0, 1]


def test_argmax_invariant_under_increasing_transforms():
    rng = np.random.default_rng(1)
    vals = rng.normal(size=(5, 6, 7))
    base = classify_argmax(ProbabilityTensor(6, 7, 5, vals))
    for transform in (lambda x: 3.0 * x + 11.0, np.exp, lambda x: np.arctan(x) - 2.0):
        mapped = classify_argmax(ProbabilityTensor(6, 7, 5, transform(vals)))
        assert np.array_equal(mapped.labels, base.labels)


def test_heatmap_dimension_mismatch_rejected():
    truth = labeled([[1, 2], [1, 2]])
    small = labeled([[1]])
    with pytest.raises(DataError):
        misclassification_heatmap([small], truth, [np.array([[0, 0, 1]])])
