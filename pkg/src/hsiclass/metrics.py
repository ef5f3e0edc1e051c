"""Classification scoring: argmax maps, confusion matrices, OA/AA/kappa,
and per-pixel misclassification counts over repeated runs.

Accuracy figures are computed in exact rational arithmetic and converted
to float once at the end, so e.g. a [[40, 10], [20, 30]] confusion matrix
yields kappa 0.4 exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import ConfusionMatrix, DataError, LabelMap, ProbabilityTensor


@dataclass(frozen=True)
class MetricsReport:
    oa: float
    aa: float
    kappa: float
    per_class_accuracy: np.ndarray
    confusion: ConfusionMatrix


def classify_argmax(tensor: ProbabilityTensor) -> LabelMap:
    """Per-pixel argmax over classes; ties go to the smallest class index."""
    if not np.all(np.isfinite(tensor.values)):
        raise DataError("probability tensor contains non-finite values")
    labels = tensor.values.argmax(axis=0) + 1
    return LabelMap(tensor.height, tensor.width, labels, num_classes=tensor.num_classes)


def confusion_from_predictions(
    predicted: LabelMap, truth: LabelMap, testing: np.ndarray
) -> ConfusionMatrix:
    testing = np.asarray(testing, dtype=np.int64).reshape(-1, 3)
    c = max(truth.num_classes, predicted.num_classes)
    counts = np.zeros((c, c), dtype=np.int64)
    rows, cols = testing[:, 0], testing[:, 1]
    t = truth.labels[rows, cols]
    if np.any(t == 0):
        bad = testing[np.argmax(t == 0)]
        raise DataError(f"testing pixel ({bad[0]}, {bad[1]}) is unlabeled in the truth map")
    p = predicted.labels[rows, cols]
    np.add.at(counts, (t - 1, p - 1), 1)
    return ConfusionMatrix(counts)


def metrics_from_confusion(confusion: ConfusionMatrix) -> MetricsReport:
    counts = confusion.counts
    total = int(counts.sum())
    if total == 0:
        raise DataError("empty testing set: no pixels to score")
    c = confusion.num_classes
    correct = int(np.trace(counts))
    oa = Fraction(correct, total)

    row_tot = counts.sum(axis=1)
    col_tot = counts.sum(axis=0)
    recalls = []
    per_class = np.full(c, np.nan)
    for k in range(c):
        if row_tot[k] > 0:
            r = Fraction(int(counts[k, k]), int(row_tot[k]))
            recalls.append(r)
            per_class[k] = float(r)
    aa = sum(recalls, Fraction(0)) / len(recalls)

    pe = Fraction(int(np.dot(row_tot, col_tot)), total * total)
    if pe == 1:
        kappa = Fraction(1) if oa == 1 else Fraction(0)
    else:
        kappa = (oa - pe) / (1 - pe)
    return MetricsReport(
        oa=float(oa),
        aa=float(aa),
        kappa=float(kappa),
        per_class_accuracy=per_class,
        confusion=confusion,
    )


def compute_metrics(predicted: LabelMap, truth: LabelMap, testing: np.ndarray) -> MetricsReport:
    """OA/AA/kappa over the testing pixels only.

    AA averages per-class recall over classes that have at least one test
    pixel; kappa corrects OA by the marginal chance agreement.
    """
    return metrics_from_confusion(confusion_from_predictions(predicted, truth, testing))


def misclassification_heatmap(
    runs: list[LabelMap],
    truth: LabelMap,
    testing_sets: list[np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Count, per pixel, the runs in which it was tested and misclassified.

    Returns (counts, tested_mask); pixels never tested have count 0 and a
    False mask entry.
    """
    if len(runs) != len(testing_sets):
        raise DataError("one testing set per run is required")
    counts = np.zeros((truth.height, truth.width), dtype=np.int64)
    tested = np.zeros((truth.height, truth.width), dtype=bool)
    for pred, testing in zip(runs, testing_sets):
        if (pred.height, pred.width) != (truth.height, truth.width):
            raise DataError("prediction dimensions disagree with the truth map")
        testing = np.asarray(testing, dtype=np.int64).reshape(-1, 3)
        rows, cols = testing[:, 0], testing[:, 1]
        tested[rows, cols] = True
        wrong = pred.labels[rows, cols] != truth.labels[rows, cols]
        counts[rows[wrong], cols[wrong]] += 1
    return counts, tested
