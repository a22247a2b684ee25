"""Detection metrics: confusion-count ratios, ROC area, TNR at a fixed TPR.

Degenerate denominators resolve to 0 by convention, so empty classes produce
defined values instead of NaN.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import LabelError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def counts_from_predictions(actual_positive, predicted_positive) -> ConfusionCounts:
    actual = np.asarray(actual_positive, dtype=bool)
    predicted = np.asarray(predicted_positive, dtype=bool)
    if actual.shape != predicted.shape:
        raise LabelError("prediction and truth vectors differ in length")
    return ConfusionCounts(
        tp=int(np.sum(actual & predicted)),
        tn=int(np.sum(~actual & ~predicted)),
        fp=int(np.sum(~actual & predicted)),
        fn=int(np.sum(actual & ~predicted)),
    )


def _ratio(num: float, den: float) -> float:
    return float(num / den) if den else 0.0


def precision(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fp)


def accuracy(c: ConfusionCounts) -> float:
    return _ratio(c.tp + c.tn, c.total)


def true_positive_rate(c: ConfusionCounts) -> float:
    return _ratio(c.tp, c.tp + c.fn)


def false_positive_rate(c: ConfusionCounts) -> float:
    return _ratio(c.fp, c.fp + c.tn)


def f1_score(c: ConfusionCounts) -> float:
    p, r = precision(c), true_positive_rate(c)
    return _ratio(2.0 * p * r, p + r)


def compute_metrics(c: ConfusionCounts) -> dict:
    """The five threshold metrics plus the raw counts they derive from."""
    return {
        "counts": {"tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn},
        "precision": precision(c),
        "accuracy": accuracy(c),
        "tpr": true_positive_rate(c),
        "fpr": false_positive_rate(c),
        "f1": f1_score(c),
    }


def _score_arrays(scores, positives):
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    if scores.shape != positives.shape or scores.ndim != 1:
        raise LabelError("scores and class flags must be 1-D and equal length")
    if positives.all() or not positives.any():
        raise LabelError("ranking metrics need both classes present")
    return scores, positives


def auroc(scores, positives) -> float:
    """Area under the ROC curve via average ranks (Mann-Whitney form).

    Ties contribute 1/2, which matches trapezoidal integration of the
    empirical ROC.
    """
    scores, positives = _score_arrays(scores, positives)
    n_pos = int(positives.sum())
    n_neg = scores.size - n_pos
    ranks = rankdata(scores, method="average")
    u = ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def tnr_at_tpr(scores, positives, target_tpr: float = 0.85) -> float:
    """TNR at the most selective threshold that still reaches the target TPR.

    The decision rule is score >= threshold -> positive. Candidate thresholds
    are the observed scores, scanned from high to low; the first (largest) one
    with TPR >= target is used. All-equal scores therefore give TNR 0 at the
    all-positive threshold.
    """
    scores, positives = _score_arrays(scores, positives)
    pos_scores = scores[positives]
    neg_scores = scores[~positives]
    for threshold in np.unique(scores)[::-1]:
        tpr = float(np.mean(pos_scores >= threshold))
        if tpr >= target_tpr:
            return float(np.mean(neg_scores < threshold))
    return 0.0
