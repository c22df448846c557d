"""Region-level confusion metrics and ROC, tumor as the positive class."""
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidInputError

METRICS = ("accuracy", "sensitivity", "specificity", "f1", "auc")


def _ratio(num, den):
    return num / den if den else None


@dataclass
class FoldReport:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    sensitivity: float
    specificity: float
    f1: float
    auc: float
    roc: list = field(default_factory=list)

    @property
    def n_regions(self):
        return self.tp + self.fp + self.tn + self.fn

    def metric(self, name):
        return getattr(self, name)

    def to_dict(self):
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "n_regions": self.n_regions,
            **{m: self.metric(m) for m in METRICS},
            "roc": [list(pt) for pt in self.roc],
        }


def roc_curve(scores, labels):
    """ROC points ``(fpr, tpr, threshold)`` sweeping every distinct score.

    Starts at (0, 0) with threshold +inf and ends at (1, 1); tied scores move
    together. Returns an empty list when either class is absent.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return []
    points = [(0.0, 0.0, math.inf)]
    for thr in np.unique(scores)[::-1]:
        pred = scores >= thr
        tp = int(np.count_nonzero(pred & labels))
        fp = int(np.count_nonzero(pred & ~labels))
        points.append((fp / n_neg, tp / n_pos, float(thr)))
    return points


def auc_trapezoid(points):
    if not points:
        return None
    x = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points])
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2.0))


def compute_metrics(probabilities, labels, threshold=0.5):
    """FoldReport for region tumor probabilities against 0/1 ground truth.

    A metric whose denominator is zero is reported as ``None`` (undefined).
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    truth = np.asarray(labels).astype(np.int64)
    if probs.size == 0:
        raise InvalidInputError("no evaluated regions")
    if probs.shape != truth.shape:
        raise InvalidInputError(f"{probs.size} predictions for {truth.size} labels")
    pred = probs >= threshold
    pos = truth == 1
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    tn = int(np.count_nonzero(~pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    roc = roc_curve(probs, truth)
    return FoldReport(
        tp, fp, tn, fn,
        accuracy=(tp + tn) / (tp + fp + tn + fn),
        sensitivity=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        auc=auc_trapezoid(roc),
        roc=roc,
    )


def aggregate(values):
    """Mean and population std over the defined (non-None) values."""
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "std": None, "n": 0}
    arr = np.array(vals, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std()), "n": len(vals)}
