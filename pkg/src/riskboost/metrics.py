"""ROC/PR curves, threshold metrics and confusion-matrix accounting.

Curves are evaluated at every distinct score, highest first, with tied
scores grouped into a single threshold. A sample is predicted positive when
its score is ``>=`` the threshold.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import MetricsError

DEFAULT_THRESHOLD = 0.5


def _check(scores, labels, need_both=True):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise MetricsError(f"{scores.size} scores for {labels.size} labels")
    if not np.all((labels == 0) | (labels == 1)):
        raise MetricsError("labels must be 0/1")
    if not np.all(np.isfinite(scores)):
        raise MetricsError("scores must be finite")
    if need_both and (labels.sum() == 0 or labels.sum() == labels.size):
        raise MetricsError("both classes must be present")
    return scores, labels.astype(np.int64)


def _threshold_counts(scores, labels):
    """Cumulative (tp, fp) at each distinct score, descending, and the thresholds."""
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    # last position of every run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    return tp[ends], fp[ends], s[ends]


def roc_curve(scores, labels) -> np.ndarray:
    """(FPR, TPR) points from (0,0) to (1,1)."""
    scores, labels = _check(scores, labels)
    tp, fp, _ = _threshold_counts(scores, labels)
    P, N = labels.sum(), labels.size - labels.sum()
    pts = np.empty((tp.size + 1, 2))
    pts[0] = 0.0
    pts[1:, 0] = fp / N
    pts[1:, 1] = tp / P
    return pts


def auc_roc(scores, labels) -> float:
    scores, labels = _check(scores, labels)
    tp, fp, _ = _threshold_counts(scores, labels)
    P, N = int(labels.sum()), int(labels.size - labels.sum())
    tp = np.r_[0, tp]
    fp = np.r_[0, fp]
    # trapezoid areas in integer units of 1/(2PN); exact until the final division
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    return twice_area / (2 * P * N)


def pr_curve(scores, labels) -> np.ndarray:
    """(recall, precision) points, starting from (0, 1)."""
    scores, labels = _check(scores, labels)
    tp, fp, _ = _threshold_counts(scores, labels)
    P = labels.sum()
    pts = np.empty((tp.size + 1, 2))
    pts[0] = (0.0, 1.0)
    pts[1:, 0] = tp / P
    pts[1:, 1] = tp / (tp + fp)
    return pts


def step_average_precision(scores, labels) -> float:
    """Sum over thresholds of (R_n - R_{n-1}) * P_n; needs at least one positive."""
    scores, labels = _check(scores, labels, need_both=False)
    P = int(labels.sum())
    if P == 0:
        raise MetricsError("average precision is undefined without positive labels")
    tp, fp, _ = _threshold_counts(scores, labels)
    precision = tp / (tp + fp)
    d_tp = np.diff(np.r_[0, tp])
    return float(np.sum(d_tp * precision) / P)


def auc_pr(scores, labels) -> float:
    _check(scores, labels)
    return step_average_precision(scores, labels)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        return f1_score(self.precision, self.recall)

    def to_dict(self) -> dict:
        return asdict(self)


def f1_score(precision: float, recall: float) -> float:
    d = precision + recall
    return 2.0 * precision * recall / d if d > 0 else 0.0


def confusion_at(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> ConfusionMatrix:
    scores, labels = _check(scores, labels, need_both=False)
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionMatrix(
        tp=int(np.sum(pred & pos)),
        fp=int(np.sum(pred & ~pos)),
        tn=int(np.sum(~pred & ~pos)),
        fn=int(np.sum(~pred & pos)),
        threshold=float(threshold),
    )


@dataclass
class EvalReport:
    auc_roc: float
    auc_pr: float
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: ConfusionMatrix
    roc_points: np.ndarray
    pr_points: np.ndarray
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "auc_roc": self.auc_roc,
            "auc_pr": self.auc_pr,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": self.confusion.to_dict(),
            "score_scale": "probability",
            "notes": list(self.notes),
        }


def summarize(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> EvalReport:
    scores, labels = _check(scores, labels)
    cm = confusion_at(scores, labels, threshold)
    return EvalReport(
        auc_roc=auc_roc(scores, labels),
        auc_pr=auc_pr(scores, labels),
        accuracy=cm.accuracy,
        precision=cm.precision,
        recall=cm.recall,
        f1=cm.f1,
        confusion=cm,
        roc_points=roc_curve(scores, labels),
        pr_points=pr_curve(scores, labels),
    )


def crosscheck_reported(tp: int, fp: int, tn: int, fn: int,
                        reported_precision: float, reported_recall: float,
                        decimals: int = 3) -> dict:
    """Compare metrics implied by a published confusion matrix with published precision/recall.

    Reconstructs the (tp, fp, fn) counts implied by the reported precision and
    recall at the same number of positives, and reports both derivations
    side by side instead of reconciling them.
    """
    cm = ConfusionMatrix(tp, fp, tn, fn, threshold=float("nan"))
    n_pos = tp + fn
    implied_tp = int(round(reported_recall * n_pos))
    implied_fp = int(round(implied_tp / reported_precision - implied_tp)) if reported_precision > 0 else 0
    from_matrix = {
        "accuracy": cm.accuracy,
        "precision": cm.precision,
        "recall": cm.recall,
        "f1": cm.f1,
    }
    from_reported = {
        "precision": reported_precision,
        "recall": reported_recall,
        "f1": f1_score(reported_precision, reported_recall),
        "implied_tp": implied_tp,
        "implied_fp": implied_fp,
        "implied_fn": n_pos - implied_tp,
    }
    consistent = (
        round(cm.precision, decimals) == round(reported_precision, decimals)
        and round(cm.recall, decimals) == round(reported_recall, decimals)
    )
    notes = []
    if not consistent:
        notes.append(
            f"confusion matrix gives TP={tp}, FN={fn} (precision {cm.precision:.3f}, recall {cm.recall:.3f}); "
            f"reported precision/recall imply TP={implied_tp}, FP={implied_fp}, FN={n_pos - implied_tp}"
        )
    return {
        "from_confusion_matrix": from_matrix,
        "from_reported_rates": from_reported,
        "consistent": consistent,
        "notes": notes,
    }
