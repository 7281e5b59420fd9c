"""Open-set evaluation metrics.

Conventions: ``n_known`` known classes use ids ``0..n_known-1`` and the u.u.
truth label is ``n_known``. Metrics that are undefined on an empty stratum
return ``None`` rather than 0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


def openness(n_train_classes: int, n_test_classes: int, n_target_classes: int) -> float:
    """``1 - sqrt(2*train / (test + target))``, clamped at 0."""
    for v in (n_train_classes, n_test_classes, n_target_classes):
        if v < 1:
            raise ValueError("class counts must be >= 1")
    ratio = 2.0 * n_train_classes / (n_test_classes + n_target_classes)
    if ratio > 1.0:
        warnings.warn(f"openness radicand {ratio:.4f} > 1; clamping to 0", RuntimeWarning)
        return 0.0
    return 1.0 - math.sqrt(ratio)


def confusion_matrix(true_labels, predicted_labels, n_classes: int) -> np.ndarray:
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(predicted_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise ValueError("label vectors differ in length")
    if t.size and (max(t.max(), p.max()) >= n_classes or min(t.min(), p.min()) < 0):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def classwise_f(cm: np.ndarray) -> np.ndarray:
    tp = np.diag(cm).astype(float)
    pred = cm.sum(axis=0).astype(float)
    true = cm.sum(axis=1).astype(float)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f_measure(true_labels, predicted_labels, n_classes_incl_uu: int) -> float:
    """Unweighted mean of per-class F1 over the whole label space (u.u. included)."""
    if len(true_labels) == 0:
        raise ValueError("empty input")
    return macro_f_from_confusion(confusion_matrix(true_labels, predicted_labels, n_classes_incl_uu))


def macro_f_from_confusion(cm: np.ndarray) -> float:
    return float(classwise_f(cm).mean())


def classification_accuracy(true_labels, predicted_labels, n_known: int) -> float | None:
    """Accuracy on rows whose true label is a known class."""
    t = np.asarray(true_labels)
    p = np.asarray(predicted_labels)
    mask = t < n_known
    if not mask.any():
        return None
    return float(np.mean(p[mask] == t[mask]))


def detection_accuracy(true_labels, predicted_labels, n_known: int) -> float | None:
    """Fraction of true u.u. rows predicted as the u.u. label."""
    t = np.asarray(true_labels)
    p = np.asarray(predicted_labels)
    mask = t == n_known
    if not mask.any():
        return None
    return float(np.mean(p[mask] == n_known))


def accuracies_from_confusion(cm: np.ndarray) -> tuple[float | None, float | None]:
    n_known = cm.shape[0] - 1
    known_total = cm[:n_known].sum()
    uu_total = cm[n_known].sum()
    cls = float(np.trace(cm[:n_known, :n_known]) / known_total) if known_total else None
    det = float(cm[n_known, n_known] / uu_total) if uu_total else None
    return cls, det


def auroc(scores, is_uu) -> float:
    """Probability that a random u.u. row outscores a random known row (ties count 1/2)."""
    s = np.asarray(scores, dtype=float)
    pos = np.asarray(is_uu, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both u.u. and known rows")
    ranks = rankdata(s)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class EvalReport:
    openness: float
    macro_f: float
    classification_acc: float | None
    detection_acc: float | None
    auroc: float | None
    overall_acc: float
    confusion: np.ndarray

    CSV_FIELDS = ("openness", "macro_f", "classification_acc", "detection_acc", "auroc", "overall_acc")

    def row(self) -> dict:
        d = asdict(self)
        d.pop("confusion")
        return d


def evaluate(
    true_labels,
    predicted_labels,
    n_known: int,
    uu_scores=None,
    openness_value: float = 0.0,
) -> EvalReport:
    """Build an :class:`EvalReport`; ``uu_scores`` enables AUROC when both strata exist."""
    t = np.asarray(true_labels)
    cm = confusion_matrix(t, predicted_labels, n_known + 1)
    cls, det = accuracies_from_confusion(cm)
    roc = None
    if uu_scores is not None and 0 < np.sum(t == n_known) < t.size:
        roc = auroc(uu_scores, t == n_known)
    return EvalReport(
        openness=openness_value,
        macro_f=macro_f_from_confusion(cm),
        classification_acc=cls,
        detection_acc=det,
        auroc=roc,
        overall_acc=float(np.trace(cm) / cm.sum()),
        confusion=cm,
    )
