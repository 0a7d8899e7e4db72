"""Support-recovery and binary-classification metrics.

Any ratio whose denominator is zero is reported as 0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class ConfusionCounts:
    TP: int
    FP: int
    TN: int
    FN: int

    def __post_init__(self):
        if min(self.TP, self.FP, self.TN, self.FN) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.TP + self.FP + self.TN + self.FN


@dataclass(frozen=True)
class MetricReport:
    SN: float = 0.0
    SP: float = 0.0
    ACC: float = 0.0
    F_measure: float = 0.0
    MCC: float = 0.0
    AUC: float = float("nan")
    selection_recall: float = float("nan")
    recovery_success: bool | None = None
    classification_error: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def _ratio(a: float, b: float) -> float:
    return a / b if b else 0.0


def metrics_from_counts(c: ConfusionCounts, auc: float = float("nan")) -> MetricReport:
    """Sensitivity, specificity, accuracy, the SN/SP harmonic mean, and MCC."""
    sn = _ratio(c.TP, c.TP + c.FN)
    sp = _ratio(c.TN, c.TN + c.FP)
    acc = _ratio(c.TP + c.TN, c.total)
    f = _ratio(2 * sn * sp, sn + sp)
    den = math.sqrt((c.TP + c.FP) * (c.TP + c.FN) * (c.TN + c.FP) * (c.TN + c.FN))
    mcc = _ratio(c.TP * c.TN - c.FP * c.FN, den)
    return MetricReport(SN=sn, SP=sp, ACC=acc, F_measure=f, MCC=mcc, AUC=auc)


def auc_score(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic (ties count half)."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).astype(bool).ravel()
    npos = int(labels.sum())
    nneg = labels.size - npos
    if npos == 0 or nneg == 0:
        return 0.0
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - npos * (npos + 1) / 2) / (npos * nneg))


def _offdiag(a):
    a = np.asarray(a)
    if a.ndim == 2 and a.shape[0] == a.shape[1]:
        return a[~np.eye(a.shape[0], dtype=bool)]
    return a.ravel()


def confusion_and_metrics(scores, truth, threshold: float = 0.0):
    """Edge-prediction quality of a weight matrix against a true adjacency.

    An edge is predicted where ``|score| > threshold`` and ranked by
    ``|score|`` for the AUC.  Square inputs have their diagonal excluded.

    Returns
    -------
    counts : ConfusionCounts
    report : MetricReport
    """
    s = np.abs(_offdiag(scores)).astype(float)
    t = _offdiag(truth).astype(bool)
    if s.shape != t.shape:
        raise ValueError("scores and truth shapes differ")
    pred = s > threshold
    counts = ConfusionCounts(
        TP=int(np.sum(pred & t)), FP=int(np.sum(pred & ~t)),
        TN=int(np.sum(~pred & ~t)), FN=int(np.sum(~pred & t)),
    )
    return counts, metrics_from_counts(counts, auc_score(s, t))


def selection_recall(w_star, w_true) -> float:
    """Fraction of the true support found in ``w_star``."""
    truth = np.asarray(w_true) != 0
    k = int(truth.sum())
    if k == 0:
        raise ValueError("true model has empty support")
    return float(np.sum((np.asarray(w_star) != 0) & truth) / k)


def recovery_success(w_star, w_true) -> bool:
    """Exact support match."""
    return bool(np.array_equal(np.asarray(w_star) != 0, np.asarray(w_true) != 0))


def classification_error(w, data) -> float:
    """Misclassification rate of ``sign(<X_i, w>)`` (zero counts as +1)."""
    pred = np.where(data.features @ w >= 0, 1.0, -1.0)
    return float(np.mean(pred != data.responses))
