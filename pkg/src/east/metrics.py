"""Multi-label evaluation: mAP, two-sided macro F1 and ROC-AUC."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DimensionMismatch, EmptyMask, NoPositives, SingleClass

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.4


@dataclass
class ClassMetrics:
    ap: float | None
    f1: float | None
    auc: float | None


@dataclass
class MetricsReport:
    mAP: float
    macro_f1: float
    roc_auc: float
    per_class: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mAP": self.mAP,
            "macro_f1": self.macro_f1,
            "roc_auc": self.roc_auc,
            "per_class": [vars(c) for c in self.per_class],
        }


def average_precision(scores, labels) -> float:
    """Mean over positives of precision at the positive's rank.

    Ranking is by descending score; equal scores keep their original order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise DimensionMismatch("scores and labels differ in length")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositives("average precision needs at least one positive")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order]
    ranks = np.flatnonzero(hits) + 1
    # extended precision so small rational cases round to the nearest double (5/6, not 5/6 - 1ulp)
    precisions = np.arange(1, n_pos + 1, dtype=np.longdouble) / ranks.astype(np.longdouble)
    return float(precisions.sum() / n_pos)


def roc_auc(scores, labels) -> float:
    """P(random positive outscores random negative), ties counting one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC-AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def class_f1(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Average of the F1 on positive labels and the F1 with polarity flipped."""
    pred = np.asarray(scores) > threshold
    truth = np.asarray(labels).astype(bool)
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    return 0.5 * (_f1(tp, fp, fn) + _f1(tn, fn, fp))


def _columns(scores, labels, mask):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    mask = np.ones_like(labels) if mask is None else np.asarray(mask)
    if scores.shape != labels.shape or mask.shape != labels.shape or scores.ndim != 2:
        raise DimensionMismatch("scores, labels and mask must be equal n x K arrays")
    for k in range(scores.shape[1]):
        keep = mask[:, k] > 0
        yield k, scores[keep, k], labels[keep, k]


def macro_f1(scores, labels, mask=None, threshold: float = DEFAULT_THRESHOLD) -> float:
    """Mean of :func:`class_f1` over classes with at least one observed label."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    values = []
    for k, s, y in _columns(scores, labels, mask):
        if s.size == 0:
            log.warning("class %d has no observed labels; skipped in macro F1", k)
            continue
        values.append(class_f1(s, y, threshold))
    if not values:
        raise EmptyMask("no class has observed labels")
    return float(np.mean(values))


def evaluate(scores, labels, mask=None, threshold: float = DEFAULT_THRESHOLD) -> MetricsReport:
    """Per-class AP/F1/AUC on observed entries; aggregates are means of the defined values."""
    per_class = []
    for k, s, y in _columns(scores, labels, mask):
        ap = f1 = auc = None
        if s.size:
            f1 = class_f1(s, y, threshold)
            if y.any():
                ap = average_precision(s, y)
                if not y.all():
                    auc = roc_auc(s, y)
        if ap is None or auc is None:
            log.debug("class %d lacks positives or negatives among observed labels", k)
        per_class.append(ClassMetrics(ap, f1, auc))

    def agg(name):
        vals = [getattr(c, name) for c in per_class if getattr(c, name) is not None]
        return float(np.mean(vals)) if vals else float("nan")

    return MetricsReport(agg("ap"), agg("f1"), agg("auc"), per_class)


def mean_average_precision(scores, labels, mask=None) -> float:
    return evaluate(scores, labels, mask).mAP
