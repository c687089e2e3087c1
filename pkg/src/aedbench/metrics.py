"""Ranking metrics: per-class average precision, ROC-AUC, and d-prime.

AP is the step-wise sum of precision * delta-recall over the score-descending
ranking (ties broken by stable original order).  AUC is the Mann-Whitney
statistic with ties credited 0.5.  d-prime is sqrt(2) times the standard
normal quantile of the AUC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "UndefinedMetricError",
    "PredictionSet",
    "MetricTriple",
    "SetMetrics",
    "ShiftReport",
    "average_precision",
    "auc",
    "probit",
    "d_prime",
    "evaluate_set",
    "distribution_shift",
]


class UndefinedMetricError(ValueError):
    """The metric is undefined for this class (e.g. no positives); skip it."""


def _validate_pair(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    l = np.asarray(labels)
    if s.shape != l.shape or s.ndim != 1:
        raise ValueError(f"scores {s.shape} and labels {l.shape} must be equal 1-D")
    if not np.isin(l, (0, 1)).all():
        raise ValueError("labels must be binary")
    return s, l.astype(np.int64)


def average_precision(scores, labels) -> float:
    """Step-wise AP of the ranking induced by the scores."""
    s, l = _validate_pair(scores, labels)
    n_pos = int(l.sum())
    if n_pos == 0:
        raise UndefinedMetricError("no positive labels")
    order = np.argsort(-s, kind="stable")
    hits = l[order].astype(bool)
    precision = np.cumsum(hits) / np.arange(1, s.size + 1)
    return float(precision[hits].sum() / n_pos)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks of values ascending; tied values share the average rank."""
    _, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    cum = np.cumsum(counts)
    avg = cum - (counts - 1) / 2.0
    return avg[inverse]


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties 0.5)."""
    s, l = _validate_pair(scores, labels)
    n_pos = int(l.sum())
    n_neg = s.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("need at least one positive and one negative")
    ranks = _average_ranks(s)
    return float((ranks[l == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


# Rational approximation of the inverse normal CDF (|error| < 1.2e-9),
# refined below by one Newton step through the exact erfc-based CDF.
_PROBIT_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_PROBIT_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_PROBIT_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_PROBIT_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_PROBIT_P_LOW = 0.02425


def _probit_le_half(p: float) -> float:
    # p in (0, 0.5]; returns the (non-positive) quantile.
    a, b, c, d = _PROBIT_A, _PROBIT_B, _PROBIT_C, _PROBIT_D
    if p < _PROBIT_P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        z = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    else:
        q = p - 0.5
        r = q * q
        z = (
            (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5])
            * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
        )
    pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    if pdf > 0.0:
        cdf = 0.5 * math.erfc(-z / math.sqrt(2.0))
        z -= (cdf - p) / pdf
    return z


def probit(p: float) -> float:
    """Standard normal quantile: the z with Phi(z) = p, accurate to ~1e-12.

    Evaluated from the smaller tail so probit(1 - p) == -probit(p) exactly
    whenever 1 - p is itself exact.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if p > 0.5:
        return -_probit_le_half(1.0 - p)
    return _probit_le_half(p)


def d_prime(auc_value: float) -> float:
    """Sensitivity index sqrt(2) * probit(AUC); +/-inf at the degenerate ends."""
    if auc_value == 0.0 or auc_value == 1.0:
        return math.copysign(math.inf, auc_value - 0.5)
    if not 0.0 < auc_value < 1.0:
        raise ValueError(f"AUC must lie in [0, 1], got {auc_value}")
    return math.sqrt(2.0) * probit(auc_value)


@dataclass(frozen=True)
class PredictionSet:
    """Scores and multi-hot labels, both (n_samples, n_classes)."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels)
        if scores.ndim != 2 or scores.shape != labels.shape:
            raise ValueError(
                f"scores {scores.shape} and labels {labels.shape} must be equal 2-D"
            )
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be binary")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels.astype(np.int64))

    @property
    def n_classes(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class MetricTriple:
    map: float
    auc: float
    d_prime: float


@dataclass(frozen=True)
class SetMetrics:
    """Aggregate triple plus per-class detail; NaN where a class was skipped."""

    triple: MetricTriple
    per_class_ap: np.ndarray
    per_class_auc: np.ndarray
    skipped_ap: tuple[int, ...]
    skipped_auc: tuple[int, ...]


def evaluate_set(pred: PredictionSet) -> SetMetrics:
    """mAP over classes with >= 1 positive; AUC averaged, d-prime of the mean."""
    n_classes = pred.n_classes
    ap = np.full(n_classes, np.nan)
    cls_auc = np.full(n_classes, np.nan)
    skipped_ap, skipped_auc = [], []
    for c in range(n_classes):
        try:
            ap[c] = average_precision(pred.scores[:, c], pred.labels[:, c])
        except UndefinedMetricError:
            skipped_ap.append(c)
        try:
            cls_auc[c] = auc(pred.scores[:, c], pred.labels[:, c])
        except UndefinedMetricError:
            skipped_auc.append(c)
    if np.isnan(ap).all() or np.isnan(cls_auc).all():
        raise ValueError("no class is evaluable (every class lacks positives or negatives)")
    mean_ap = float(np.nanmean(ap))
    mean_auc = float(np.nanmean(cls_auc))
    triple = MetricTriple(map=mean_ap, auc=mean_auc, d_prime=d_prime(mean_auc))
    return SetMetrics(triple, ap, cls_auc, tuple(skipped_ap), tuple(skipped_auc))


@dataclass(frozen=True)
class ShiftReport:
    """Per-class mean score change (perturbed - clean) and the biggest movers."""

    deltas: np.ndarray
    top: tuple[tuple[int, float], ...]


def distribution_shift(clean: PredictionSet, perturbed: PredictionSet, top_k: int = 5) -> ShiftReport:
    if clean.scores.shape != perturbed.scores.shape:
        raise ValueError(
            f"shape mismatch: clean {clean.scores.shape} vs perturbed {perturbed.scores.shape}"
        )
    deltas = (perturbed.scores - clean.scores).mean(axis=0)
    order = np.argsort(-np.abs(deltas), kind="stable")[:top_k]
    top = tuple((int(c), float(deltas[c])) for c in order)
    return ShiftReport(deltas, top)
