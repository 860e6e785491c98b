"""Confusion matrix and support-weighted one-vs-rest metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError
from .signal import DIAGNOSIS_CODES, N_CLASSES


@dataclass(frozen=True)
class ConfusionMatrix:
    """``M[i, j]`` counts samples of true class ``i`` predicted as ``j``."""

    M: np.ndarray

    def __post_init__(self) -> None:
        M = np.asarray(self.M, dtype=np.int64)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or np.any(M < 0):
            raise ArgumentError("confusion matrix must be square with non-negative counts")
        object.__setattr__(self, "M", M)

    @property
    def total(self) -> int:
        return int(self.M.sum())

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.M).copy()

    @property
    def fp(self) -> np.ndarray:
        return self.M.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.M.sum(axis=1) - self.tp

    @property
    def tn(self) -> np.ndarray:
        return self.total - self.tp - self.fp - self.fn

    @property
    def support(self) -> np.ndarray:
        return self.M.sum(axis=1)


def confusion(y_true, y_pred, n_classes: int = N_CLASSES) -> ConfusionMatrix:
    t = np.asarray(y_true, dtype=np.int64).ravel()
    p = np.asarray(y_pred, dtype=np.int64).ravel()
    if t.size != p.size:
        raise ArgumentError(f"length mismatch: {t.size} true vs {p.size} predicted")
    if t.size == 0:
        raise ArgumentError("need at least one sample")
    for arr in (t, p):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ArgumentError(f"labels must lie in 0..{n_classes - 1}")
    M = np.bincount(t * n_classes + p, minlength=n_classes * n_classes)
    return ConfusionMatrix(M.reshape(n_classes, n_classes))


def _safe_div(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    undefined = den == 0
    out = np.divide(num, den, out=np.zeros(num.shape, dtype=np.float64), where=~undefined)
    return out, undefined


@dataclass(frozen=True)
class MetricsBundle:
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    support: np.ndarray
    zero_division: dict[str, tuple[int, ...]] = field(default_factory=dict)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision,
                "recall": self.recall, "f1": self.f1, "seconds": self.seconds,
                "zero_division": {k: list(v) for k, v in self.zero_division.items()}}

    def per_class_rows(self, names=DIAGNOSIS_CODES) -> list[dict]:
        return [{"class": names[c] if c < len(names) else str(c), "index": c,
                 "precision": float(self.per_class_precision[c]),
                 "recall": float(self.per_class_recall[c]),
                 "f1": float(self.per_class_f1[c]), "support": int(self.support[c])}
                for c in range(self.support.size)]


def weighted_metrics(m: ConfusionMatrix, seconds: float = 0.0) -> MetricsBundle:
    """Top-1 accuracy plus support-weighted precision, recall and F1.

    Undefined ratios are 0 and their class indices are listed under
    ``zero_division``.  Classes with zero support carry zero weight.
    """
    if m.total < 1:
        raise ArgumentError("metrics need at least one sample")
    tp, fp, fn = (x.astype(np.float64) for x in (m.tp, m.fp, m.fn))
    prec, p_bad = _safe_div(tp, tp + fp)
    rec, r_bad = _safe_div(tp, tp + fn)
    f1, f_bad = _safe_div(2.0 * prec * rec, prec + rec)
    support = m.support
    w = support / support.sum()
    flags = {k: tuple(int(i) for i in np.flatnonzero(v))
             for k, v in (("precision", p_bad), ("recall", r_bad), ("f1", f_bad)) if v.any()}
    return MetricsBundle(
        accuracy=float(np.trace(m.M) / m.total),
        precision=float(np.dot(w, prec)), recall=float(np.dot(w, rec)), f1=float(np.dot(w, f1)),
        per_class_precision=prec, per_class_recall=rec, per_class_f1=f1,
        support=support, zero_division=flags, seconds=float(seconds))


def evaluate(y_true, y_pred, seconds: float = 0.0, n_classes: int = N_CLASSES) -> MetricsBundle:
    return weighted_metrics(confusion(y_true, y_pred, n_classes), seconds)
