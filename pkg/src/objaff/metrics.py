"""Binary classification metrics reported as percentages."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

THRESHOLD = 0.5


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(predictions, labels, threshold: float = THRESHOLD) -> Confusion:
    """Counts with ``prediction > threshold`` read as a predicted success."""
    pred = np.asarray(predictions, dtype=np.float64) > threshold
    lab = np.asarray(labels).astype(bool)
    if pred.shape != lab.shape:
        raise ValueError("predictions and labels differ in shape")
    return Confusion(
        int(np.sum(pred & lab)), int(np.sum(pred & ~lab)), int(np.sum(~pred & lab)), int(np.sum(~pred & ~lab))
    )


def f_score_details(predictions, labels, threshold: float = THRESHOLD) -> tuple[float, bool]:
    """``(F-score %, degenerate)``; degenerate marks an undefined precision or recall (score 0)."""
    c = confusion(predictions, labels, threshold)
    if c.tp == 0:
        return 0.0, (c.tp + c.fp == 0) or (c.tp + c.fn == 0)
    precision = c.tp / (c.tp + c.fp)
    recall = c.tp / (c.tp + c.fn)
    return 100.0 * 2 * precision * recall / (precision + recall), False


def f_score(predictions, labels, threshold: float = THRESHOLD) -> float:
    return f_score_details(predictions, labels, threshold)[0]


def precision_recall_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall after admitting each distinct score, highest first."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]  # end of every tie group
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    precision = tp / (tp + fp)
    recall = tp / max(int(y.sum()), 1)
    return precision, recall


def average_precision(scores, labels) -> float:
    """Area under the step-wise PR curve, precision taken as the max at any higher recall."""
    y = np.asarray(labels).astype(bool)
    if len(y) == 0 or not y.any():
        return 0.0
    precision, recall = precision_recall_curve(scores, labels)
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    widths = np.diff(np.r_[0.0, recall])
    return 100.0 * float(np.sum(widths * interp))
