"""Challenge metrics and the training-side loss formulas.

AMF is the positive class throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyClass, EmptyInput, LengthMismatch, UndefinedMetric
from .scores import ClassScore, Label

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class EvalReport:
    balanced_accuracy: float
    sensitivity: float
    specificity: float
    auc: float
    n_pos: int
    n_neg: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"

    def table(self) -> str:
        return "\n".join(
            [
                f"Balanced Accuracy  {self.balanced_accuracy:6.2f}",
                f"Sensitivity        {self.sensitivity:6.2f}",
                f"Specificity        {self.specificity:6.2f}",
                f"AUC                {100 * self.auc:6.2f}",
            ]
        )


def _check_pair(a: Sequence, b: Sequence) -> None:
    if len(a) != len(b):
        raise LengthMismatch(f"{len(a)} vs {len(b)} entries")
    if len(a) == 0:
        raise EmptyInput("no samples")


def confusion(truth: Sequence[Label], pred: Sequence[Label]) -> ConfusionCounts:
    _check_pair(truth, pred)
    tp = fp = tn = fn = 0
    for t, p in zip(truth, pred):
        if t is Label.AMF:
            tp, fn = (tp + 1, fn) if p is Label.AMF else (tp, fn + 1)
        else:
            fp, tn = (fp + 1, tn) if p is Label.AMF else (fp, tn + 1)
    return ConfusionCounts(tp, fp, tn, fn)


def rates(c: ConfusionCounts) -> tuple[float, float]:
    """Sensitivity and specificity in percent."""
    if c.tp + c.fn == 0 or c.tn + c.fp == 0:
        raise UndefinedMetric("sensitivity/specificity need both classes present")
    return 100.0 * c.tp / (c.tp + c.fn), 100.0 * c.tn / (c.tn + c.fp)


def balanced_accuracy_from_rates(sensitivity: float, specificity: float) -> float:
    return (sensitivity + specificity) / 2


def balanced_accuracy(c: ConfusionCounts) -> tuple[float, float, float]:
    """Return ``(balanced_accuracy, sensitivity, specificity)`` in percent."""
    sens, spec = rates(c)
    return balanced_accuracy_from_rates(sens, spec), sens, spec


def roc_auc(scores: Sequence[float], truth: Sequence[Label]) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    _check_pair(scores, truth)
    pos = np.array([t is Label.AMF for t in truth])
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs both classes present")
    ranks = rankdata(np.asarray(scores, dtype=np.float64))
    # Average ranks are half-integers, so this numerator is exact.
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def evaluate(truth: Sequence[Label], pred: Sequence[Label], p_amf: Sequence[float]) -> EvalReport:
    c = confusion(truth, pred)
    ba, sens, spec = balanced_accuracy(c)
    return EvalReport(ba, sens, spec, roc_auc(p_amf, truth), c.tp + c.fn, c.tn + c.fp)


# --------------------------------------------------------------------------
# Training-side formulas
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FocalLossParams:
    alpha: tuple[float, float] = (1.0, 1.0)
    gamma: float = 2.0

    def __post_init__(self):
        if len(self.alpha) != 2 or min(self.alpha) <= 0:
            raise ValueError("alpha must be two positive weights")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")


def class_weights(counts: Sequence[int]) -> tuple[float, ...]:
    """Inverse-frequency weights: total / (n_classes * count)."""
    if any(n <= 0 for n in counts):
        raise EmptyClass("every class needs at least one sample")
    total, k = sum(counts), len(counts)
    return tuple(total / (k * n) for n in counts)


def focal_loss(probs: Sequence[ClassScore], truth: Sequence[Label], params: FocalLossParams) -> float:
    """Mean class-weighted focal loss ``-alpha_y (1 - p_y)^gamma log p_y``.

    Class index 0 is NMF and 1 is AMF, matching ``alpha``.
    """
    if len(probs) != len(truth):
        raise LengthMismatch(f"{len(probs)} scores vs {len(truth)} labels")
    if not probs:
        raise EmptyInput("no samples")
    terms = []
    for s, t in zip(probs, truth):
        p = s.p_amf if t is Label.AMF else s.p_nmf
        a = params.alpha[1] if t is Label.AMF else params.alpha[0]
        p = max(p, PROB_FLOOR)
        terms.append(-a * (1.0 - p) ** params.gamma * math.log(p))
    return math.fsum(terms) / len(terms)
