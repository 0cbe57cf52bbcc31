"""Softmax fusion of per-model class scores and thresholded decisions."""

from __future__ import annotations

import csv
import math
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyEnsemble, SchemaError
from .scores import ClassScore, Label

SCORE_FILE_TOL = 1e-6
SCORE_COLUMNS = ("image_id", "model_id", "p_nmf", "p_amf")


@dataclass(frozen=True)
class ModelScoreRecord:
    image_id: str
    model_id: str
    score: ClassScore


@dataclass(frozen=True)
class Decision:
    label: Label
    score: ClassScore
    threshold: float


def _bounded_mean(values: Sequence[float]) -> float:
    # fsum/n can land one ulp outside the inputs' range; clamp keeps fusion convex.
    return min(max(math.fsum(values) / len(values), min(values)), max(values))


def fuse(scores: Iterable[ClassScore]) -> ClassScore:
    """Componentwise mean of the model softmax vectors."""
    scores = list(scores)
    if not scores:
        raise EmptyEnsemble("cannot fuse an empty ensemble")
    return ClassScore(
        _bounded_mean([s.p_nmf for s in scores]),
        _bounded_mean([s.p_amf for s in scores]),
    )


def decide(score: ClassScore, threshold: float = 0.5) -> Decision:
    """Hard label; ``p_amf == threshold`` resolves to AMF."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    label = Label.AMF if score.p_amf >= threshold else Label.NMF
    return Decision(label, score, threshold)


def load_model_scores(path: str | Path) -> "OrderedDict[str, list[ModelScoreRecord]]":
    """Read a model-scores CSV, grouped by image in first-seen order.

    Rows whose probabilities are off the simplex by more than 1e-6 are
    rejected; accepted rows are renormalised to sum to exactly 1.
    """
    grouped: OrderedDict[str, list[ModelScoreRecord]] = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != SCORE_COLUMNS:
            raise SchemaError(f"{path}: header must be {','.join(SCORE_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                p_nmf, p_amf = float(row["p_nmf"]), float(row["p_amf"])
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: non-numeric probability") from exc
            total = p_nmf + p_amf
            if not math.isfinite(total) or abs(total - 1.0) > SCORE_FILE_TOL:
                raise SchemaError(f"{path}:{lineno}: p_nmf + p_amf = {total}")
            if not row["image_id"] or not row["model_id"]:
                raise SchemaError(f"{path}:{lineno}: empty id")
            try:
                score = ClassScore(p_nmf / total, p_amf / total)
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
            rec = ModelScoreRecord(row["image_id"], row["model_id"], score)
            grouped.setdefault(rec.image_id, []).append(rec)
    return grouped


def fuse_records(grouped: "OrderedDict[str, list[ModelScoreRecord]]") -> "OrderedDict[str, ClassScore]":
    return OrderedDict((k, fuse(r.score for r in recs)) for k, recs in grouped.items())
