"""Rule-based refinement of ensemble scores.

The rules look at the nuclei near the tile center and emit a signed modifier
on the NMF probability (positive pushes towards NMF) plus a confidence in the
analysis. The applied shift is ``modifier * confidence``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path

import numpy as np

from .cell_geometry import CenterSelection, DetectionSet, SelectionKind, fallback_detect, select_center_cells
from .errors import DegenerateShape, RefinementUnavailable, SchemaError
from .morphology import MorphologyConfig, ShapeClass, classify_shape, describe, orientation_difference
from .scores import ClassScore

log = logging.getLogger(__name__)


class RuleId(str, Enum):
    NO_CELL_AMF = "NoCellAmf"
    SINGLE_SHAPE_NMF = "SingleShapeNmf"
    PAIR_PARALLEL = "PairParallel"
    PAIR_NEAR_PARALLEL = "PairNearParallel"
    NO_ADJUSTMENT = "NoAdjustment"


@dataclass(frozen=True)
class RuleOutcome:
    rule_id: RuleId
    modifier: float = 0.0
    confidence: float = 0.0
    detail: str = ""

    def __post_init__(self):
        if not -1.0 <= self.modifier <= 1.0:
            raise ValueError("modifier outside [-1, 1]")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence outside [0, 1]")
        if self.rule_id is RuleId.NO_ADJUSTMENT and self.modifier != 0.0:
            raise ValueError("NoAdjustment carries no modifier")

    @property
    def effective_modifier(self) -> float:
        return self.modifier * self.confidence


NO_ADJUSTMENT = RuleOutcome(RuleId.NO_ADJUSTMENT)


@dataclass(frozen=True)
class RbrConfig:
    weight_parallel: float = 0.6
    weight_near_parallel: float = 0.3
    weight_ring: float = 0.2
    weight_round: float = 0.2
    weight_oval: float = 0.2
    weight_no_cell_amf: float = 0.1
    parallel_threshold_deg: float = 10.0
    near_parallel_threshold_deg: float = 20.0
    low_confidence_factor: float = 0.5
    radius_frac: float = 0.15
    proximity_frac: float = 0.25
    fallback_od_threshold: float = 0.4
    fallback_min_area: float = 30.0
    fallback_mean_od_threshold: float = 0.75
    morphology: MorphologyConfig = field(default_factory=MorphologyConfig)

    def __post_init__(self):
        for name in ("weight_parallel", "weight_near_parallel", "weight_ring", "weight_round",
                     "weight_oval", "weight_no_cell_amf", "low_confidence_factor"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not self.parallel_threshold_deg < self.near_parallel_threshold_deg:
            raise ValueError("parallel threshold must be below the near-parallel threshold")

    def shape_weight(self, shape: ShapeClass) -> float:
        return {
            ShapeClass.RING: self.weight_ring,
            ShapeClass.ROUND: self.weight_round,
            ShapeClass.OVAL: self.weight_oval,
        }.get(shape, 0.0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RbrConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SchemaError(f"unknown RBR config keys: {sorted(unknown)}")
        try:
            morph = MorphologyConfig(**data.pop("morphology", {}))
            return cls(morphology=morph, **data)
        except TypeError as exc:
            raise SchemaError(str(exc)) from exc


def load_rbr_config(path: str | Path) -> RbrConfig:
    with open(path) as fh:
        return RbrConfig.from_dict(json.load(fh))


def _single_rule(sel: CenterSelection, img, cfg: RbrConfig, penalty: float) -> RuleOutcome:
    s = describe(sel.selected[0], img, cfg.morphology)
    shape = classify_shape(s, cfg.morphology)
    if shape is ShapeClass.OTHER:
        return RuleOutcome(RuleId.NO_ADJUSTMENT, detail="shape=Other")
    confidence = penalty
    m = cfg.morphology
    if shape is ShapeClass.RING and s.hole_ratio is not None and s.hole_ratio >= m.hole_contrast - m.hole_margin:
        confidence *= cfg.low_confidence_factor
    return RuleOutcome(RuleId.SINGLE_SHAPE_NMF, cfg.shape_weight(shape), confidence,
                       detail=f"shape={shape.value}")


def _pair_rule(sel: CenterSelection, cfg: RbrConfig, penalty: float) -> RuleOutcome:
    a, b = (describe(c, None, cfg.morphology) for c in sel.selected)
    diff = orientation_difference(a.orientation, b.orientation)
    confidence = penalty
    for s in (a, b):
        if s.eccentricity < cfg.morphology.isotropic_eccentricity:
            confidence *= cfg.low_confidence_factor
    detail = f"delta={diff:.2f}"
    if diff < cfg.parallel_threshold_deg:
        return RuleOutcome(RuleId.PAIR_PARALLEL, cfg.weight_parallel, confidence, detail)
    if diff < cfg.near_parallel_threshold_deg:
        return RuleOutcome(RuleId.PAIR_NEAR_PARALLEL, cfg.weight_near_parallel, confidence, detail)
    return RuleOutcome(RuleId.NO_ADJUSTMENT, detail=detail)


def evaluate_rules(sel: CenterSelection, img: np.ndarray | None, cfg: RbrConfig | None = None,
                   detector: str = "external") -> RuleOutcome:
    """Dispatch on the center-cell count and evaluate the matching rule.

    Detections from the fallback detector lower the confidence of shape and
    pair rules by ``low_confidence_factor``.
    """
    cfg = cfg or RbrConfig()
    if sel.kind is SelectionKind.NO_CELL:
        return RuleOutcome(RuleId.NO_CELL_AMF, -cfg.weight_no_cell_amf, 1.0)
    penalty = cfg.low_confidence_factor if detector == "fallback" else 1.0
    try:
        if sel.kind is SelectionKind.SINGLE:
            return _single_rule(sel, img, cfg, penalty)
        if sel.kind is SelectionKind.PAIR:
            return _pair_rule(sel, cfg, penalty)
    except DegenerateShape as exc:
        return RuleOutcome(RuleId.NO_ADJUSTMENT, detail=f"degenerate: {exc}")
    return RuleOutcome(RuleId.NO_ADJUSTMENT, detail=f"{len(sel.selected)} center cells")


def apply_modifier(score: ClassScore, outcome: RuleOutcome) -> ClassScore:
    if outcome.effective_modifier == 0.0:
        return score
    p_nmf = min(max(score.p_nmf + outcome.effective_modifier, 0.0), 1.0)
    return ClassScore.from_nmf(p_nmf)


@dataclass(frozen=True)
class RefinementResult:
    image_id: str
    score: ClassScore
    outcome: RuleOutcome
    unavailable: bool = False

    @property
    def modifier_applied(self) -> float:
        return self.outcome.effective_modifier


def refine(image_id: str, img: np.ndarray | None, detections: DetectionSet | None,
           score: ClassScore, cfg: RbrConfig | None = None, passthrough: bool = True) -> RefinementResult:
    """Select center cells, evaluate rules and adjust ``score``.

    Without detections the classical detector runs on ``img``. With neither,
    the score passes through unchanged and the result is flagged
    ``unavailable`` (or :class:`RefinementUnavailable` is raised when
    ``passthrough`` is false).
    """
    cfg = cfg or RbrConfig()
    if detections is None:
        if img is None:
            if not passthrough:
                raise RefinementUnavailable(f"{image_id}: no detections and no image")
            log.warning("%s: refinement unavailable, score passed through", image_id)
            return RefinementResult(image_id, score, NO_ADJUSTMENT, unavailable=True)
        detections = fallback_detect(img, cfg.fallback_od_threshold, cfg.fallback_min_area, image_id,
                                     mean_od_threshold=cfg.fallback_mean_od_threshold)
    sel = select_center_cells(detections, cfg.radius_frac, cfg.proximity_frac)
    outcome = evaluate_rules(sel, img, cfg, detections.detector)
    return RefinementResult(image_id, apply_modifier(score, outcome), outcome)
