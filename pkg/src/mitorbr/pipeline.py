"""Batch inference flow: fuse model scores, optionally refine, decide, evaluate.

Reinhard normalization belongs to the (external) deep models and is only used
here for debug renders. The refinement branch always re-normalizes with
Macenko, whatever the upstream images went through.
"""

from __future__ import annotations

import csv
import json
import logging
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

from .cell_geometry import DetectionSet, load_detections, parse_detections
from .ensemble import decide, fuse_records, load_model_scores
from .errors import IdMismatch, InsufficientTissue, MissingScores, SchemaError
from .image import read_png, write_png
from .metrics import EvalReport, evaluate
from .rbr import NO_ADJUSTMENT, RbrConfig, RefinementResult, refine
from .scores import ClassScore, Label
from .stain_norm import (
    LabStats,
    MacenkoParams,
    StainProfile,
    default_lab_target,
    default_stain_target,
    load_lab_stats,
    load_stain_profile,
    macenko_normalize,
    reinhard_normalize,
)

log = logging.getLogger(__name__)

BASE_COLUMNS = ["image_id", "p_nmf", "p_amf", "label"]
PROVENANCE_COLUMNS = ["rule_id", "confidence", "modifier_applied"]


@dataclass
class PipelineConfig:
    scores: Path | None = None
    detections: Path | None = None
    images: Path | None = None
    truth: Path | None = None
    manifest: Path | None = None
    out: Path | None = None
    debug_dir: Path | None = None
    lab_target: Path | None = None
    stain_target: Path | None = None
    rbr_enabled: bool = True
    threshold: float = 0.5
    workers: int = 1
    emit_provenance: bool = True
    rbr: RbrConfig = field(default_factory=RbrConfig)
    macenko: MacenkoParams = field(default_factory=MacenkoParams)

    _PATHS = ("scores", "detections", "images", "truth", "manifest", "out", "debug_dir",
              "lab_target", "stain_target")

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise SchemaError("threshold must lie in (0, 1)")
        if self.workers < 1:
            raise SchemaError("workers must be >= 1")

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | None = None) -> "PipelineConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SchemaError(f"unknown config keys: {sorted(unknown)}")
        if "rbr" in data:
            data["rbr"] = RbrConfig.from_dict(data["rbr"])
        if "macenko" in data:
            try:
                data["macenko"] = MacenkoParams(**data["macenko"])
            except (TypeError, ValueError) as exc:
                raise SchemaError(f"macenko: {exc}") from exc
        for key in cls._PATHS:
            if data.get(key) is not None:
                p = Path(data[key])
                data[key] = p if p.is_absolute() or base_dir is None else base_dir / p
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
        return cls.from_dict(data, base_dir=path.parent)

    def check_inputs(self) -> None:
        if self.scores is None:
            raise SchemaError("a model-scores CSV is required")
        for key in self._PATHS:
            p = getattr(self, key)
            if key in ("out", "debug_dir") or p is None:
                continue
            if not p.exists():
                raise SchemaError(f"{key}: {p} does not exist")

    def stain_profile(self) -> StainProfile:
        return load_stain_profile(self.stain_target) if self.stain_target else default_stain_target()

    def lab_stats(self) -> LabStats:
        return load_lab_stats(self.lab_target) if self.lab_target else default_lab_target()


# --------------------------------------------------------------------------
# Input helpers
# --------------------------------------------------------------------------


def load_detection_source(path: Path | None) -> dict[str, DetectionSet]:
    """Detections from a directory of ``<image_id>.json`` files or one JSON file.

    A single file may hold one detection object or a list of them.
    """
    if path is None:
        return {}
    if path.is_dir():
        sets = [load_detections(p) for p in sorted(path.glob("*.json"))]
    else:
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
        sets = [parse_detections(d) for d in (data if isinstance(data, list) else [data])]
    return {d.image_id: d for d in sets}


def load_truth(path: str | Path) -> "OrderedDict[str, Label]":
    truth: OrderedDict[str, Label] = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"image_id", "label"} <= set(reader.fieldnames):
            raise SchemaError(f"{path}: needs image_id and label columns")
        for lineno, row in enumerate(reader, start=2):
            try:
                truth[row["image_id"]] = Label.parse(row["label"])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return truth


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass(frozen=True)
class PredictionRow:
    image_id: str
    score: ClassScore
    label: Label
    rule_id: str
    confidence: float
    modifier_applied: float

    def cells(self, provenance: bool) -> list[str]:
        row = [self.image_id, _fmt(self.score.p_nmf), _fmt(self.score.p_amf), self.label.value]
        if provenance:
            row += [self.rule_id, _fmt(self.confidence), _fmt(self.modifier_applied)]
        return row


def write_predictions(path: str | Path, rows: Sequence[PredictionRow], provenance: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BASE_COLUMNS + (PROVENANCE_COLUMNS if provenance else []))
        for r in rows:
            w.writerow(r.cells(provenance))


def load_predictions(path: str | Path) -> "OrderedDict[str, tuple[ClassScore, Label]]":
    out: OrderedDict[str, tuple[ClassScore, Label]] = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(BASE_COLUMNS) <= set(reader.fieldnames):
            raise SchemaError(f"{path}: needs columns {','.join(BASE_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                score = ClassScore(float(row["p_nmf"]), float(row["p_amf"]))
                out[row["image_id"]] = (score, Label.parse(row["label"]))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return out


def evaluate_predictions(predictions, truth) -> EvalReport:
    """Metrics over aligned predictions and truth.

    Raises:
        IdMismatch: the two files cover different image ids.
    """
    if set(predictions) != set(truth):
        missing = sorted(set(truth) ^ set(predictions))[:5]
        raise IdMismatch(f"prediction and truth ids differ (e.g. {missing})")
    ids = list(truth)
    return evaluate(
        [truth[i] for i in ids],
        [predictions[i][1] for i in ids],
        [predictions[i][0].p_amf for i in ids],
    )


# --------------------------------------------------------------------------
# Per-image work
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _Job:
    image_id: str
    score: ClassScore
    detections: DetectionSet | None
    image_path: Path | None


def _refine_one(job: _Job, cfg: PipelineConfig, target: StainProfile) -> RefinementResult:
    img = None
    if job.image_path is not None and job.image_path.exists():
        raw = read_png(job.image_path)
        try:
            img = macenko_normalize(raw, target, cfg.macenko)
        except InsufficientTissue:
            log.info("%s: Macenko fit failed, analysing raw image", job.image_id)
            img = raw
    return refine(job.image_id, img, job.detections, job.score, cfg.rbr)


def _process(job: _Job, cfg: PipelineConfig, target: StainProfile | None) -> PredictionRow:
    if cfg.rbr_enabled:
        res = _refine_one(job, cfg, target)
    else:
        res = RefinementResult(job.image_id, job.score, NO_ADJUSTMENT)
    d = decide(res.score, cfg.threshold)
    return PredictionRow(job.image_id, res.score, d.label, res.outcome.rule_id.value,
                         res.outcome.confidence, res.modifier_applied)


def _process_star(args):
    return _process(*args)


def _write_debug(cfg: PipelineConfig, ids: Sequence[str]) -> None:
    cfg.debug_dir.mkdir(parents=True, exist_ok=True)
    lab, stain = cfg.lab_stats(), cfg.stain_profile()
    for image_id in ids:
        p = cfg.images / f"{image_id}.png" if cfg.images else None
        if p is None or not p.exists():
            continue
        raw = read_png(p)
        write_png(cfg.debug_dir / f"{image_id}_reinhard.png", reinhard_normalize(raw, lab))
        try:
            write_png(cfg.debug_dir / f"{image_id}_macenko.png", macenko_normalize(raw, stain, cfg.macenko))
        except InsufficientTissue:
            pass


@dataclass
class PipelineResult:
    rows: list[PredictionRow]
    report: EvalReport | None = None


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Run the full flow and write ``predictions.csv`` (+ ``report.json``).

    Raises:
        MissingScores: a manifest image has no model scores.
        IdMismatch: truth ids differ from the scored images.
    """
    cfg.check_inputs()
    fused = fuse_records(load_model_scores(cfg.scores))
    ids = list(fused)
    if cfg.manifest is not None:
        from .dataset import load_manifest

        ids = list(OrderedDict.fromkeys(e.image_id for e in load_manifest(cfg.manifest)))
        missing = [i for i in ids if i not in fused]
        if missing:
            raise MissingScores(f"{len(missing)} manifest images lack model scores, e.g. {missing[:5]}")

    detections = load_detection_source(cfg.detections) if cfg.rbr_enabled else {}
    target = cfg.stain_profile() if cfg.rbr_enabled else None
    jobs = [
        _Job(i, fused[i], detections.get(i), cfg.images / f"{i}.png" if cfg.images else None)
        for i in ids
    ]
    args = [(job, cfg, target) for job in jobs]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_process_star, args))
    else:
        rows = [_process_star(a) for a in args]

    result = PipelineResult(rows)
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
        write_predictions(cfg.out / "predictions.csv", rows, cfg.emit_provenance)
    if cfg.debug_dir is not None:
        _write_debug(cfg, ids)
    if cfg.truth is not None:
        preds = OrderedDict((r.image_id, (r.score, r.label)) for r in rows)
        result.report = evaluate_predictions(preds, load_truth(cfg.truth))
        if cfg.out is not None:
            (cfg.out / "report.json").write_text(result.report.to_json())
    return result
