"""Cell detections: representation, JSON ingestion, a classical fallback
detector and center-region selection.

Coordinates are continuous pixel units with the origin at the top-left image
corner; pixel ``(col, row)`` covers ``[col, col + 1) x [row, row + 1)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage
from shapely.geometry import LinearRing, Polygon
from skimage import measure

from .errors import GeometryError, InsufficientTissue, SchemaError
from .image import as_rgb8
from .stain_norm import MacenkoParams, concentrations, fit_stain_matrix, tissue_od

FALLBACK_SCORE = 0.5


@dataclass(frozen=True)
class CellInstance:
    polygon: np.ndarray
    centroid: tuple[float, float]
    score: float

    @classmethod
    def from_polygon(cls, vertices, score: float = 1.0) -> "CellInstance":
        """Validate a vertex list and compute its area centroid.

        Raises:
            GeometryError: fewer than 3 vertices, zero area or self-intersection.
        """
        pts = np.asarray(vertices, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise GeometryError("polygon must be a list of (x, y) pairs")
        if len(pts) > 1 and np.array_equal(pts[0], pts[-1]):
            pts = pts[:-1]
        if len(pts) < 3:
            raise GeometryError(f"polygon needs >= 3 vertices, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise GeometryError("polygon vertices must be finite")
        if not LinearRing(pts).is_simple:
            raise GeometryError("polygon is self-intersecting")
        poly = Polygon(pts)
        if poly.area <= 0:
            raise GeometryError("polygon has zero area")
        if not 0.0 <= score <= 1.0:
            raise GeometryError(f"score {score} outside [0, 1]")
        pts.setflags(write=False)
        c = poly.centroid
        return cls(polygon=pts, centroid=(c.x, c.y), score=float(score))

    @property
    def area(self) -> float:
        return Polygon(self.polygon).area

    def translated(self, dx: float, dy: float) -> "CellInstance":
        return CellInstance.from_polygon(self.polygon + [dx, dy], self.score)


@dataclass(frozen=True)
class DetectionSet:
    image_id: str
    image_width: int
    image_height: int
    cells: tuple[CellInstance, ...] = ()
    # "external" for ingested files, "fallback" for the classical detector.
    detector: str = "external"

    def __post_init__(self):
        if self.image_width <= 0 or self.image_height <= 0:
            raise GeometryError("image dimensions must be positive")
        object.__setattr__(self, "cells", tuple(self.cells))
        for cell in self.cells:
            x, y = cell.polygon[:, 0], cell.polygon[:, 1]
            if x.min() < 0 or y.min() < 0 or x.max() > self.image_width or y.max() > self.image_height:
                raise GeometryError(f"{self.image_id}: polygon vertex outside image bounds")

    def to_dict(self) -> dict:
        out = {
            "image_id": self.image_id,
            "width": self.image_width,
            "height": self.image_height,
            "cells": [{"polygon": c.polygon.tolist(), "score": c.score} for c in self.cells],
        }
        if self.detector != "external":
            # Optional key, so provenance survives a save/load round trip.
            out["detector"] = self.detector
        return out


def parse_detections(data: dict) -> DetectionSet:
    try:
        image_id = data["image_id"]
        width, height = data["width"], data["height"]
        raw_cells = data["cells"]
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"detections missing field: {exc}") from exc
    if not isinstance(image_id, str):
        raise SchemaError("image_id must be a string")
    if not (isinstance(width, int) and isinstance(height, int)):
        raise SchemaError("width and height must be integers")
    if not isinstance(raw_cells, list):
        raise SchemaError("cells must be a list")
    cells = []
    for i, raw in enumerate(raw_cells):
        if not isinstance(raw, dict) or "polygon" not in raw or "score" not in raw:
            raise SchemaError(f"cell {i} needs 'polygon' and 'score'")
        try:
            score = float(raw["score"])
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"cell {i}: bad score") from exc
        cells.append(CellInstance.from_polygon(raw["polygon"], score))
    detector = data.get("detector", "external")
    if not isinstance(detector, str):
        raise SchemaError("detector must be a string")
    return DetectionSet(image_id, width, height, tuple(cells), detector=detector)


def load_detections(path: str | Path) -> DetectionSet:
    """Read a detection JSON file.

    Raises:
        SchemaError: malformed JSON or missing fields.
        GeometryError: degenerate or self-intersecting polygon.
    """
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    return parse_detections(data)


def save_detections(path: str | Path, d: DetectionSet) -> None:
    with open(path, "w") as fh:
        json.dump(d.to_dict(), fh)
        fh.write("\n")


# --------------------------------------------------------------------------
# Fallback detector
# --------------------------------------------------------------------------


def hematoxylin_channel(img: np.ndarray, params: MacenkoParams | None = None) -> tuple[np.ndarray, bool]:
    """Per-pixel hematoxylin concentration, or mean OD if the stain fit fails.

    Returns the channel and whether the stain fit succeeded.
    """
    params = params or MacenkoParams()
    img = as_rgb8(img)
    od, tissue = tissue_od(img, params)
    try:
        stain = fit_stain_matrix(tissue, params)
    except InsufficientTissue:
        return od.mean(axis=1).reshape(img.shape[:2]), False
    return concentrations(od, stain)[0].reshape(img.shape[:2]), True


def _trace_boundary(mask: np.ndarray) -> np.ndarray:
    """Outer boundary of a binary component as (x, y) vertices."""
    padded = np.pad(mask.astype(float), 1)
    contours = measure.find_contours(padded, 0.5, fully_connected="high")
    rc = max(contours, key=len)[:-1]
    # find_contours works on pixel centres; undo padding, shift to continuous coords.
    return np.column_stack([rc[:, 1] - 0.5, rc[:, 0] - 0.5])


def fallback_detect(
    img: np.ndarray,
    od_threshold: float = 0.4,
    min_area: float = 30.0,
    image_id: str = "",
    params: MacenkoParams | None = None,
    mean_od_threshold: float = 0.75,
) -> DetectionSet:
    """Classical nucleus detector: threshold hematoxylin, label 8-connected blobs.

    ``od_threshold`` applies to the hematoxylin concentration. When the stain
    fit fails the mean OD is thresholded at ``mean_od_threshold`` instead, as
    it also carries the eosin background.
    """
    img = as_rgb8(img)
    height, width = img.shape[:2]
    channel, fitted = hematoxylin_channel(img, params)
    mask = ndimage.binary_fill_holes(channel > (od_threshold if fitted else mean_od_threshold))
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    cells = []
    for idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        component = labels[sl] == idx
        if component.sum() < min_area:
            continue
        verts = _trace_boundary(component) + [sl[1].start, sl[0].start]
        verts = np.clip(verts, 0, [width, height])
        try:
            cell = CellInstance.from_polygon(verts, FALLBACK_SCORE)
        except GeometryError:
            hull = Polygon(verts).convex_hull
            cell = CellInstance.from_polygon(np.asarray(hull.exterior.coords), FALLBACK_SCORE)
        cells.append(cell)
    return DetectionSet(image_id, width, height, tuple(cells), detector="fallback")


# --------------------------------------------------------------------------
# Center selection
# --------------------------------------------------------------------------


class SelectionKind(str, Enum):
    NO_CELL = "NoCell"
    SINGLE = "Single"
    PAIR = "Pair"
    AMBIGUOUS = "Ambiguous"

    @classmethod
    def for_count(cls, n: int) -> "SelectionKind":
        return [cls.NO_CELL, cls.SINGLE, cls.PAIR][n] if n < 3 else cls.AMBIGUOUS


@dataclass(frozen=True)
class CenterSelection:
    kind: SelectionKind
    selected: tuple[CellInstance, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if SelectionKind.for_count(len(self.selected)) is not self.kind:
            raise ValueError(f"{self.kind} inconsistent with {len(self.selected)} cells")


def select_center_cells(
    d: DetectionSet,
    radius_frac: float = 0.15,
    proximity_frac: float = 0.25,
    center: tuple[float, float] | None = None,
) -> CenterSelection:
    """Pick the cells that make up the figure at the tile center.

    Candidates have centroids within ``radius_frac * min(w, h)`` of the center.
    With several candidates, the one nearest the center anchors a cluster of
    all candidates closer than ``proximity_frac * min(w, h)`` to it.
    """
    cx, cy = center if center is not None else (d.image_width / 2, d.image_height / 2)
    scale = min(d.image_width, d.image_height)

    def dist_to_center(c: CellInstance) -> float:
        return math.hypot(c.centroid[0] - cx, c.centroid[1] - cy)

    candidates = [c for c in d.cells if dist_to_center(c) < radius_frac * scale]
    candidates.sort(key=lambda c: (dist_to_center(c), c.centroid[0], c.centroid[1]))
    if len(candidates) >= 2:
        ax, ay = candidates[0].centroid
        limit = proximity_frac * scale
        candidates = [candidates[0]] + [
            c for c in candidates[1:] if math.hypot(c.centroid[0] - ax, c.centroid[1] - ay) < limit
        ]
    selected = tuple(candidates)
    return CenterSelection(SelectionKind.for_count(len(selected)), selected)
