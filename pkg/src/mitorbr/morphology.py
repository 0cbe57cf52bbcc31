"""Shape descriptors for detected nuclei and shape categories.

Orientation is measured in the image's (x, y) frame, from +x towards +y, and
is axial: defined modulo 180 degrees.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np
from shapely.geometry import Polygon
from skimage.draw import polygon2mask

from .cell_geometry import CellInstance
from .errors import DegenerateShape
from .stain_norm import od_transform

MIN_AREA = 4.0


@dataclass(frozen=True)
class MorphologyConfig:
    round_max_eccentricity: float = 0.6
    round_min_solidity: float = 0.85
    oval_max_eccentricity: float = 0.9
    oval_min_solidity: float = 0.8
    # Ring if center OD < hole_contrast * annulus OD.
    hole_contrast: float = 0.6
    # Ratios this close below hole_contrast count as weak ring evidence.
    hole_margin: float = 0.1
    # Below this eccentricity the orientation is unreliable.
    isotropic_eccentricity: float = 0.2
    inner_radius_frac: float = 0.35
    annulus_radius_frac: float = 0.55


@dataclass(frozen=True)
class ShapeDescriptor:
    area: float
    perimeter: float
    orientation: float
    eccentricity: float
    solidity: float
    circularity: float
    has_hole: bool = False
    # center/annulus OD ratio; None when no image was given or too few pixels.
    hole_ratio: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class ShapeClass(str, Enum):
    RING = "Ring"
    ROUND = "Round"
    OVAL = "Oval"
    OTHER = "Other"


def rasterize(polygon: np.ndarray) -> tuple[np.ndarray, int, int]:
    """Rasterize a polygon on its bounding box.

    Returns ``(mask, x0, y0)``: ``mask[j, i]`` is set when the pixel centered
    at ``(x0 + i + 0.5, y0 + j + 0.5)`` lies inside the polygon.
    """
    x0 = math.floor(polygon[:, 0].min())
    y0 = math.floor(polygon[:, 1].min())
    w = math.ceil(polygon[:, 0].max()) - x0
    h = math.ceil(polygon[:, 1].max()) - y0
    rc = np.column_stack([polygon[:, 1] - y0 - 0.5, polygon[:, 0] - x0 - 0.5])
    return polygon2mask((max(h, 1), max(w, 1)), rc), x0, y0


def polygon_moments(polygon: np.ndarray) -> tuple[tuple[float, float], float, float, float]:
    """Area centroid and second central moments ``(mu20, mu02, mu11)`` per unit area.

    Exact integrals over the polygon interior (Green's theorem).
    """
    x, y = polygon[:, 0], polygon[:, 1]
    x1, y1 = np.roll(x, -1), np.roll(y, -1)
    cross = x * y1 - x1 * y
    a = cross.sum() / 2
    cx = ((x + x1) * cross).sum() / (6 * a)
    cy = ((y + y1) * cross).sum() / (6 * a)
    x, y, x1, y1 = x - cx, y - cy, x1 - cx, y1 - cy
    cross = x * y1 - x1 * y
    mu20 = ((x * x + x * x1 + x1 * x1) * cross).sum() / (12 * a)
    mu02 = ((y * y + y * y1 + y1 * y1) * cross).sum() / (12 * a)
    mu11 = ((x * y1 + 2 * x * y + 2 * x1 * y1 + x1 * y) * cross).sum() / (24 * a)
    return (cx, cy), mu20, mu02, mu11


def _hole_ratio(img: np.ndarray, mask: np.ndarray, x0: int, y0: int, area: float,
                cfg: MorphologyConfig) -> float | None:
    height, width = img.shape[:2]
    rows, cols = np.nonzero(mask)
    ys, xs = rows + y0, cols + x0
    keep = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    xs, ys = xs[keep], ys[keep]
    if len(xs) == 0:
        return None
    od = od_transform(img).mean(axis=2)[ys, xs]
    cx, cy = (xs + 0.5).mean(), (ys + 0.5).mean()
    r = np.hypot(xs + 0.5 - cx, ys + 0.5 - cy) / math.sqrt(area / math.pi)
    inner = od[r < cfg.inner_radius_frac]
    outer = od[r >= cfg.annulus_radius_frac]
    if len(inner) < 3 or len(outer) < 3 or outer.mean() <= 0:
        return None
    return float(inner.mean() / outer.mean())


def describe(cell: CellInstance, img: np.ndarray | None = None,
             cfg: MorphologyConfig | None = None) -> ShapeDescriptor:
    """Geometric and moment descriptors of one detected cell.

    Area, perimeter, solidity and the second moments behind orientation and
    eccentricity are exact polygon integrals. With an image, the radial OD
    profile over the rasterized interior decides ``has_hole``.

    Raises:
        DegenerateShape: polygon area below 4 px^2.
    """
    cfg = cfg or MorphologyConfig()
    poly = Polygon(cell.polygon)
    area = poly.area
    if area < MIN_AREA:
        raise DegenerateShape(f"area {area:.2f} px^2 below {MIN_AREA}")
    _, mu20, mu02, mu11 = polygon_moments(cell.polygon)

    orientation = math.degrees(0.5 * math.atan2(2 * mu11, mu20 - mu02)) % 180.0
    if orientation >= 180.0:  # -tiny % 180 rounds up to 180
        orientation = 0.0
    half_tr = (mu20 + mu02) / 2
    root = math.hypot((mu20 - mu02) / 2, mu11)
    lam1, lam2 = half_tr + root, max(half_tr - root, 0.0)
    eccentricity = math.sqrt(max(0.0, 1.0 - lam2 / lam1)) if lam1 > 0 else 0.0

    perimeter = poly.length
    solidity = min(area / poly.convex_hull.area, 1.0)
    ratio = None
    if img is not None:
        mask, x0, y0 = rasterize(cell.polygon)
        ratio = _hole_ratio(img, mask, x0, y0, area, cfg)
    return ShapeDescriptor(
        area=area,
        perimeter=perimeter,
        orientation=orientation,
        eccentricity=eccentricity,
        solidity=solidity,
        circularity=4 * math.pi * area / perimeter**2,
        has_hole=ratio is not None and ratio < cfg.hole_contrast,
        hole_ratio=ratio,
    )


def classify_shape(s: ShapeDescriptor, cfg: MorphologyConfig | None = None) -> ShapeClass:
    cfg = cfg or MorphologyConfig()
    if s.has_hole:
        return ShapeClass.RING
    if s.eccentricity < cfg.round_max_eccentricity and s.solidity > cfg.round_min_solidity:
        return ShapeClass.ROUND
    if s.eccentricity < cfg.oval_max_eccentricity and s.solidity > cfg.oval_min_solidity:
        return ShapeClass.OVAL
    return ShapeClass.OTHER


def orientation_difference(theta1: float, theta2: float) -> float:
    """Axial angle between two orientations, in [0, 90] degrees."""
    d = abs(theta1 - theta2) % 180.0
    return min(d, 180.0 - d)
