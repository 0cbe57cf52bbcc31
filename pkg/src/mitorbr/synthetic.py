"""Synthetic H&E-like tiles with known nuclei.

Used to build the bundled target tile, the end-to-end fixture set and test
images. Pixels are composed linearly in optical-density space from a
reference hematoxylin/eosin basis, so the ground-truth stain matrix is known.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .stain_norm import od_inverse

# Common Macenko reference basis for H&E.
HEMATOXYLIN = np.array([0.5626, 0.7201, 0.4062])
EOSIN = np.array([0.2159, 0.8012, 0.5581])
REFERENCE_STAINS = np.column_stack(
    [HEMATOXYLIN / np.linalg.norm(HEMATOXYLIN), EOSIN / np.linalg.norm(EOSIN)]
)


@dataclass(frozen=True)
class NucleusSpec:
    cx: float
    cy: float
    semi_major: float
    semi_minor: float
    angle_deg: float = 0.0
    ring: bool = False
    density: float = 1.1


def ellipse_polygon(spec: NucleusSpec, n_vertices: int = 48) -> np.ndarray:
    """Counter-clockwise (in x/y) vertex list of the nucleus outline."""
    t = np.linspace(0.0, 2 * np.pi, n_vertices, endpoint=False)
    a = np.deg2rad(spec.angle_deg)
    x = spec.semi_major * np.cos(t)
    y = spec.semi_minor * np.sin(t)
    return np.column_stack(
        [spec.cx + x * np.cos(a) - y * np.sin(a), spec.cy + x * np.sin(a) + y * np.cos(a)]
    )


def _ellipse_radius(spec: NucleusSpec, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    a = np.deg2rad(spec.angle_deg)
    dx, dy = xs - spec.cx, ys - spec.cy
    u = dx * np.cos(a) + dy * np.sin(a)
    v = -dx * np.sin(a) + dy * np.cos(a)
    return np.sqrt((u / spec.semi_major) ** 2 + (v / spec.semi_minor) ** 2)


def compose(h: np.ndarray, e: np.ndarray, stains: np.ndarray = REFERENCE_STAINS, io: float = 240.0):
    """Render concentration maps ``h``, ``e`` through a 3x2 stain basis."""
    od = h[..., None] * stains[:, 0] + e[..., None] * stains[:, 1]
    return od_inverse(od, io)


def render_tile(
    nuclei: list[NucleusSpec],
    size: int = 128,
    seed: int = 0,
    eosin_level: float = 0.8,
    stains: np.ndarray = REFERENCE_STAINS,
) -> np.ndarray:
    """Render a square tile: textured eosin background plus nuclei."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:size, 0:size] + 0.5
    texture = ndimage.gaussian_filter(rng.normal(size=(size, size)), 4.0)
    texture /= max(np.abs(texture).max(), 1e-9)
    e = np.clip(eosin_level * (1.0 + 0.6 * texture), 0.05, None)
    h = np.clip(0.04 + 0.02 * rng.normal(size=(size, size)), 0.0, None)
    for spec in nuclei:
        r = _ellipse_radius(spec, xs, ys)
        inside = r <= 1.0
        profile = np.full_like(r, spec.density)
        if spec.ring:
            profile = np.where(r < 0.55, 0.25 * spec.density, spec.density)
        h = np.where(inside, profile * (1.0 + 0.08 * rng.normal(size=r.shape)), h)
        e = np.where(inside, 0.5 * e, e)
    return compose(np.clip(h, 0, None), e, stains)


def target_tile(size: int = 256, seed: int = 2935) -> np.ndarray:
    """Deterministic H&E-like tile used as the default normalization target."""
    rng = np.random.default_rng(seed)
    nuclei = []
    for _ in range(40):
        a = rng.uniform(4, 9)
        nuclei.append(
            NucleusSpec(
                cx=rng.uniform(10, size - 10),
                cy=rng.uniform(10, size - 10),
                semi_major=a,
                semi_minor=a * rng.uniform(0.55, 1.0),
                angle_deg=rng.uniform(0, 180),
                density=rng.uniform(0.8, 1.3),
            )
        )
    return render_tile(nuclei, size=size, seed=seed)


def two_stain_image(stains: np.ndarray, size: int = 64, seed: int = 0, io: float = 240.0,
                    pure_fraction: float = 0.3) -> np.ndarray:
    """Random image from a known 3x2 stain basis.

    A ``pure_fraction`` share of pixels carries (almost) only hematoxylin,
    the same share only eosin; the rest mix both.
    """
    rng = np.random.default_rng(seed)
    n = size * size
    kind = rng.choice(3, size=n, p=[pure_fraction, pure_fraction, 1 - 2 * pure_fraction])
    h = rng.uniform(0.4, 1.5, n)
    e = rng.uniform(0.6, 1.5, n)
    trace = rng.uniform(0.0, 0.01, n)
    h = np.where(kind == 1, trace, h)
    e = np.where(kind == 0, trace, e)
    return compose(h.reshape(size, size), e.reshape(size, size), stains, io)


# (image_id suffix, nuclei, truth label, ship a detection file?)
def _mini_scenarios():
    N = NucleusSpec
    return [
        ("nocell", [N(18, 20, 7, 6, 10)], "AMF", True),
        ("ring", [N(64, 64, 10, 9, 20, ring=True)], "NMF", True),
        ("round", [N(64, 64, 9, 8.5, 0)], "NMF", True),
        ("oval", [N(64, 64, 11, 7, 60)], "NMF", True),
        ("elongated", [N(64, 64, 15, 4, 120)], "AMF", True),
        ("pair-parallel", [N(56, 62, 10, 4.5, 40), N(72, 66, 10, 4.5, 45)], "NMF", True),
        ("pair-near", [N(56, 64, 10, 4.5, 80), N(72, 64, 10, 4.5, 95)], "NMF", True),
        ("pair-cross", [N(56, 64, 10, 4.5, 10), N(72, 64, 10, 4.5, 90)], "AMF", True),
        ("triple", [N(56, 58, 7, 5, 0), N(72, 60, 7, 5, 30), N(64, 72, 7, 5, 70)], "AMF", True),
        ("pair-roundish", [N(56, 64, 7, 6.9, 0), N(72, 64, 7, 6.9, 5)], "AMF", True),
        ("empty-tile", [], "AMF", False),
        ("ring-fallback", [N(64, 64, 11, 10, 0, ring=True)], "NMF", False),
        ("oval-fallback", [N(64, 64, 12, 7, 150)], "NMF", False),
        ("pair-fallback", [N(55, 64, 10, 4, 30), N(73, 64, 10, 4, 33)], "NMF", False),
        ("elongated-2", [N(64, 64, 16, 4, 20)], "AMF", True),
        ("far-pair", [N(20, 20, 9, 5, 0), N(105, 100, 9, 5, 0)], "AMF", True),
        ("round-2", [N(66, 62, 8, 7.5, 45)], "AMF", True),
        ("pair-parallel-2", [N(60, 56, 10, 4, 100), N(66, 72, 10, 4, 104)], "NMF", True),
        ("irregular", [N(64, 64, 12, 2.5, 0), N(64, 64, 2.5, 12, 0)], "AMF", True),
        ("triple-2", [N(58, 64, 6, 4, 0), N(70, 64, 6, 4, 90), N(64, 54, 6, 4, 45)], "NMF", True),
    ]


def build_mini_dataset(out_dir, size: int = 128, seed: int = 7) -> None:
    """Write the 20-image end-to-end fixture set to ``out_dir``."""
    import csv
    import json
    from pathlib import Path

    from .cell_geometry import CellInstance, DetectionSet, save_detections
    from .image import write_png

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "detections").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    scores, truth, manifest = [], [], []
    for k, (name, nuclei, label, with_det) in enumerate(_mini_scenarios()):
        image_id = f"mf{k:02d}-{name}"
        write_png(out / "images" / f"{image_id}.png", render_tile(nuclei, size=size, seed=seed + k))
        if with_det and name != "irregular":
            cells = [CellInstance.from_polygon(ellipse_polygon(n), 0.9) for n in nuclei]
            save_detections(out / "detections" / f"{image_id}.json", DetectionSet(image_id, size, size, cells))
        elif with_det:
            # Two crossing blobs detected as one concave outline.
            from shapely.geometry import Polygon
            from shapely.ops import unary_union

            merged = unary_union([Polygon(ellipse_polygon(n)) for n in nuclei])
            cell = CellInstance.from_polygon(np.asarray(merged.exterior.coords), 0.8)
            save_detections(out / "detections" / f"{image_id}.json", DetectionSet(image_id, size, size, [cell]))
        base = 0.62 if label == "AMF" else 0.42
        for m in range(3):
            p_amf = float(np.clip(base + rng.normal(0, 0.2), 0.01, 0.99))
            scores.append([image_id, f"model-{m}", repr(1 - p_amf), repr(p_amf)])
        truth.append([image_id, label])
        manifest.append([image_id, f"P{k // 2:03d}", "MIDOG25", label])

    def dump(name, header, rows):
        with open(out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    dump("scores.csv", ["image_id", "model_id", "p_nmf", "p_amf"], scores)
    dump("truth.csv", ["image_id", "label"], truth)
    dump("manifest.csv", ["image_id", "patient_id", "source", "label"], manifest)
    config = {
        "scores": "scores.csv",
        "detections": "detections",
        "images": "images",
        "truth": "truth.csv",
        "manifest": "manifest.csv",
        "rbr_enabled": True,
        "threshold": 0.5,
    }
    (out / "pipeline.json").write_text(json.dumps(config, indent=2) + "\n")
