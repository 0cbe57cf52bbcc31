"""H&E stain normalization.

Two methods live here:

* Reinhard colour transfer: match per-channel mean and standard deviation in
  the decorrelated l-alpha-beta space (via log-LMS).
* Macenko stain separation: fit hematoxylin/eosin absorption vectors in
  optical-density space, then rescale concentrations to a target profile.

All functions are pure; images are ``(H, W, 3)`` uint8 arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DegenerateStains, InsufficientTissue, SchemaError
from .image import as_rgb8, to_uint8

# Reinhard et al. RGB -> LMS cone response.
RGB_TO_LMS = np.array(
    [
        [0.3811, 0.5783, 0.0402],
        [0.1967, 0.7244, 0.0782],
        [0.0241, 0.1288, 0.8444],
    ]
)
LMS_TO_RGB = np.linalg.inv(RGB_TO_LMS)

# log-LMS -> l-alpha-beta (Ruderman decorrelation).
LOGLMS_TO_LAB = np.diag([1 / np.sqrt(3), 1 / np.sqrt(6), 1 / np.sqrt(2)]) @ np.array(
    [[1.0, 1.0, 1.0], [1.0, 1.0, -2.0], [1.0, -1.0, 0.0]]
)
LAB_TO_LOGLMS = np.linalg.inv(LOGLMS_TO_LAB)

# Below this the source channel is treated as constant.
MIN_STD = 1e-6
MIN_TISSUE_PIXELS = 100
# Stain columns closer than this cannot be separated.
MIN_STAIN_SEPARATION_DEG = 5.0


# --------------------------------------------------------------------------
# Reinhard
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LabStats:
    """Per-channel mean and population std of an image in l-alpha-beta."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self):
        mean = tuple(float(v) for v in self.mean)
        std = tuple(float(v) for v in self.std)
        if len(mean) != 3 or len(std) != 3:
            raise ValueError("LabStats needs 3-vectors")
        if not all(np.isfinite(mean + std)):
            raise ValueError("LabStats values must be finite")
        if any(s < 0 for s in std):
            raise ValueError("LabStats std must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, data: dict) -> "LabStats":
        try:
            return cls(mean=data["mean"], std=data["std"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"invalid LabStats: {exc}") from exc


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """Map RGB pixels to l-alpha-beta, returning a float64 ``(H, W, 3)`` array.

    The log is taken on ``LMS + 1`` so that black pixels stay finite.
    """
    rgb = as_rgb8(img).astype(np.float64)
    lms = rgb @ RGB_TO_LMS.T
    return np.log10(lms + 1.0) @ LOGLMS_TO_LAB.T


def lab_to_rgb(lab: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_lab`, unrounded and unclipped float RGB."""
    lms = 10.0 ** (np.asarray(lab, dtype=np.float64) @ LAB_TO_LOGLMS.T) - 1.0
    return lms @ LMS_TO_RGB.T


def compute_lab_stats(img: np.ndarray) -> LabStats:
    lab = rgb_to_lab(img).reshape(-1, 3)
    return LabStats(mean=lab.mean(axis=0), std=lab.std(axis=0))


def reinhard_transfer(src: np.ndarray, target: LabStats) -> np.ndarray:
    """Rescale the l-alpha-beta channels of ``src`` to ``target`` statistics.

    Returns the transferred l-alpha-beta array before conversion back to RGB.
    A channel whose source std is below ``MIN_STD`` collapses to the target
    mean.
    """
    lab = rgb_to_lab(src)
    flat = lab.reshape(-1, 3)
    mu = flat.mean(axis=0)
    sigma = flat.std(axis=0)
    tgt_mu = np.asarray(target.mean)
    tgt_sigma = np.asarray(target.std)
    scale = np.where(sigma < MIN_STD, 0.0, tgt_sigma / np.where(sigma < MIN_STD, 1.0, sigma))
    return (lab - mu) * scale + tgt_mu


def reinhard_normalize(src: np.ndarray, target: LabStats) -> np.ndarray:
    return to_uint8(lab_to_rgb(reinhard_transfer(src, target)))


# --------------------------------------------------------------------------
# Macenko
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MacenkoParams:
    """Constants of the Macenko fit.

    Attributes:
        io: transmitted (background) light intensity.
        beta: OD threshold; pixels need every channel above it to count as tissue.
        alpha_percentile: robust extreme-angle percentile, in percent.
        max_percentile: percentile used for the per-stain maximum concentration.
    """

    io: float = 240.0
    beta: float = 0.15
    alpha_percentile: float = 1.0
    max_percentile: float = 99.0

    def __post_init__(self):
        if not self.io > 0:
            raise ValueError("io must be positive")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        if not 0 < self.alpha_percentile < 50:
            raise ValueError("alpha_percentile must lie in (0, 50)")
        if not 0 < self.max_percentile <= 100:
            raise ValueError("max_percentile must lie in (0, 100]")


@dataclass(frozen=True)
class StainProfile:
    """Fitted stain basis.

    ``stain_matrix`` is 3x2 with the hematoxylin-like column first; each column
    is a unit-norm, nonnegative OD direction.
    """

    stain_matrix: np.ndarray
    max_concentrations: np.ndarray

    def __post_init__(self):
        m = np.array(self.stain_matrix, dtype=np.float64)
        c = np.array(self.max_concentrations, dtype=np.float64).reshape(-1)
        if m.shape != (3, 2) or c.shape != (2,):
            raise ValueError("stain_matrix must be 3x2 and max_concentrations a 2-vector")
        if not np.all(np.isfinite(m)) or not np.all(np.isfinite(c)):
            raise ValueError("StainProfile values must be finite")
        if np.any(m < 0):
            raise ValueError("stain vectors must be nonnegative")
        if not np.allclose(np.linalg.norm(m, axis=0), 1.0, atol=1e-6):
            raise ValueError("stain vectors must have unit norm")
        if np.any(c <= 0):
            raise ValueError("max_concentrations must be positive")
        m.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "stain_matrix", m)
        object.__setattr__(self, "max_concentrations", c)

    def to_dict(self) -> dict:
        return {
            "stain_matrix": self.stain_matrix.tolist(),
            "max_concentrations": self.max_concentrations.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StainProfile":
        try:
            return cls(data["stain_matrix"], data["max_concentrations"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"invalid StainProfile: {exc}") from exc


def od_transform(img: np.ndarray, io: float = 240.0) -> np.ndarray:
    """Optical density ``-log10((I + 1) / io)`` per channel (float64)."""
    if not io > 0:
        raise ValueError("io must be positive")
    return -np.log10((as_rgb8(img).astype(np.float64) + 1.0) / io)


def od_inverse(od: np.ndarray, io: float = 240.0) -> np.ndarray:
    """Reconstruct 8-bit intensities from optical density."""
    return to_uint8(io * 10.0 ** (-np.asarray(od, dtype=np.float64)) - 1.0)


def tissue_od(img: np.ndarray, params: MacenkoParams) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(all_od, tissue_od)`` as ``(N, 3)`` arrays."""
    od = od_transform(img, params.io).reshape(-1, 3)
    return od, od[np.all(od > params.beta, axis=1)]


def _unit_nonneg(v: np.ndarray) -> np.ndarray:
    if v.sum() < 0:
        v = -v
    v = np.clip(v, 0.0, None)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise InsufficientTissue("stain direction vanished after clipping")
    return v / norm


def fit_stain_matrix(tissue: np.ndarray, params: MacenkoParams) -> np.ndarray:
    """Estimate the 3x2 stain basis from tissue OD pixels.

    Raises:
        InsufficientTissue: fewer than ``MIN_TISSUE_PIXELS`` tissue pixels.
        DegenerateStains: the two extreme directions nearly coincide.
    """
    if len(tissue) < MIN_TISSUE_PIXELS:
        raise InsufficientTissue(
            f"{len(tissue)} tissue pixels, need at least {MIN_TISSUE_PIXELS}"
        )
    _, evecs = np.linalg.eigh(np.cov(tissue, rowvar=False))
    plane = evecs[:, [2, 1]].copy()
    # Principal axis must point into the positive OD octant so angles
    # do not straddle the atan2 branch cut.
    if plane[:, 0].sum() < 0:
        plane[:, 0] *= -1
    proj = tissue @ plane
    phi = np.arctan2(proj[:, 1], proj[:, 0])
    lo, hi = np.percentile(phi, [params.alpha_percentile, 100 - params.alpha_percentile])
    v1 = _unit_nonneg(plane @ np.array([np.cos(lo), np.sin(lo)]))
    v2 = _unit_nonneg(plane @ np.array([np.cos(hi), np.sin(hi)]))
    separation = np.degrees(np.arccos(np.clip(v1 @ v2, -1.0, 1.0)))
    if separation < MIN_STAIN_SEPARATION_DEG:
        raise DegenerateStains(f"stain vectors only {separation:.2f} deg apart")
    # Hematoxylin absorbs more red light than eosin.
    if v2[0] > v1[0]:
        v1, v2 = v2, v1
    return np.column_stack([v1, v2])


def concentrations(od: np.ndarray, stain_matrix: np.ndarray) -> np.ndarray:
    """Least-squares stain concentrations, shape ``(2, N)``."""
    conc, *_ = np.linalg.lstsq(stain_matrix, od.T, rcond=None)
    return conc


def macenko_fit(img: np.ndarray, params: MacenkoParams | None = None) -> StainProfile:
    params = params or MacenkoParams()
    _, tissue = tissue_od(img, params)
    stain = fit_stain_matrix(tissue, params)
    max_c = np.percentile(concentrations(tissue, stain), params.max_percentile, axis=1)
    if np.any(max_c <= 0):
        raise InsufficientTissue("non-positive maximum stain concentration")
    return StainProfile(stain, max_c)


def macenko_normalize(
    src: np.ndarray, target: StainProfile, params: MacenkoParams | None = None
) -> np.ndarray:
    """Re-render ``src`` with the target stain basis and concentration range.

    Raises:
        InsufficientTissue: if ``src`` has too little tissue to fit.
    """
    params = params or MacenkoParams()
    src = as_rgb8(src)
    source = macenko_fit(src, params)
    od = od_transform(src, params.io).reshape(-1, 3)
    conc = concentrations(od, source.stain_matrix)
    conc *= (target.max_concentrations / source.max_concentrations)[:, None]
    out_od = (target.stain_matrix @ conc).T.reshape(src.shape)
    return od_inverse(out_od, params.io)


# --------------------------------------------------------------------------
# Target files
# --------------------------------------------------------------------------


def _read_json(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def load_lab_stats(path: str | Path) -> LabStats:
    return LabStats.from_dict(_read_json(path))


def load_stain_profile(path: str | Path) -> StainProfile:
    return StainProfile.from_dict(_read_json(path))


def save_json(path: str | Path, obj: LabStats | StainProfile) -> None:
    with open(path, "w") as fh:
        json.dump(obj.to_dict(), fh, indent=2)
        fh.write("\n")


def default_lab_target() -> LabStats:
    """Statistics of the bundled synthetic H&E target tile."""
    return LabStats.from_dict(json.loads(_data_text("target_lab.json")))


def default_stain_target() -> StainProfile:
    return StainProfile.from_dict(json.loads(_data_text("target_stain.json")))


def _data_text(name: str) -> str:
    return resources.files("mitorbr").joinpath("data", name).read_text()
