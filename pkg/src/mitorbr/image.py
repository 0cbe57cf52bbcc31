"""8-bit RGB image helpers.

Images are plain ``numpy`` arrays of shape ``(height, width, 3)`` and dtype
``uint8``; row-major interleaved RGB, the same memory layout PNG decoders
produce.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def as_rgb8(img) -> np.ndarray:
    """Validate and return ``img`` as a ``(H, W, 3)`` uint8 array."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) RGB array, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("image must have positive width and height")
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
    return arr


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Round half up and clip a float array to the 8-bit range."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def read_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im.convert("RGB"), dtype=np.uint8)


def write_png(path: str | Path, img: np.ndarray) -> None:
    Image.fromarray(as_rgb8(img), mode="RGB").save(path, format="PNG")
