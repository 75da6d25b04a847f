"""Image rasters, normalization, padding and file I/O.

Two in-memory representations are used throughout:

* ``ImageU8``: ``numpy.ndarray`` of shape ``(H, W, 3)`` and dtype ``uint8``.
* ``ImageF``: ``numpy.ndarray`` of shape ``(H, W, 3)`` with real values in ``[0, 1]``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Tuple

import numpy as np
from PIL import Image

from .errors import ShapeError

IMAGE_SUFFIXES = (".png", ".ppm", ".pnm")


def check_u8(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype != np.uint8 or x.ndim != 3 or x.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 uint8 image, got {x.dtype} {x.shape}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ShapeError("image must be at least 1x1")
    return x


def check_f(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 image, got shape {x.shape}")
    return x


def to_float(x: np.ndarray) -> np.ndarray:
    """ImageU8 -> ImageF (float32 in [0, 1])."""
    return check_u8(x).astype(np.float32) / np.float32(255.0)


def to_u8(x: np.ndarray) -> np.ndarray:
    """ImageF -> ImageU8 with round-half-away-from-zero and clamping."""
    from .quantization import round_half_away

    v = round_half_away(np.asarray(x, dtype=np.float64) * 255.0)
    return np.clip(v, 0, 255).astype(np.uint8)


def pad_to_stride(x: np.ndarray, stride: int) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Edge-replicate ``x`` on the bottom/right up to multiples of ``stride``.

    Returns the padded image and the original ``(H, W)`` for :func:`unpad`.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    x = check_f(x)
    h, w = x.shape[:2]
    ph = -h % stride
    pw = -w % stride
    if ph or pw:
        x = np.pad(x, ((0, ph), (0, pw), (0, 0)), mode="edge")
    return x, (h, w)


def unpad(x: np.ndarray, original_dims: Tuple[int, int]) -> np.ndarray:
    h, w = original_dims
    if h > x.shape[0] or w > x.shape[1]:
        raise ShapeError(f"cannot crop {x.shape[:2]} image to {h}x{w}")
    return x[:h, :w]


def read_image(path) -> np.ndarray:
    """Decode a PNG/PPM file to ImageU8 (alpha dropped, gray expanded)."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def write_image(x: np.ndarray, path) -> None:
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pnm") else "PNG"
    Image.fromarray(check_u8(x), mode="RGB").save(path, format=fmt)


def list_images(folder) -> list[Path]:
    folder = Path(folder)
    if not folder.is_dir():
        return []
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
