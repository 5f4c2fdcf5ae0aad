"""Image and mask values, colour conversion and pixel-space distances.

Images are float64 arrays shaped ``(H, W, 3)`` with values in [0, 1];
masks are float64 arrays shaped ``(H, W)`` with weights in [0, 1].  HSV
images use the same layout with hue stored as a fraction of a full turn.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import kernels

# Derivative reported by the clip at exactly lo or hi.  With the interior
# convention a parameter sitting on a saturation edge still receives gradient.
CLIP_BOUNDARY_GRAD = True


class ShapeMismatchError(ValueError):
    """Operands do not share the same spatial dimensions."""


def as_image(data, *, copy=False) -> np.ndarray:
    img = np.array(data, dtype=np.float64, copy=copy)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"image must be shaped (H, W, 3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError("image must have at least one pixel")
    return img


def as_mask(data, shape=None) -> np.ndarray:
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"mask must be shaped (H, W), got {m.shape}")
    if shape is not None and m.shape != tuple(shape[:2]):
        raise ShapeMismatchError(f"mask {m.shape} does not match image {tuple(shape[:2])}")
    if m.size and (m.min() < 0.0 or m.max() > 1.0):
        raise ValueError("mask weights must lie in [0, 1]")
    return m


def full_mask(shape, value=1.0) -> np.ndarray:
    return np.full(tuple(shape[:2]), float(value))


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"incompatible operands: {a.shape} vs {b.shape}")


def rgb_to_hsv(img) -> np.ndarray:
    """Hexcone RGB -> HSV.  Gray pixels get H = 0 and S = 0."""
    return kernels.rgb_to_hsv(as_image(img))


def hsv_to_rgb(hsv) -> np.ndarray:
    return kernels.hsv_to_rgb(as_image(hsv))


def clipped_linear(x, lo=0.0, hi=1.0, boundary_grad=None):
    """Return ``(clip(x, lo, hi), d clip / dx)``; works on scalars and arrays."""
    if not lo < hi:
        raise ValueError("clipped_linear needs lo < hi")
    if boundary_grad is None:
        boundary_grad = CLIP_BOUNDARY_GRAD
    x = np.asarray(x, dtype=np.float64)
    value = np.clip(x, lo, hi)
    if boundary_grad:
        deriv = ((x >= lo) & (x <= hi)).astype(np.float64)
    else:
        deriv = ((x > lo) & (x < hi)).astype(np.float64)
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


def laplacian(img) -> np.ndarray:
    """4-neighbour discrete Laplacian per channel with replicate padding.

    The result is a signed field and is not clipped.
    """
    return kernels.laplacian(np.asarray(img, dtype=np.float64))


def l1_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    check_same_shape(a, b)
    return float(np.abs(a - b).mean())


def l1_grad(a, b) -> np.ndarray:
    """Gradient of ``l1_distance(a, b)`` with respect to ``a`` (sign(0) = 0)."""
    return np.sign(a - b) / a.size


# ---------------------------------------------------------------------------
# 8-bit file I/O
# ---------------------------------------------------------------------------


def _to_bytes(arr: np.ndarray) -> np.ndarray:
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def _is_raw(path) -> bool:
    return Path(path).suffix.lower() == ".npy"


def read_image(path) -> np.ndarray:
    """Read an 8-bit image file, or a float ``.npy`` array stored losslessly."""
    if _is_raw(path):
        return np.clip(as_image(np.load(path)), 0.0, 1.0)
    with PILImage.open(path) as im:
        data = np.asarray(im.convert("RGB"), dtype=np.float64)
    return data / 255.0


def write_image(path, img) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if _is_raw(path):
        np.save(path, as_image(img))
        return
    PILImage.fromarray(_to_bytes(as_image(img)), mode="RGB").save(path)


def read_mask(path) -> np.ndarray:
    if _is_raw(path):
        return as_mask(np.load(path))
    with PILImage.open(path) as im:
        data = np.asarray(im.convert("L"), dtype=np.float64)
    return data / 255.0


def write_mask(path, mask) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if _is_raw(path):
        np.save(path, as_mask(mask))
        return
    PILImage.fromarray(_to_bytes(as_mask(mask)), mode="L").save(path)


def resize_gier(img: np.ndarray, short_side=300, long_cap=500) -> np.ndarray:
    """Resize so the short side is ``short_side`` unless that pushes the long
    side past ``long_cap``; aspect ratio is kept."""
    h, w = img.shape[:2]
    scale = short_side / min(h, w)
    if max(h, w) * scale > long_cap:
        scale = long_cap / max(h, w)
    size = (max(1, round(w * scale)), max(1, round(h * scale)))
    if size == (w, h):
        return img
    pil = PILImage.fromarray(_to_bytes(img), mode="RGB").resize(size, PILImage.BILINEAR)
    return np.asarray(pil, dtype=np.float64) / 255.0


def resize_mask(mask: np.ndarray, shape) -> np.ndarray:
    h, w = shape[:2]
    if mask.shape == (h, w):
        return mask
    pil = PILImage.fromarray(_to_bytes(mask), mode="L").resize((w, h), PILImage.NEAREST)
    return np.asarray(pil, dtype=np.float64) / 255.0
