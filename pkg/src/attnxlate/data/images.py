"""PNG I/O and the [-1, 1] <-> 8-bit mapping."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(x: np.ndarray, value_range: str = "image") -> np.ndarray:
    """Quantize to 8 bits. ``image`` expects [-1, 1], ``unit`` expects [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    lo, hi = (-1.0, 1.0) if value_range == "image" else (0.0, 1.0)
    tol = 1e-6
    if x.size and (x.min() < lo - tol or x.max() > hi + tol or not np.isfinite(x).all()):
        raise ValueError(f"values outside [{lo}, {hi}]")
    x = np.clip(x, lo, hi)
    scaled = (x + 1.0) * 127.5 if value_range == "image" else x * 255.0
    return np.rint(scaled).astype(np.uint8)


def from_uint8(p: np.ndarray, value_range: str = "image") -> np.ndarray:
    # double precision first so each level is the correctly rounded float32
    p = np.asarray(p, dtype=np.float64)
    out = p / 127.5 - 1.0 if value_range == "image" else p / 255.0
    return out.astype(np.float32)


def _chw_to_pil(arr: np.ndarray) -> Image.Image:
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim == 2:
        return Image.fromarray(np.ascontiguousarray(arr))
    return Image.fromarray(np.ascontiguousarray(arr.transpose(1, 2, 0)))


def encode_png(tensor: np.ndarray, value_range: str = "image") -> bytes:
    buf = io.BytesIO()
    _chw_to_pil(to_uint8(tensor, value_range)).save(buf, format="PNG")
    return buf.getvalue()


def save_image(path: str | Path, tensor: np.ndarray, value_range: str = "image") -> None:
    """Write a CHW (or HW) array as PNG. One channel becomes 8-bit grayscale."""
    from .checkpoint import atomic_write_bytes
    atomic_write_bytes(path, encode_png(tensor, value_range))


def load_image(path: str | Path, channels: int = 3, value_range: str = "image") -> np.ndarray:
    """Read a PNG into a float32 CHW array; grayscale is replicated to three channels."""
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if channels == 1:
                arr = np.asarray(im.convert("L"))[None]
            elif mode in ("L", "I", "I;16", "1", "LA"):
                g = np.asarray(im.convert("L"))
                arr = np.repeat(g[None], 3, axis=0)
            else:
                arr = np.asarray(im.convert("RGB")).transpose(2, 0, 1)
    except (OSError, ValueError) as e:
        raise OSError(f"cannot read image {path}: {e}") from e
    return from_uint8(arr, value_range)


def image_grid(rows: list[list[np.ndarray]], pad: int = 2) -> np.ndarray:
    """Tile CHW images in [-1, 1] into one CHW canvas, one row per sample."""
    def rgb(a):
        return np.repeat(a, 3, axis=0) if a.shape[0] == 1 else a

    h, w = rows[0][0].shape[1:]
    ncol = max(len(r) for r in rows)
    canvas = np.ones((3, len(rows) * (h + pad) - pad, ncol * (w + pad) - pad), dtype=np.float32)
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            canvas[:, i * (h + pad):i * (h + pad) + h, j * (w + pad):j * (w + pad) + w] = rgb(img)
    return canvas
