"""Image loading, preprocessing and serialization helpers.

Images cross module boundaries as ``uint8`` arrays of shape ``[H, W, 3]``.
"""

from __future__ import annotations

import hashlib
import io
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionError


def load_image(path: str | Path) -> np.ndarray:
    """Decode an image file to an RGB uint8 array."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_png(image: np.ndarray, path: str | Path) -> None:
    as_rgb_array(image)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image, mode="RGB").save(path, format="PNG")


def png_bytes(image: np.ndarray) -> bytes:
    """Encode an RGB array as PNG bytes (the wire format for VLM requests)."""
    as_rgb_array(image)
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def resize(image: np.ndarray, resolution: int) -> np.ndarray:
    """Resize to ``resolution`` x ``resolution`` with bicubic resampling."""
    as_rgb_array(image)
    if image.shape[0] == resolution and image.shape[1] == resolution:
        return image
    im = Image.fromarray(image, mode="RGB").resize(
        (resolution, resolution), Image.BICUBIC
    )
    return np.asarray(im, dtype=np.uint8)


def as_rgb_array(image: np.ndarray) -> np.ndarray:
    """Validate the [H, W, 3] uint8 convention; returns the input unchanged."""
    if not isinstance(image, np.ndarray):
        raise DimensionError(f"expected ndarray image, got {type(image).__name__}")
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionError(f"expected [H, W, 3] RGB image, got shape {image.shape}")
    if image.dtype != np.uint8:
        raise DimensionError(f"expected uint8 image, got dtype {image.dtype}")
    return image


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Rec. 601 luma in float64, range [0, 255]."""
    as_rgb_array(image)
    x = image.astype(np.float64)
    return 0.299 * x[..., 0] + 0.587 * x[..., 1] + 0.114 * x[..., 2]


def sha256_array(arr: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(str(arr.dtype).encode())
    h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
