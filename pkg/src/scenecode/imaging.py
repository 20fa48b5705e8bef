"""8-bit grayscale PNG conversion used at every external image boundary.

Quantization to uint8 happens only here; training and evaluation stay in
float32. One shared writer keeps CLI files and HTTP payloads byte-identical
for identical float inputs.
"""

from __future__ import annotations

import io

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DomainError


def to_uint8(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise DomainError(f"expected a (H,W) or (1,H,W) image, got shape {arr.shape}")
    return np.clip(np.rint(arr.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)


def png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def write_png(path, image: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(png_bytes(image))


def from_png_bytes(data: bytes) -> np.ndarray:
    """Decode PNG bytes to a (1, H, W) float32 image in [0, 1]."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            gray = im.convert("L")
            arr = np.asarray(gray, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError) as e:
        raise DomainError(f"not a decodable image: {e}") from e
    return arr[None]


def read_png(path) -> np.ndarray:
    with open(path, "rb") as f:
        return from_png_bytes(f.read())
