"""RGB8 image buffers: validation, PNG/JPEG I/O and content digests.

An image buffer is a C-contiguous ``uint8`` numpy array of shape (height, width, 3).
"""
from __future__ import annotations

import hashlib
import io
import os

import numpy as np
from PIL import Image


def check_image(image) -> np.ndarray:
    """Validate and coerce ``image`` to a (H, W, 3) uint8 array."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an RGB image of shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError("image has zero width or height")
    if arr.dtype != np.uint8:
        if np.issubdtype(arr.dtype, np.integer) and (arr.min() < 0 or arr.max() > 255):
            raise ValueError("pixel values outside 0..255")
        arr = arr.astype(np.uint8)
    return np.ascontiguousarray(arr)


def image_size(image: np.ndarray):
    """(width, height) of an image buffer."""
    return image.shape[1], image.shape[0]


def image_digest(image: np.ndarray) -> str:
    """SHA-256 over the shape header and raw row-major RGB bytes."""
    arr = check_image(image)
    h = hashlib.sha256()
    h.update(f"{arr.shape[1]}x{arr.shape[0]}:".encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return check_image(np.array(im.convert("RGB")))


def encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(check_image(image), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_png(image: np.ndarray, path) -> None:
    data = encode_png(image)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def resize(image: np.ndarray, width: int, height: int) -> np.ndarray:
    im = Image.fromarray(check_image(image), mode="RGB")
    return np.array(im.resize((width, height), Image.Resampling.BILINEAR))
