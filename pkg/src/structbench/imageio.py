"""8-bit PNG persistence for float images in [0,1], channel-first."""

from __future__ import annotations

import numpy as np
from PIL import Image


class ImageDecodeError(Exception):
    """File missing or not decodable as an RGB image."""


def write_rgb(path, img: np.ndarray) -> None:
    """Quantize a (3,H,W) float image in [0,1] to 8-bit RGB PNG."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected (3,H,W) image, got {arr.shape}")
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def read_rgb(path) -> np.ndarray:
    """Decode an image file to a (3,H,W) float array with values pixel/255."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc
    return arr.transpose(2, 0, 1) / 255.0


def quantize(img: np.ndarray) -> np.ndarray:
    """The image as it will read back after an 8-bit write."""
    u8 = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255)
    return u8 / 255.0


def write_gray(path, img: np.ndarray) -> None:
    """Write an (H,W) float image in [0,1] as 8-bit grayscale PNG."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected (H,W) image, got {arr.shape}")
    u8 = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path, format="PNG")


def write_mask(path, mask: np.ndarray) -> None:
    """Write an (H,W) boolean mask as a 1-bit PNG."""
    arr = np.asarray(mask, dtype=bool)
    Image.fromarray(arr).convert("1").save(path, format="PNG")
