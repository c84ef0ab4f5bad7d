"""Shared deterministic image fixtures for the test suite."""

from __future__ import annotations

import numpy as np


def periodic_texture(h: int = 64, w: int = 64) -> np.ndarray:
    """Periodic color gratings with a global diagonal luminance step.

    The gratings give rich local statistics; the diagonal step is the
    global structure that disruption should destroy.
    """
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    r = 0.5 + 0.25 * np.sin(2 * np.pi * xx / 8) * np.sin(2 * np.pi * yy / 8)
    g = 0.5 + 0.25 * np.sin(2 * np.pi * (xx + yy) / 12)
    b = 0.5 + 0.25 * np.cos(2 * np.pi * (xx - yy) / 16)
    img = np.stack([r, g, b])
    mask = (xx + yy) < (h + w) / 2
    img = img * (0.6 + 0.4 * mask)
    return np.clip(img, 0.0, 1.0)


def patch_texture(class_id: int, seed: int, h: int = 64, w: int = 64) -> np.ndarray:
    """Class-specific grating with one coherent orthogonal patch.

    The grating frequency and orientation identify the class. A
    fixed-size square region carries the orthogonal orientation; only
    its position varies between images, so per-class orientation-energy
    proportions stay constant and the structure lives purely in the
    spatial arrangement. Class gratings are deliberately low-frequency
    (a few cycles per image) and the additive noise is strong enough
    that class-trained features stay blind to high-frequency synthesis
    residues instead of using them as a shortcut.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    cycles = 2 + class_id
    angle = class_id * np.pi / 4
    phase = rng.uniform(0, 2 * np.pi)
    u = xx * np.cos(angle) + yy * np.sin(angle)
    main = 0.5 + 0.35 * np.sin(2 * np.pi * cycles * u / w + phase)
    v = xx * np.cos(angle + np.pi / 2) + yy * np.sin(angle + np.pi / 2)
    phase2 = rng.uniform(0, 2 * np.pi)
    ortho = 0.5 + 0.35 * np.sin(2 * np.pi * cycles * v / w + phase2)
    side = h // 3
    cy = int(rng.integers(0, h - side))
    cx = int(rng.integers(0, w - side))
    mask = np.zeros((h, w))
    mask[cy:cy + side, cx:cx + side] = 1.0
    base = main * (1 - mask) + ortho * mask
    img = np.stack([base, np.roll(base, 2, axis=0), np.roll(base, 2, axis=1)])
    img = img + 0.05 * rng.standard_normal((3, h, w))
    return np.clip(img, 0.0, 1.0)


def blob_texture(class_id: int, seed: int, h: int = 64, w: int = 64) -> np.ndarray:
    """Class-specific texture with a randomly placed bright blob.

    The texture (grating frequency/orientation) identifies the class;
    the blob position is per-image global structure.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    freq = 4 + 3 * class_id
    angle = class_id * np.pi / 7
    u = xx * np.cos(angle) + yy * np.sin(angle)
    base = 0.45 + 0.2 * np.sin(2 * np.pi * u / freq)
    img = np.stack([base, np.roll(base, class_id, axis=0), base[::-1]])
    cy = rng.integers(h // 4, h - h // 4)
    cx = rng.integers(w // 4, w - w // 4)
    blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 6.0 ** 2)))
    img = img + 0.4 * blob[None]
    img = img + 0.02 * rng.standard_normal((3, h, w))
    return np.clip(img, 0.0, 1.0)
