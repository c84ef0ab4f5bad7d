"""Input-sensitivity maps: averaged noisy input gradients of a class
logit, rescaled to [0,1], with binary-mask thresholding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distinguish import ToyClassifier
from .tensor import Tensor, backward


@dataclass
class SensitivityMap:
    values: np.ndarray        # (H, W) in [0,1] after rescale
    image_id: str
    class_index: int
    n_samples: int
    noise_std: float
    constant: bool = False    # raw map was constant; values forced to zeros


def _rescale(raw: np.ndarray):
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw), True
    return (raw - lo) / (hi - lo), False


def class_gradient(model: ToyClassifier, image: np.ndarray, class_index: int,
                   use_probability: bool = False) -> np.ndarray:
    """Gradient magnitude of the class score w.r.t. the input image.

    Differentiates the raw logit by default (``use_probability`` switches
    to the softmax output). RGB gradients reduce to one plane by the max
    of absolute values across channels.
    """
    k = model.config.n_classes
    if not 0 <= class_index < k:
        raise IndexError(f"class {class_index} out of range for head width {k}")
    img = Tensor(np.asarray(image, dtype=np.float64), requires_grad=True)
    logits = model.logits(img)
    if use_probability:
        # softmax probability via exp(logit_c) / sum exp; differentiate
        # -log of it and negate to avoid building exp directly
        shift = logits.data.max()
        exps = np.exp(logits.data - shift)
        probs = exps / exps.sum()
        onehot = np.zeros(k)
        onehot[class_index] = 1.0
        # d p_c / d z = p_c * (onehot - p); chain through a weighted sum
        weights = probs[class_index] * (onehot - probs)
        score = (logits * Tensor(weights)).sum()
    else:
        onehot = np.zeros(k)
        onehot[class_index] = 1.0
        score = (logits * Tensor(onehot)).sum()
    backward(score)
    return np.abs(img.grad).max(axis=0)


def smoothgrad(model: ToyClassifier, image: np.ndarray, class_index: int,
               n_samples: int = 32, noise_std: float = 0.1, seed: int = 0,
               image_id: str = "", use_probability: bool = False) -> SensitivityMap:
    """Mean class gradient over ``n_samples`` Gaussian-noised copies of the
    image, rescaled to [0,1]. Pairwise summation keeps the mean
    deterministic regardless of accumulation order."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if noise_std < 0:
        raise ValueError(f"noise_std must be >= 0, got {noise_std}")
    image = np.asarray(image, dtype=np.float64)
    rng = np.random.default_rng(seed)
    maps = np.empty((n_samples,) + image.shape[1:])
    for i in range(n_samples):
        noisy = image if noise_std == 0.0 else image + rng.normal(0.0, noise_std, image.shape)
        maps[i] = class_gradient(model, noisy, class_index, use_probability)
    raw = _pairwise_mean(maps)
    values, constant = _rescale(raw)
    return SensitivityMap(values=values, image_id=image_id,
                          class_index=class_index, n_samples=n_samples,
                          noise_std=noise_std, constant=constant)


def _pairwise_mean(maps: np.ndarray) -> np.ndarray:
    stack = [m for m in maps]
    while len(stack) > 1:
        merged = []
        for i in range(0, len(stack) - 1, 2):
            merged.append(stack[i] + stack[i + 1])
        if len(stack) % 2:
            merged.append(stack[-1])
        stack = merged
    return stack[0] / maps.shape[0]


def binary_mask(smap: SensitivityMap, threshold: float = 0.15) -> np.ndarray:
    """Boolean mask marking pixels with sensitivity >= threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0,1], got {threshold}")
    return smap.values >= threshold
