"""Structure disruption: optimize a random image to match a target's
per-tap Gram statistics, destroying global layout while keeping texture."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Sequence

import numpy as np

from . import featurenet
from .optim import AdamState, adam_step
from .tensor import Tensor, DimensionError, backward, gram


class SynthesisError(Exception):
    """Optimization produced a non-finite loss."""

    def __init__(self, step: int, loss_trace: List[float]):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.loss_trace = loss_trace


class DegenerateImageError(Exception):
    """Zero-variance image has no defined pixel correlation."""


@dataclass(frozen=True)
class SynthesisConfig:
    steps: int = 100
    lr: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init_mean: float = 0.5
    init_std: float = 0.1
    layer_weights: tuple = ()   # empty -> uniform 1.0 per tap
    seed: int = 0

    def validate(self, n_taps: int) -> None:
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.init_std < 0:
            raise ValueError("init_std must be non-negative")
        if self.layer_weights and len(self.layer_weights) != n_taps:
            raise ValueError(
                f"layer_weights has {len(self.layer_weights)} entries for {n_taps} taps")
        if any(w < 0 for w in self.layer_weights):
            raise ValueError("layer_weights must be non-negative")

    def resolved_weights(self, n_taps: int) -> tuple:
        return self.layer_weights if self.layer_weights else (1.0,) * n_taps

    def to_json_dict(self) -> dict:
        return {"steps": self.steps, "lr": self.lr, "beta1": self.beta1,
                "beta2": self.beta2, "eps": self.eps,
                "init_mean": self.init_mean, "init_std": self.init_std,
                "layer_weights": list(self.layer_weights), "seed": self.seed}

    @staticmethod
    def from_json_dict(d: dict) -> "SynthesisConfig":
        return SynthesisConfig(
            steps=d.get("steps", 100), lr=d.get("lr", 0.05),
            beta1=d.get("beta1", 0.9), beta2=d.get("beta2", 0.999),
            eps=d.get("eps", 1e-8), init_mean=d.get("init_mean", 0.5),
            init_std=d.get("init_std", 0.1),
            layer_weights=tuple(d.get("layer_weights", ())),
            seed=d.get("seed", 0))


APPROXIMATE_STEPS = 10   # fast preset used for training-set disruption
COMPLETE_STEPS = 100     # full-quality preset


def preset(steps: int, seed: int = 0, **overrides) -> SynthesisConfig:
    return SynthesisConfig(steps=steps, seed=seed, **overrides)


@dataclass
class SynthesisResult:
    image: np.ndarray            # (3,H,W), clamped to [0,1]
    loss_trace: List[float]
    seed: int
    config: SynthesisConfig


def gram_loss(target_grams: Sequence[np.ndarray], acts: Sequence[Tensor],
              weights: Sequence[float]) -> Tensor:
    """Weighted sum of squared Frobenius distances between the Gram matrix
    of each activation and its frozen target."""
    if not (len(target_grams) == len(acts) == len(weights)):
        raise DimensionError(
            f"gram_loss: {len(target_grams)} targets, {len(acts)} activations, "
            f"{len(weights)} weights")
    total = None
    for tg, act, w in zip(target_grams, acts, weights):
        g = gram(act)
        if g.shape != tg.shape:
            raise DimensionError(f"gram_loss: target {tg.shape} vs current {g.shape}")
        diff = g - Tensor(tg)
        term = diff.square().sum().scale(w)
        total = term if total is None else total + term
    return total


def synthesize(target: np.ndarray, net: featurenet.FeatureNet,
               cfg: SynthesisConfig, progress=None) -> SynthesisResult:
    """Generate a structure-disrupted variant of ``target``.

    The target's per-tap Gram matrices are computed once and frozen; a
    Gaussian-initialized image then takes ``cfg.steps`` Adam updates on
    the matching loss. Deterministic for fixed (target, net, cfg).
    """
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 3 or target.shape[0] != 3:
        raise DimensionError(f"synthesize: target must be (3,H,W), got {target.shape}")
    n_taps = len(net.config.taps)
    cfg.validate(n_taps)
    weights = cfg.resolved_weights(n_taps)

    target_grams = [gram(a).data.copy() for a in net.forward_taps(Tensor(target))]

    rng = np.random.default_rng(cfg.seed)
    img = Tensor(rng.normal(cfg.init_mean, cfg.init_std, size=target.shape),
                 requires_grad=True)
    state = AdamState([img])
    trace: List[float] = []
    for step in range(cfg.steps):
        acts = net.forward_taps(img)
        loss = gram_loss(target_grams, acts, weights)
        value = loss.item()
        if not np.isfinite(value):
            raise SynthesisError(step, trace)
        trace.append(value)
        img.zero_grad()
        backward(loss)
        adam_step([img], state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        if progress is not None:
            progress(step, value)

    return SynthesisResult(image=np.clip(img.data, 0.0, 1.0),
                           loss_trace=trace, seed=cfg.seed, config=cfg)


def structure_divergence(original: np.ndarray, variant: np.ndarray) -> float:
    """Pearson correlation of the two images' pixel vectors (mean removed).

    1 means identical layout, values near 0 mean the global arrangement
    diverged; used as a QA check that disruption actually happened.
    """
    a = np.asarray(original, dtype=np.float64).ravel()
    b = np.asarray(variant, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"structure_divergence: {original.shape} vs {variant.shape}")
    a = a - a.mean()
    b = b - b.mean()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateImageError("zero-variance image: correlation undefined")
    return float(np.dot(a, b) / (na * nb))
