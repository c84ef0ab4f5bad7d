"""Spatial-location decoding probe: regress patch embeddings onto their
grid coordinates with a small MLP under 5-fold cross-validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from .optim import AdamState, adam_step
from .tensor import Tensor, DimensionError, backward, linear, relu


class ProbeError(Exception):
    """Invalid probe data or degenerate fold configuration."""


@dataclass
class PatchEmbeddingSet:
    """N images x L patches x D dims, with integer (x, y) per patch."""
    embeddings: np.ndarray     # (N, L, D)
    coords: np.ndarray         # (N, L, 2) integers
    max_x: int
    max_y: int

    def __post_init__(self):
        e = np.asarray(self.embeddings, dtype=np.float64)
        c = np.asarray(self.coords)
        if e.ndim != 3:
            raise ProbeError(f"embeddings must be (N,L,D), got {e.shape}")
        if c.shape != (e.shape[0], e.shape[1], 2):
            raise ProbeError(f"coords shape {c.shape} vs embeddings {e.shape}")
        if self.max_x <= 0 or self.max_y <= 0:
            raise ProbeError("max_x and max_y must be positive")
        if c[..., 0].min() < 0 or c[..., 0].max() > self.max_x \
                or c[..., 1].min() < 0 or c[..., 1].max() > self.max_y:
            raise ProbeError("coords outside [0,max_x]x[0,max_y]")
        self.embeddings = e
        self.coords = c.astype(np.int64)


def build_regression_data(pset: PatchEmbeddingSet):
    """Flatten to ((N*L) x D inputs, (N*L) x 2 targets), image-major."""
    n, l, d = pset.embeddings.shape
    return (pset.embeddings.reshape(n * l, d),
            pset.coords.reshape(n * l, 2).astype(np.float64))


def normalized_error(pred, truth, max_x: int, max_y: int) -> float:
    """0.5 * (|dx|/max_x + |dy|/max_y)."""
    if max_x <= 0 or max_y <= 0:
        raise ProbeError("max_x and max_y must be positive")
    return 0.5 * (abs(pred[0] - truth[0]) / max_x + abs(pred[1] - truth[1]) / max_y)


@dataclass(frozen=True)
class ProbeConfig:
    hidden: int = 64
    lr: float = 1e-2
    epochs: int = 500
    folds: int = 5
    init_seed: int = 0


@dataclass
class ProbeReport:
    fold_errors: List[float]
    mean_error: float
    std_error: float
    layer_id: str = ""

    def to_json_dict(self) -> dict:
        return {"fold_errors": self.fold_errors, "mean_error": self.mean_error,
                "std_error": self.std_error, "layer_id": self.layer_id}


class _Mlp:
    """D -> hidden -> 2 with relu, trained with Adam on MSE."""

    def __init__(self, d: int, hidden: int, seed: int):
        rng = np.random.default_rng(seed)
        self.w1 = Tensor(rng.normal(0, np.sqrt(2.0 / d), size=(hidden, d)),
                         requires_grad=True)
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = Tensor(rng.normal(0, np.sqrt(1.0 / hidden), size=(2, hidden)),
                         requires_grad=True)
        self.b2 = Tensor(np.zeros(2), requires_grad=True)

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x: Tensor) -> Tensor:
        return linear(relu(linear(x, self.w1, self.b1)), self.w2, self.b2)

    def fit(self, x: np.ndarray, t: np.ndarray, lr: float, epochs: int) -> None:
        state = AdamState(self.params())
        xt = Tensor(x)
        tt = Tensor(t)
        n = x.shape[0]
        for _ in range(epochs):
            pred = self.forward(xt)
            loss = (pred - tt).square().sum().scale(1.0 / n)
            for p in self.params():
                p.zero_grad()
            backward(loss)
            adam_step(self.params(), state, lr)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(x)).data


def cross_validate(pset: PatchEmbeddingSet, config: ProbeConfig = ProbeConfig(),
                   seed: int = 0, layer_id: str = "") -> ProbeReport:
    """Shuffle rows, split into ``folds`` near-equal folds, train on the
    rest, score mean normalized error on the held-out fold.

    Targets are regressed in normalized [0,1] coordinates; the error is
    equivalent to the original-unit formula by construction. Held-out
    predictions are clamped to the grid so errors stay in [0,1].
    """
    x, t = build_regression_data(pset)
    n = x.shape[0]
    if n < config.folds:
        raise ProbeError(f"{n} rows cannot form {config.folds} folds")
    scale = np.array([pset.max_x, pset.max_y], dtype=np.float64)
    t_norm = t / scale

    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    folds = np.array_split(order, config.folds)
    if any(len(f) == 0 for f in folds):
        raise ProbeError("degenerate empty fold")

    fold_errors = []
    for k, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != k])
        mlp = _Mlp(x.shape[1], config.hidden, seed=config.init_seed + k)
        mlp.fit(x[train_idx], t_norm[train_idx], config.lr, config.epochs)
        pred = np.clip(mlp.predict(x[test_idx]), 0.0, 1.0) * scale
        errs = [normalized_error(p, truth, pset.max_x, pset.max_y)
                for p, truth in zip(pred, t[test_idx])]
        fold_errors.append(float(np.mean(errs)))

    return ProbeReport(fold_errors=fold_errors,
                       mean_error=float(np.mean(fold_errors)),
                       std_error=float(np.std(fold_errors)),
                       layer_id=layer_id)


def load_patch_embeddings(embeddings_dir, coords_path) -> PatchEmbeddingSet:
    """Load the external layout: per-image .emb files holding L*D values
    (the embeddings.json index carries dim = L*D), plus a coords.json
    sidecar mapping image_id to a list of [x, y] patch coordinates."""
    root = Path(embeddings_dir)
    index = json.loads((root / "embeddings.json").read_text(encoding="utf-8"))
    coords_doc = json.loads(Path(coords_path).read_text(encoding="utf-8"))
    ids = sorted(index)
    if sorted(coords_doc) != ids:
        raise ProbeError("embeddings index and coords sidecar list different images")
    all_embs, all_coords = [], []
    l_expected = None
    for image_id in ids:
        coords = np.asarray(coords_doc[image_id])
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ProbeError(f"coords for {image_id!r} must be a list of [x, y]")
        l = coords.shape[0]
        if l_expected is None:
            l_expected = l
        elif l != l_expected:
            raise ProbeError(f"{image_id!r} has {l} patches, expected {l_expected}")
        vec = np.fromfile(root / index[image_id]["path"], dtype="<f8")
        if vec.size != index[image_id]["dim"] or vec.size % l:
            raise ProbeError(f"embedding size {vec.size} not divisible into {l} patches")
        all_embs.append(vec.reshape(l, vec.size // l))
        all_coords.append(coords)
    embs = np.stack(all_embs)
    coords = np.stack(all_coords)
    return PatchEmbeddingSet(embs, coords,
                             max_x=int(coords[..., 0].max()),
                             max_y=int(coords[..., 1].max()))
