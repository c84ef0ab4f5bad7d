"""2n-class structure-sensitivity training: disrupted counterparts of each
class become their own classes, and evaluation folds the logits back."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .featurenet import ConvSpec, WeightFileError, load_weights, save_weights
from .oddity import Embedding
from .optim import MomentumState, sgd_step
from .tensor import (
    Tensor,
    DimensionError,
    avg_pool2,
    backward,
    conv2d,
    linear,
    relu,
    softmax_cross_entropy,
    spatial_mean,
)


class TrainingError(Exception):
    """Training aborted (non-finite loss); carries the loss curve so far."""

    def __init__(self, message: str, loss_curve: List[float]):
        super().__init__(message)
        self.loss_curve = loss_curve


class LabelError(Exception):
    """Dataset/label bookkeeping violation."""


@dataclass
class LabeledItem:
    image_path: str
    label: int


@dataclass
class LabeledDataset:
    """Items labeled 0..n-1 for originals; disrupted counterparts of class
    i carry label i+n."""
    items: List[LabeledItem]
    n_base_classes: int

    @property
    def n_classes(self) -> int:
        return max((it.label for it in self.items), default=-1) + 1


def expand_labels(base: LabeledDataset,
                  disrupted_per_class: Dict[int, Sequence[str]]) -> LabeledDataset:
    """Attach disrupted images of class i as class i+n."""
    n = base.n_base_classes
    for label in range(n):
        if not disrupted_per_class.get(label):
            raise LabelError(f"class {label} has no disrupted images")
    extra = set(disrupted_per_class) - set(range(n))
    if extra:
        raise LabelError(f"disrupted images for unknown classes {sorted(extra)}")
    items = list(base.items)
    for label in range(n):
        for path in disrupted_per_class[label]:
            items.append(LabeledItem(image_path=path, label=label + n))
    return LabeledDataset(items=items, n_base_classes=n)


def remap_logits(z: np.ndarray) -> np.ndarray:
    """Fold a 2n-logit vector back to n by z'_i = z_i + z_{i+n}."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.size % 2:
        raise DimensionError(f"remap_logits: need an even-length vector, got {z.shape}")
    n = z.size // 2
    return z[:n] + z[n:]


@dataclass(frozen=True)
class ClassifierConfig:
    layers: tuple                   # ConvSpec | "relu" | "pool"
    n_classes: int
    input_hw: tuple = (64, 64)
    init_std: float = 1.0
    init_seed: int = 0

    def to_json_dict(self) -> dict:
        layers = []
        for layer in self.layers:
            if isinstance(layer, ConvSpec):
                layers.append({"conv": {"out_channels": layer.out_channels,
                                        "kernel": layer.kernel,
                                        "stride": layer.stride,
                                        "padding": layer.padding}})
            else:
                layers.append(layer)
        return {"layers": layers, "n_classes": self.n_classes,
                "input_hw": list(self.input_hw), "init_std": self.init_std,
                "init_seed": self.init_seed}

    @staticmethod
    def from_json_dict(d: dict) -> "ClassifierConfig":
        layers = []
        for entry in d["layers"]:
            if isinstance(entry, dict) and "conv" in entry:
                c = entry["conv"]
                layers.append(ConvSpec(c["out_channels"], c["kernel"],
                                       c.get("stride", 1), c.get("padding", 0)))
            else:
                layers.append(entry)
        return ClassifierConfig(layers=tuple(layers), n_classes=d["n_classes"],
                                input_hw=tuple(d["input_hw"]),
                                init_std=d.get("init_std", 1.0),
                                init_seed=d.get("init_seed", 0))


def default_classifier_config(n_classes: int, input_hw=(64, 64)) -> ClassifierConfig:
    return ClassifierConfig(
        layers=(ConvSpec(8, 3, 1, 1), "relu", "pool",
                ConvSpec(16, 3, 1, 1), "relu", "pool",
                ConvSpec(16, 3, 1, 1), "relu", "pool"),
        n_classes=n_classes,
        input_hw=input_hw)


class ToyClassifier:
    """Small conv stack, global average pooling, then a linear head.

    The pooled pre-head channel vector is the model's "raw features"
    used by the oddity evaluation; logits are only for classification.
    Pooling before the head means positional detail cannot be read off
    directly, so any structure sensitivity must live in channel statistics.
    """

    def __init__(self, config: ClassifierConfig,
                 conv_weights: Optional[List[np.ndarray]] = None,
                 head: Optional[tuple] = None):
        self.config = config
        rng = np.random.default_rng(config.init_seed)
        shapes = self._conv_shapes()
        if conv_weights is None:
            # He-style scaling keeps activations alive through the relu stack;
            # init_std acts as a gain multiplier.
            conv_weights = [
                rng.normal(0.0, config.init_std * np.sqrt(2.0 / (s[1] * s[2] * s[3])),
                           size=s)
                for s in shapes]
        if [w.shape for w in conv_weights] != shapes:
            raise DimensionError(
                f"conv weight shapes {[w.shape for w in conv_weights]} vs config {shapes}")
        self.conv_params = [Tensor(w, requires_grad=True) for w in conv_weights]
        d = self.feature_dim()
        if head is None:
            hw = rng.normal(0.0, config.init_std / np.sqrt(d),
                            size=(config.n_classes, d))
            hb = np.zeros(config.n_classes)
        else:
            hw, hb = head
            if hw.shape != (config.n_classes, d) or hb.shape != (config.n_classes,):
                raise DimensionError(
                    f"head shapes {hw.shape}/{hb.shape} vs ({config.n_classes}, {d})")
        self.head_w = Tensor(hw, requires_grad=True)
        self.head_b = Tensor(hb, requires_grad=True)

    def _conv_shapes(self) -> List[tuple]:
        shapes = []
        c = 3
        for layer in self.config.layers:
            if isinstance(layer, ConvSpec):
                shapes.append((layer.out_channels, c, layer.kernel, layer.kernel))
                c = layer.out_channels
        return shapes

    def feature_dim(self) -> int:
        c = 3
        for layer in self.config.layers:
            if isinstance(layer, ConvSpec):
                c = layer.out_channels
        return c

    def params(self) -> List[Tensor]:
        return self.conv_params + [self.head_w, self.head_b]

    def feature_map(self, x: Tensor) -> Tensor:
        """Pooled conv-stack output; (3,H,W) -> (C,), (N,3,H,W) -> (N,C)."""
        wi = 0
        for layer in self.config.layers:
            if isinstance(layer, ConvSpec):
                x = conv2d(x, self.conv_params[wi], layer.stride, layer.padding)
                wi += 1
            elif layer == "relu":
                x = relu(x)
            else:
                x = avg_pool2(x)
        return spatial_mean(x)

    def logits(self, x: Tensor) -> Tensor:
        return linear(self.feature_map(x), self.head_w, self.head_b)

    def features(self, image: np.ndarray) -> np.ndarray:
        """Raw pre-head feature vector for a single (3,H,W) image."""
        return self.feature_map(Tensor(np.asarray(image, dtype=np.float64))).data.copy()

    # -- persistence: conv records, then head weight (M,D,1,1), bias (M,1,1,1)

    def save(self, path) -> None:
        path = Path(path)
        records = [p.data for p in self.conv_params]
        m, d = self.head_w.data.shape
        records.append(self.head_w.data.reshape(m, d, 1, 1))
        records.append(self.head_b.data.reshape(m, 1, 1, 1))
        save_weights(records, path)
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(self.config.to_json_dict(), indent=2, sort_keys=True),
            encoding="utf-8")

    @staticmethod
    def load(path) -> "ToyClassifier":
        path = Path(path)
        cfg_path = path.with_suffix(path.suffix + ".json")
        if not cfg_path.exists():
            raise WeightFileError(f"missing classifier config {cfg_path}")
        config = ClassifierConfig.from_json_dict(
            json.loads(cfg_path.read_text(encoding="utf-8")))
        records = load_weights(path)
        if len(records) < 2:
            raise WeightFileError(f"classifier file {path} lacks head records")
        conv_weights = records[:-2]
        hw = records[-2]
        hb = records[-1]
        head = (hw.reshape(hw.shape[0], hw.shape[1]),
                hb.reshape(hb.shape[0]))
        return ToyClassifier(config, conv_weights, head)


def train(model: ToyClassifier, images: np.ndarray, labels: np.ndarray,
          epochs: int, lr: float, batch_size: int = 32, seed: int = 0,
          momentum: float = 0.9, progress=None) -> List[float]:
    """Minibatch SGD+momentum on softmax cross-entropy.

    ``images`` is (N,3,H,W) in [0,1]; ``labels`` integer classes below
    the head width. Returns the per-epoch mean loss curve. Deterministic
    for a fixed seed.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = images.shape[0]
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} vs {n} images")
    if labels.max() >= model.config.n_classes:
        raise LabelError(
            f"label {labels.max()} out of range for head width {model.config.n_classes}")

    rng = np.random.default_rng(seed)
    state = MomentumState(model.params())
    curve: List[float] = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            x = Tensor(images[idx])
            loss = softmax_cross_entropy(model.logits(x), labels[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss in epoch {epoch}", curve)
            epoch_loss += value * len(idx)
            for p in model.params():
                p.zero_grad()
            backward(loss)
            sgd_step(model.params(), state, lr, momentum)
        curve.append(epoch_loss / n)
        if progress is not None:
            progress(epoch, curve[-1])
    return curve


def accuracy(model: ToyClassifier, images: np.ndarray, labels: np.ndarray,
             remap: bool = False, batch_size: int = 64) -> float:
    """Top-1 accuracy; with ``remap`` the 2n logits fold back to n first."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    correct = 0
    for start in range(0, images.shape[0], batch_size):
        z = model.logits(Tensor(images[start:start + batch_size])).data
        if remap:
            z = np.stack([remap_logits(row) for row in z])
        correct += int((z.argmax(axis=1) == labels[start:start + batch_size]).sum())
    return correct / images.shape[0]


class ClassifierFeatureProvider:
    """Embeds images with a trained classifier's raw pre-head features.

    Deliberately bypasses logits and remapping: the oddity metric
    compares representations, not class scores.
    """

    def __init__(self, model: ToyClassifier):
        self.model = model

    def embedding(self, image_id: str, image_path) -> Embedding:
        from . import imageio
        return Embedding(self.model.features(imageio.read_rgb(image_path)), image_id)
