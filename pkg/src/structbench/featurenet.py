"""Fixed convolutional feature extractor with designated tap layers.

A small random-filter conv stack whose tapped activations define the
Gram-matrix statistics used by the synthesis loss and the built-in
embedding provider.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .tensor import Tensor, DimensionError, avg_pool2, conv2d, max_pool2, relu

WEIGHT_MAGIC = b"FNW1"


class WeightFileError(Exception):
    """Weight file missing, truncated, or malformed."""


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class FeatureNetConfig:
    """Layer stack, tap indices, and weight initialization.

    ``layers`` entries are ConvSpec, "relu", or "pool". ``taps`` index
    into ``layers``; the output of each tapped layer is an activation
    the synthesis loss matches.
    """

    layers: tuple
    taps: tuple
    init_std: float = 0.1
    init_seed: int = 17
    weight_file: Optional[str] = None
    pool_kind: str = "avg"  # "avg" | "max"

    def validate(self) -> None:
        if not self.taps:
            raise ValueError("taps must be non-empty")
        if list(self.taps) != sorted(set(self.taps)):
            raise ValueError(f"taps must be strictly increasing, got {self.taps}")
        for t in self.taps:
            if not 0 <= t < len(self.layers):
                raise ValueError(f"tap index {t} out of range for {len(self.layers)} layers")
        if self.init_std < 0:
            raise ValueError("init_std must be non-negative")
        if self.pool_kind not in ("avg", "max"):
            raise ValueError(f"unknown pool_kind {self.pool_kind!r}")
        for layer in self.layers:
            if isinstance(layer, ConvSpec):
                if layer.out_channels < 1 or layer.kernel < 1 or layer.stride < 1 or layer.padding < 0:
                    raise ValueError(f"bad conv spec {layer}")
            elif layer not in ("relu", "pool"):
                raise ValueError(f"unknown layer {layer!r}")

    def conv_shapes(self, in_channels: int = 3) -> List[tuple]:
        """Weight shapes (C_out, C_in, k, k) for each conv, in layer order."""
        shapes = []
        c = in_channels
        for layer in self.layers:
            if isinstance(layer, ConvSpec):
                shapes.append((layer.out_channels, c, layer.kernel, layer.kernel))
                c = layer.out_channels
        return shapes

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
        return {"layers": layers, "taps": list(self.taps),
                "init_std": self.init_std, "init_seed": self.init_seed,
                "pool_kind": self.pool_kind}

    @staticmethod
    def from_json_dict(d: dict) -> "FeatureNetConfig":
        layers = []
        for entry in d["layers"]:
            if isinstance(entry, dict) and "conv" in entry:
                c = entry["conv"]
                layers.append(ConvSpec(c["out_channels"], c["kernel"],
                                       c.get("stride", 1), c.get("padding", 0)))
            else:
                layers.append(entry)
        cfg = FeatureNetConfig(layers=tuple(layers), taps=tuple(d["taps"]),
                               init_std=d.get("init_std", 0.1),
                               init_seed=d.get("init_seed", 17),
                               pool_kind=d.get("pool_kind", "avg"))
        cfg.validate()
        return cfg


def default_config() -> FeatureNetConfig:
    """Three-scale random filter bank ("vgg-lite"): taps after each relu."""
    return FeatureNetConfig(
        layers=(ConvSpec(16, 3, 1, 1), "relu", "pool",
                ConvSpec(32, 3, 1, 1), "relu", "pool",
                ConvSpec(64, 3, 1, 1), "relu"),
        taps=(1, 4, 6),
        init_std=0.1,
        init_seed=17,
    )


class FeatureNet:
    """Immutable realized network: config plus one weight tensor per conv."""

    def __init__(self, config: FeatureNetConfig, weights: List[np.ndarray]):
        expected = config.conv_shapes()
        got = [w.shape for w in weights]
        if got != expected:
            raise DimensionError(f"weight shapes {got} do not match config {expected}")
        self.config = config
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]

    def forward_taps(self, image: Tensor) -> List[Tensor]:
        """Run the stack on a (3,H,W) image and return tapped activations.

        Differentiable back to ``image``.
        """
        taps = set(self.config.taps)
        outs: List[Tensor] = []
        x = image
        wi = 0
        pool = avg_pool2 if self.config.pool_kind == "avg" else max_pool2
        for i, layer in enumerate(self.config.layers):
            if isinstance(layer, ConvSpec):
                x = conv2d(x, Tensor(self.weights[wi]), layer.stride, layer.padding)
                wi += 1
            elif layer == "relu":
                x = relu(x)
            else:
                x = pool(x)
            if i in taps:
                outs.append(x)
        return outs

    def embed(self, image: Tensor) -> np.ndarray:
        """Final-tap activations spatially average-pooled to a C-vector."""
        acts = self.forward_taps(image)
        last = acts[-1].data
        return last.reshape(last.shape[0], -1).mean(axis=1)


def build(config: FeatureNetConfig) -> FeatureNet:
    """Realize weights: from the configured file if set, else seeded Gaussian."""
    config.validate()
    if config.weight_file is not None:
        weights = load_weights(config.weight_file)
        return FeatureNet(config, weights)
    rng = np.random.default_rng(config.init_seed)
    weights = [rng.normal(0.0, config.init_std, size=shape)
               for shape in config.conv_shapes()]
    return FeatureNet(config, weights)


def save_weights(weights: List[np.ndarray], path) -> None:
    """Binary weight file: magic "FNW1", u32 record count, then per record
    u32 x 4 shape followed by shape-product little-endian f64 values."""
    with open(path, "wb") as f:
        f.write(WEIGHT_MAGIC)
        f.write(struct.pack("<I", len(weights)))
        for w in weights:
            if w.ndim != 4:
                raise WeightFileError(f"weight record must be rank 4, got {w.shape}")
            f.write(struct.pack("<4I", *w.shape))
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())


def load_weights(path) -> List[np.ndarray]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as exc:
        raise WeightFileError(f"cannot read weight file {path}: {exc}") from exc
    if blob[:4] != WEIGHT_MAGIC:
        raise WeightFileError(f"bad magic at offset 0 in {path}")
    if len(blob) < 8:
        raise WeightFileError(f"truncated header at offset {len(blob)} in {path}")
    (count,) = struct.unpack_from("<I", blob, 4)
    offset = 8
    weights = []
    for _ in range(count):
        if offset + 16 > len(blob):
            raise WeightFileError(f"truncated shape record at offset {offset} in {path}")
        shape = struct.unpack_from("<4I", blob, offset)
        offset += 16
        n = int(np.prod(shape))
        nbytes = n * 8
        if offset + nbytes > len(blob):
            raise WeightFileError(f"truncated data at offset {offset} in {path}")
        w = np.frombuffer(blob, dtype="<f8", count=n, offset=offset).reshape(shape)
        weights.append(w.astype(np.float64))
        offset += nbytes
    if offset != len(blob):
        raise WeightFileError(f"trailing bytes at offset {offset} in {path}")
    return weights


def save_config(config: FeatureNetConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.to_json_dict(), f, indent=2, sort_keys=True)


def load_config(path) -> FeatureNetConfig:
    with open(path, encoding="utf-8") as f:
        return FeatureNetConfig.from_json_dict(json.load(f))
