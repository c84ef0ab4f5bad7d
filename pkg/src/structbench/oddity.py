"""Odd-one-out evaluation over triplets via cosine distances between
embeddings from a pluggable provider."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Protocol, Sequence

import numpy as np

from . import featurenet, imageio
from .dataset import DatasetManifest
from .tensor import Tensor


class MetricError(Exception):
    """Invalid embedding (zero norm, dim mismatch) or missing image."""


@dataclass
class Embedding:
    vector: np.ndarray
    image_id: str

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise MetricError(f"embedding for {self.image_id} must be a 1-D vector")
        if not np.all(np.isfinite(v)):
            raise MetricError(f"non-finite embedding for {self.image_id}")
        if np.linalg.norm(v) == 0.0:
            raise MetricError(f"zero-norm embedding for {self.image_id}")
        self.vector = v


@dataclass
class TripletVerdict:
    triplet_id: str
    scores: List[float]
    chosen: int
    correct: bool
    tie_flag: bool


def cosine_distance(u: Embedding, v: Embedding) -> float:
    """1 - cos(u, v); lies in [0, 2]."""
    a, b = u.vector, v.vector
    if a.shape != b.shape:
        raise MetricError(f"dim mismatch: {a.shape} vs {b.shape}")
    return float(1.0 - np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def oddity_scores(embeddings: Sequence[Embedding]) -> List[float]:
    """Average cosine distance from each of the three items to the other two."""
    if len(embeddings) != 3:
        raise MetricError(f"expected 3 embeddings, got {len(embeddings)}")
    d01 = cosine_distance(embeddings[0], embeddings[1])
    d02 = cosine_distance(embeddings[0], embeddings[2])
    d12 = cosine_distance(embeddings[1], embeddings[2])
    return [(d01 + d02) / 2.0, (d01 + d12) / 2.0, (d02 + d12) / 2.0]


def select_odd(scores: Sequence[float]) -> tuple:
    """Index of the largest dissimilarity score.

    Softmax is strictly monotone, so argmax over softmax(scores) equals
    argmax over the raw scores; the raw argmax avoids overflow. Ties go
    to the lowest index with ``tie_flag`` set.
    """
    s = [float(x) for x in scores]
    if len(s) != 3 or not all(np.isfinite(s)):
        raise MetricError(f"scores must be three finite reals, got {scores}")
    best = max(range(3), key=lambda i: s[i])
    # argmax with ties going to the lowest index: max() already scans in
    # order and keeps the first maximum
    tie = s.count(s[best]) > 1
    return best, tie


class EmbeddingProvider(Protocol):
    def embedding(self, image_id: str, image_path: Path) -> Embedding: ...


class FeatureNetProvider:
    """Embeds images with a FeatureNet: final tap, spatially average-pooled."""

    def __init__(self, net: featurenet.FeatureNet):
        self.net = net

    def embedding(self, image_id: str, image_path: Path) -> Embedding:
        img = imageio.read_rgb(image_path)
        return Embedding(self.net.embed(Tensor(img)), image_id)


class PixelProvider:
    """Embeds an image as its flattened pixel vector (oracle baseline)."""

    def embedding(self, image_id: str, image_path: Path) -> Embedding:
        return Embedding(imageio.read_rgb(image_path).ravel(), image_id)


class RandomProvider:
    """Seeded random unit vectors, one per image id (chance baseline)."""

    def __init__(self, dim: int = 16, seed: int = 0):
        self.dim = dim
        self.rng = np.random.default_rng(seed)
        self._cache: Dict[str, np.ndarray] = {}

    def embedding(self, image_id: str, image_path: Path) -> Embedding:
        if image_id not in self._cache:
            v = self.rng.standard_normal(self.dim)
            self._cache[image_id] = v / np.linalg.norm(v)
        return Embedding(self._cache[image_id], image_id)


class FileProvider:
    """Embeddings from disk: ``embeddings.json`` maps image_id to
    {path, dim}; each file holds little-endian f64 values."""

    def __init__(self, directory):
        self.root = Path(directory)
        index_path = self.root / "embeddings.json"
        if not index_path.exists():
            raise MetricError(f"missing embeddings index {index_path}")
        self.index = json.loads(index_path.read_text(encoding="utf-8"))

    def embedding(self, image_id: str, image_path: Path) -> Embedding:
        entry = self.index.get(image_id)
        if entry is None:
            raise MetricError(f"no embedding for image id {image_id!r}")
        vec = np.fromfile(self.root / entry["path"], dtype="<f8")
        if vec.size != entry["dim"]:
            raise MetricError(
                f"embedding for {image_id!r}: expected dim {entry['dim']}, "
                f"file holds {vec.size}")
        return Embedding(vec.astype(np.float64), image_id)


def write_embeddings(directory, vectors: Dict[str, np.ndarray]) -> None:
    """Write the FileProvider layout: one .emb per image plus the index."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    index = {}
    for image_id, vec in vectors.items():
        v = np.ascontiguousarray(vec, dtype="<f8")
        # ids may contain path separators; keep files flat in the directory
        rel = image_id.replace("/", "_") + ".emb"
        v.tofile(root / rel)
        index[image_id] = {"path": rel, "dim": int(v.size)}
    (root / "embeddings.json").write_text(
        json.dumps(index, indent=2, sort_keys=True), encoding="utf-8")


@dataclass
class EvaluationReport:
    accuracy: float
    verdicts: List[TripletVerdict]
    ties: int

    def to_json_dict(self) -> dict:
        return {"accuracy": self.accuracy, "ties": self.ties,
                "n_triplets": len(self.verdicts),
                "verdicts": [{"id": v.triplet_id, "scores": v.scores,
                              "chosen": v.chosen, "correct": v.correct,
                              "tie": v.tie_flag} for v in self.verdicts]}


def evaluate(manifest: DatasetManifest, provider: EmbeddingProvider,
             root, shuffle_seed: int = 0) -> EvaluationReport:
    """Odd-one-out accuracy over all triplets in the manifest.

    Each triple's presentation order is permuted from the shuffle seed
    so provider ordering cannot leak which item is the original.
    """
    root = Path(root)
    rng = np.random.default_rng(shuffle_seed)
    verdicts = []
    correct_count = 0
    ties = 0
    for rec in manifest.records:
        paths = [rec.original_path] + list(rec.variant_paths)
        ids = [f"{rec.id}/orig", f"{rec.id}/var0", f"{rec.id}/var1"]
        perm = rng.permutation(3)
        original_pos = int(np.where(perm == 0)[0][0])
        embs = []
        for slot in range(3):
            src = int(perm[slot])
            embs.append(provider.embedding(ids[src], root / paths[src]))
        scores = oddity_scores(embs)
        chosen, tie = select_odd(scores)
        is_correct = chosen == original_pos
        verdicts.append(TripletVerdict(rec.id, scores, chosen, is_correct, tie))
        correct_count += is_correct
        ties += tie
    if not verdicts:
        raise MetricError("manifest has no triplets to evaluate")
    return EvaluationReport(accuracy=correct_count / len(verdicts),
                            verdicts=verdicts, ties=ties)
