"""Triplet dataset generation: originals, disrupted variants, catch-trial
assets, and the JSON manifest tying them together."""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import featurenet, imageio
from .synthesis import SynthesisConfig, SynthesisError, synthesize

FORMAT_VERSION = 1


class DatasetError(Exception):
    """Invalid dataset input or manifest."""


@dataclass
class TripletRecord:
    id: str
    original_path: str
    variant_paths: List[str]
    seeds: List[int]
    config_hash: str
    class_label: Optional[str] = None

    def to_json_dict(self) -> dict:
        d = {"id": self.id, "original_path": self.original_path,
             "variant_paths": self.variant_paths, "seeds": self.seeds,
             "config_hash": self.config_hash}
        if self.class_label is not None:
            d["class_label"] = self.class_label
        return d

    @staticmethod
    def from_json_dict(d: dict) -> "TripletRecord":
        return TripletRecord(id=d["id"], original_path=d["original_path"],
                             variant_paths=list(d["variant_paths"]),
                             seeds=list(d["seeds"]), config_hash=d["config_hash"],
                             class_label=d.get("class_label"))


@dataclass
class CatchRecord:
    """A catch-trial asset triple: original, its mirror, one disrupted image."""
    id: str
    original_path: str
    mirrored_path: str
    disrupted_path: str
    seed: int

    def to_json_dict(self) -> dict:
        return {"id": self.id, "original_path": self.original_path,
                "mirrored_path": self.mirrored_path,
                "disrupted_path": self.disrupted_path, "seed": self.seed}

    @staticmethod
    def from_json_dict(d: dict) -> "CatchRecord":
        return CatchRecord(d["id"], d["original_path"], d["mirrored_path"],
                           d["disrupted_path"], d["seed"])


@dataclass
class DatasetManifest:
    format_version: int
    featurenet_config: dict
    synthesis_config: dict
    base_seed: int
    records: List[TripletRecord]
    catch_records: List[CatchRecord] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {"format_version": self.format_version,
               "featurenet_config": self.featurenet_config,
               "synthesis_config": self.synthesis_config,
               "base_seed": self.base_seed,
               "records": [r.to_json_dict() for r in self.records],
               "catch_records": [c.to_json_dict() for c in self.catch_records]}
        return json.dumps(doc, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "DatasetManifest":
        doc = json.loads(text)
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise DatasetError(f"unrecognized manifest format_version {version!r}")
        records = [TripletRecord.from_json_dict(d) for d in doc["records"]]
        ids = [r.id for r in records]
        if len(ids) != len(set(ids)):
            raise DatasetError("duplicate triplet ids in manifest")
        return DatasetManifest(
            format_version=version,
            featurenet_config=doc["featurenet_config"],
            synthesis_config=doc["synthesis_config"],
            base_seed=doc["base_seed"],
            records=records,
            catch_records=[CatchRecord.from_json_dict(d)
                           for d in doc.get("catch_records", [])])

    def save(self, root) -> Path:
        path = Path(root) / "manifest.json"
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @staticmethod
    def load(root_or_file) -> "DatasetManifest":
        p = Path(root_or_file)
        if p.is_dir():
            p = p / "manifest.json"
        return DatasetManifest.from_json(p.read_text(encoding="utf-8"))


def config_hash(net_cfg: featurenet.FeatureNetConfig, syn_cfg: SynthesisConfig) -> str:
    blob = json.dumps({"featurenet": net_cfg.to_json_dict(),
                       "synthesis": syn_cfg.to_json_dict()},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def derive_seed(base_seed: int, image_index: int, variant_index: int) -> int:
    """Stable per-variant u64 seed from (base_seed, image, variant)."""
    key = f"{base_seed}:{image_index}:{variant_index}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def generate_triplet(source: np.ndarray, net: featurenet.FeatureNet,
                     cfg: SynthesisConfig, seeds: Sequence[int],
                     out_dir, triplet_id: str,
                     class_label: Optional[str] = None) -> TripletRecord:
    """Write the original and two seeded disrupted variants; return the record."""
    if len(seeds) != 2 or seeds[0] == seeds[1]:
        raise DatasetError(f"variant seeds must be two distinct values, got {list(seeds)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    original = imageio.quantize(source)
    orig_rel = f"{triplet_id}_orig.png"
    imageio.write_rgb(out_dir / orig_rel, original)

    variant_rels = []
    for v, seed in enumerate(seeds):
        try:
            result = synthesize(original, net, replace(cfg, seed=int(seed)))
        except SynthesisError as exc:
            raise DatasetError(f"triplet {triplet_id} variant {v}: {exc}") from exc
        rel = f"{triplet_id}_var{v}.png"
        imageio.write_rgb(out_dir / rel, result.image)
        variant_rels.append(rel)

    net_cfg = net.config
    return TripletRecord(id=triplet_id, original_path=orig_rel,
                         variant_paths=variant_rels,
                         seeds=[int(s) for s in seeds],
                         config_hash=config_hash(net_cfg, cfg),
                         class_label=class_label)


def make_catch_assets(original: np.ndarray, net: featurenet.FeatureNet,
                      cfg: SynthesisConfig, seed: int):
    """Catch-trial triple: quantized original, exact horizontal mirror,
    and one disrupted variant."""
    original = imageio.quantize(original)
    mirrored = original[:, :, ::-1].copy()
    disrupted = synthesize(original, net, replace(cfg, seed=int(seed))).image
    return original, mirrored, disrupted


def _build_one(args):
    src_path, idx, triplet_id, label, net, cfg, base_seed, out_dir = args
    source = imageio.read_rgb(src_path)
    seeds = [derive_seed(base_seed, idx, 0), derive_seed(base_seed, idx, 1)]
    return idx, generate_triplet(source, net, cfg, seeds, out_dir, triplet_id, label)


def generate_dataset(src_dir, out_dir, net: featurenet.FeatureNet,
                     cfg: SynthesisConfig, base_seed: int,
                     strict: bool = True, n_catch: int = 0,
                     jobs: int = 1, warn=None) -> DatasetManifest:
    """Build triplets for every decodable image in ``src_dir``.

    Per-image variant seeds are derived from (base_seed, image index,
    variant index), so a re-run with the same base seed reproduces the
    dataset bit for bit. The last ``n_catch`` sources are reserved for
    catch-trial assets and never appear in standard triplets.
    """
    src_dir, out_dir = Path(src_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    sources = sorted(p for p in src_dir.iterdir()
                     if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    decodable = []
    for p in sources:
        try:
            imageio.read_rgb(p)
            decodable.append(p)
        except imageio.ImageDecodeError as exc:
            if strict:
                raise DatasetError(str(exc)) from exc
            if warn is not None:
                warn(f"skipping undecodable image {p}: {exc}")
    if not decodable:
        raise DatasetError(f"no decodable source images in {src_dir}")
    if n_catch >= len(decodable):
        raise DatasetError(
            f"n_catch={n_catch} leaves no standard sources out of {len(decodable)}")

    catch_sources = decodable[len(decodable) - n_catch:] if n_catch else []
    standard_sources = decodable[:len(decodable) - n_catch]

    tasks = []
    for idx, p in enumerate(standard_sources):
        triplet_id = f"t{idx:05d}"
        # sources named "<class>__<rest>.png" carry their class label into
        # the manifest so training can group triplets by class
        label = p.stem.split("__", 1)[0] if "__" in p.stem else None
        tasks.append((p, idx, triplet_id, label, net, cfg, base_seed, out_dir))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_build_one, tasks))
    else:
        results = [_build_one(t) for t in tasks]
    records = [rec for _, rec in sorted(results, key=lambda r: r[0])]

    catch_records = []
    for ci, p in enumerate(catch_sources):
        idx = len(standard_sources) + ci
        seed = derive_seed(base_seed, idx, 0)
        original, mirrored, disrupted = make_catch_assets(
            imageio.read_rgb(p), net, cfg, seed)
        cid = f"c{ci:05d}"
        paths = {}
        for name, img in (("orig", original), ("mirror", mirrored), ("disrupt", disrupted)):
            rel = f"{cid}_{name}.png"
            imageio.write_rgb(out_dir / rel, img)
            paths[name] = rel
        catch_records.append(CatchRecord(id=cid, original_path=paths["orig"],
                                         mirrored_path=paths["mirror"],
                                         disrupted_path=paths["disrupt"],
                                         seed=seed))

    all_seeds = [s for r in records for s in r.seeds] + [c.seed for c in catch_records]
    if len(all_seeds) != len(set(all_seeds)):
        raise DatasetError("seed collision across dataset variants")

    manifest = DatasetManifest(
        format_version=FORMAT_VERSION,
        featurenet_config=net.config.to_json_dict(),
        synthesis_config=cfg.to_json_dict(),
        base_seed=base_seed,
        records=records,
        catch_records=catch_records)
    manifest.save(out_dir)
    return manifest
