"""Command-line entry point wiring the library together.

Subcommands: synthesize, gen-dataset, eval-dist, train-distinguish,
probe, saliency, serve. Machine-readable JSON results go to stdout;
progress events (JSON lines) and human logs go to stderr. Every
subcommand that writes an output directory drops a provenance.json
recording the command, its configuration, seeds, artifact hashes, and
the tool version. All randomness flows from explicit --seed flags.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, featurenet, imageio
from .dataset import DatasetError, DatasetManifest, generate_dataset
from .distinguish import (
    LabelError,
    LabeledDataset,
    LabeledItem,
    ToyClassifier,
    TrainingError,
    default_classifier_config,
    expand_labels,
    train,
)
from .featurenet import WeightFileError
from .oddity import FileProvider, MetricError, evaluate
from .probe import ProbeError, cross_validate, load_patch_embeddings
from .saliency import binary_mask, smoothgrad
from .sessions import ProtocolError, ScheduleError
from .synthesis import SynthesisConfig, SynthesisError, synthesize
from .tensor import TensorError

DOMAIN_ERRORS = (DatasetError, LabelError, TrainingError, WeightFileError,
                 MetricError, ProbeError, ProtocolError, ScheduleError,
                 SynthesisError, TensorError, imageio.ImageDecodeError,
                 FileNotFoundError, ValueError, KeyError)


def _log(event: dict) -> None:
    sys.stderr.write(json.dumps(event, sort_keys=True) + "\n")
    sys.stderr.flush()


def _emit(result: dict) -> None:
    sys.stdout.write(json.dumps(result, sort_keys=True, indent=2) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_provenance(out_dir: Path, subcommand: str, config: dict,
                     seeds: list, artifacts: list) -> Path:
    doc = {"subcommand": subcommand, "config": config, "seeds": seeds,
           "artifacts": {str(p.relative_to(out_dir)): _sha256(p)
                         for p in artifacts},
           "version": __version__}
    path = out_dir / "provenance.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    return path


def cmd_synthesize(args) -> int:
    target = imageio.read_rgb(args.in_path)
    net = featurenet.build(featurenet.default_config())
    cfg = SynthesisConfig(steps=args.steps, seed=args.seed)
    result = synthesize(target, net, cfg,
                        progress=lambda step, loss: _log(
                            {"event": "synthesis-step", "step": step,
                             "loss": loss}))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    imageio.write_rgb(out, result.image)
    write_provenance(out.parent, "synthesize",
                     {"in": str(args.in_path), "steps": args.steps,
                      "out": str(out)},
                     [args.seed], [out])
    _emit({"out": str(out), "initial_loss": result.loss_trace[0],
           "final_loss": result.loss_trace[-1], "sha256": _sha256(out)})
    return 0


def cmd_gen_dataset(args) -> int:
    net = featurenet.build(featurenet.default_config())
    cfg = SynthesisConfig(steps=args.steps)
    out_dir = Path(args.out)
    manifest = generate_dataset(
        args.src, out_dir, net, cfg, base_seed=args.base_seed,
        strict=args.strict, n_catch=args.n_catch, jobs=args.jobs,
        warn=lambda msg: _log({"event": "warning", "message": msg}))
    artifacts = sorted(p for p in out_dir.iterdir()
                       if p.suffix == ".png") + [out_dir / "manifest.json"]
    write_provenance(out_dir, "gen-dataset",
                     {"src": str(args.src), "steps": args.steps,
                      "n_catch": args.n_catch, "strict": args.strict,
                      "jobs": args.jobs},
                     [args.base_seed], artifacts)
    _emit({"out": str(out_dir), "triplets": len(manifest.records),
           "catch_assets": len(manifest.catch_records)})
    return 0


def cmd_eval_dist(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    provider = FileProvider(args.embeddings)
    root = Path(args.manifest)
    root = root.parent if root.is_file() else root
    report = evaluate(manifest, provider, root, shuffle_seed=args.seed)
    _emit(report.to_json_dict())
    return 0


def _labeled_from_manifest(manifest: DatasetManifest):
    """Originals with class labels, plus the first variant of each triplet
    as its disrupted counterpart."""
    labels = sorted({r.class_label for r in manifest.records
                     if r.class_label is not None})
    if not labels:
        raise LabelError("manifest has no class labels; name sources "
                         "'<class>__<name>.png' when generating the dataset")
    index = {name: i for i, name in enumerate(labels)}
    items, disrupted = [], {i: [] for i in index.values()}
    for rec in manifest.records:
        if rec.class_label is None:
            raise LabelError(f"triplet {rec.id} has no class label")
        items.append(LabeledItem(rec.original_path, index[rec.class_label]))
        disrupted[index[rec.class_label]].append(rec.variant_paths[0])
    return LabeledDataset(items, n_base_classes=len(labels)), disrupted, labels


def cmd_train_distinguish(args) -> int:
    data_dir = Path(args.data)
    manifest = DatasetManifest.load(data_dir)
    base, disrupted, labels = _labeled_from_manifest(manifest)
    dataset = base if args.mode == "baseline" else expand_labels(base, disrupted)
    images = np.stack([imageio.read_rgb(data_dir / it.image_path)
                       for it in dataset.items])
    targets = np.array([it.label for it in dataset.items])
    hw = images.shape[2], images.shape[3]
    import dataclasses
    config = dataclasses.replace(
        default_classifier_config(base.n_base_classes, input_hw=hw),
        n_classes=dataset.n_classes, init_seed=args.seed)
    model = ToyClassifier(config)
    curve = train(model, images, targets, epochs=args.epochs, lr=args.lr,
                  batch_size=args.batch_size, seed=args.seed,
                  progress=lambda epoch, loss: _log(
                      {"event": "epoch", "epoch": epoch, "loss": loss}))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    sidecar = out.with_suffix(out.suffix + ".json")
    write_provenance(out.parent, "train-distinguish",
                     {"data": str(data_dir), "mode": args.mode,
                      "epochs": args.epochs, "lr": args.lr,
                      "batch_size": args.batch_size, "classes": labels},
                     [args.seed], [out, sidecar])
    _emit({"out": str(out), "mode": args.mode, "loss_curve": curve,
           "sha256": _sha256(out)})
    return 0


def cmd_probe(args) -> int:
    pset = load_patch_embeddings(args.embeddings, args.coords)
    report = cross_validate(pset, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report.to_json_dict(), sort_keys=True, indent=2)
                   + "\n", encoding="utf-8")
    write_provenance(out.parent, "probe",
                     {"embeddings": str(args.embeddings),
                      "coords": str(args.coords), "out": str(out)},
                     [args.seed], [out])
    _emit(report.to_json_dict())
    return 0


def cmd_saliency(args) -> int:
    model = ToyClassifier.load(args.model)
    image = imageio.read_rgb(args.image)
    smap = smoothgrad(model, image, args.class_index, seed=args.seed)
    mask = binary_mask(smap, args.mask_threshold)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    imageio.write_gray(out, smap.values)
    mask_path = out.with_suffix(".mask.png")
    imageio.write_mask(mask_path, mask)
    write_provenance(out.parent, "saliency",
                     {"model": str(args.model), "image": str(args.image),
                      "class": args.class_index,
                      "mask_threshold": args.mask_threshold},
                     [args.seed], [out, mask_path])
    _emit({"map": str(out), "mask": str(mask_path),
           "constant": smap.constant,
           "active_fraction": float(mask.mean())})
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    dataset = Path(args.dataset)
    sessions_dir = Path(args.sessions) if args.sessions else dataset / "sessions"
    app = create_app(dataset / "manifest.json", dataset, sessions_dir)
    _log({"event": "serving", "port": args.port, "dataset": str(dataset)})
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="structbench",
        description="Texture synthesis, odd-one-out evaluation, training, "
                    "probing, saliency, and the experiment session server.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synthesize", help="generate one disrupted variant")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synthesize)

    p = sub.add_parser("gen-dataset", help="build a triplet dataset from images")
    p.add_argument("--src", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, choices=(10, 100), default=100)
    p.add_argument("--base-seed", type=int, required=True)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--n-catch", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_gen_dataset)

    p = sub.add_parser("eval-dist", help="odd-one-out accuracy from embeddings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval_dist)

    p = sub.add_parser("train-distinguish",
                       help="train a classifier on a generated dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=("baseline", "distinguish"),
                   required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_distinguish)

    p = sub.add_parser("probe", help="decode patch positions from embeddings")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--coords", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("saliency", help="smoothed input-sensitivity map")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--mask-threshold", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_saliency)

    p = sub.add_parser("serve", help="run the experiment session server")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--dataset", required=True)
    p.add_argument("--sessions", default=None)
    p.set_defaults(fn=cmd_serve)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except DOMAIN_ERRORS as exc:
        _log({"event": "error", "type": type(exc).__name__,
              "message": str(exc)})
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
