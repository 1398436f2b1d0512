"""Command-line orchestration of the labeling loop.

    camlabel synth          render a synthetic scene corpus
    camlabel build-dataset  click labels -> balanced per-class crop splits
    camlabel train          train one classifier per defect class
    camlabel propose        generate instance proposals for manifest images
    camlabel serve          start the review HTTP service
    camlabel derive-labels  interaction log -> new weak labels
    camlabel report         saving-band tallies -> time-saved table

All commands read one JSON config document (per-module sections), accept
dot-path overrides via --set, and exit 0 on success, 1 on internal errors,
2 on user/config errors.
"""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from .classifier import CheckpointBundle, ModelConfig, TrainConfig, build_model, train
from .climb import ClimbConfig
from .metrics import SavingBandTally, aggregate, report_to_csv, report_to_json
from .postproc import PostprocConfig
from .proposer import TilingConfig, propose, read_proposals, write_proposals
from .registry import DEFAULT_REGISTRY
from .service import ReviewApp, create_app, derive_weak_labels
from .synthetic import SceneParams, write_scene_corpus
from .weakset import (
    CropDatasetSpec,
    CropSample,
    ingest_labels,
    load_crop_pixels,
    load_manifest,
    sample_crops,
    split_dataset,
)


class UserError(click.ClickException):
    exit_code = 2


def _load_config(path: str | None, overrides, seed: int | None) -> dict:
    config: dict = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise UserError(f"config file not found: {p}")
        try:
            config = json.loads(p.read_text())
        except json.JSONDecodeError as err:
            raise UserError(f"config {p} is not valid JSON: {err}")
    for item in overrides:
        if "=" not in item:
            raise UserError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    if seed is not None:
        config["seed"] = seed
    config.setdefault("seed", 0)
    return config


def _require_path(config: dict, key: str, purpose: str) -> Path:
    paths = config.get("paths", {})
    if key not in paths:
        raise UserError(f"config needs paths.{key} ({purpose})")
    return Path(paths[key])


def _existing_path(config: dict, key: str, purpose: str, hint: str = "") -> Path:
    path = _require_path(config, key, purpose)
    if not path.exists():
        message = f"{purpose} not found: {path}"
        if hint:
            message += f"; {hint}"
        raise UserError(message)
    return path


def _section(config: dict, name: str) -> dict:
    section = config.get(name, {})
    if not isinstance(section, dict):
        raise UserError(f"config section {name!r} must be an object")
    return dict(section)


def _classes(config: dict) -> list[str]:
    classes = config.get("classes", list(DEFAULT_REGISTRY.classes))
    for cls in classes:
        if cls not in DEFAULT_REGISTRY:
            DEFAULT_REGISTRY.register(cls)
    return classes


def _build_cfg(factory, section: dict, name: str):
    try:
        return factory(**section)
    except (TypeError, ValueError) as err:
        raise UserError(f"bad {name} config: {err}")


common_options = [
    click.option("--config", "config_path", type=str, default=None,
                 help="JSON config document"),
    click.option("--set", "overrides", multiple=True,
                 help="dot-path override, e.g. --set climb.iterations=3"),
    click.option("--seed", type=int, default=None, help="override config seed"),
]


def with_common(fn):
    for opt in reversed(common_options):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Model-assisted defect labeling pipeline."""


@main.command("synth")
@with_common
@click.option("--out", "out_dir", type=str, default=None, help="output directory")
def cmd_synth(config_path, overrides, seed, out_dir):
    """Render a synthetic scene corpus (images, manifest, labels, GT)."""
    config = _load_config(config_path, overrides, seed)
    out = Path(out_dir) if out_dir else _require_path(config, "out_dir", "corpus output")
    section = _section(config, "synth")
    n_scenes = int(section.pop("n_scenes", 10))
    if "size" in section:
        section["size"] = tuple(section["size"])
    for key in ("crack_width", "crack_segment_len", "blob_radius"):
        if key in section:
            section[key] = tuple(section[key])
    params = _build_cfg(SceneParams, section, "synth")
    paths = write_scene_corpus(out, n_scenes, params, int(config["seed"]))
    click.echo(f"wrote {n_scenes} scenes under {out}")
    click.echo(f"manifest: {paths['manifest']}")
    click.echo(f"labels:   {paths['labels']}")


def _dataset_dir(out_dir: Path) -> Path:
    return out_dir / "dataset"


@main.command("build-dataset")
@with_common
def cmd_build_dataset(config_path, overrides, seed):
    """Build balanced per-class crop datasets from weak labels."""
    config = _load_config(config_path, overrides, seed)
    manifest_path = _existing_path(config, "manifest", "image manifest")
    labels_path = _existing_path(config, "labels", "weak-label file")
    out_dir = _require_path(config, "out_dir", "artifact output")
    manifest = load_manifest(manifest_path)
    try:
        labels = ingest_labels(labels_path, manifest)
    except ValueError as err:
        raise UserError(str(err))
    sizes = {i.image_id: (i.height, i.width) for i in manifest.values()}

    classes = _classes(config)
    dataset_section = _section(config, "dataset")
    counts = {}
    out = _dataset_dir(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for defect_class in classes:
        spec = _build_cfg(
            CropDatasetSpec,
            {"defect_class": defect_class, "seed": int(config["seed"]), **dataset_section},
            "dataset",
        )
        try:
            samples = sample_crops(labels, spec, sizes)
            splits = split_dataset(samples, spec)
        except ValueError as err:
            raise UserError(str(err))
        doc = {
            "defect_class": defect_class,
            "spec": {
                "crop_size": spec.crop_size,
                "crops_per_positive": spec.crops_per_positive,
                "seed": spec.seed,
                "split_fractions": list(spec.split_fractions),
            },
            "splits": {
                name: [
                    {"image_id": s.image_id, "window": list(s.window),
                     "label": s.label, "defect_class": s.defect_class,
                     "origin_label_id": s.origin_label_id}
                    for s in split
                ]
                for name, split in zip(("train", "val", "test"), splits)
            },
        }
        (out / f"{defect_class}.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
        counts[defect_class] = sum(
            1 for l in labels
            if l.defect_class == defect_class and l.polarity == "positive"
        )

    click.echo("defect     " + "  ".join(f"{c:>10}" for c in classes))
    click.echo("instances  " + "  ".join(f"{counts[c]:>10,}" for c in classes))
    for defect_class in classes:
        doc = json.loads((out / f"{defect_class}.json").read_text())
        sizes_line = "/".join(str(len(doc["splits"][k])) for k in ("train", "val", "test"))
        click.echo(f"{defect_class}: {sizes_line} crops (train/val/test)")


def _read_split(out_dir: Path, defect_class: str) -> dict:
    path = _dataset_dir(out_dir) / f"{defect_class}.json"
    if not path.exists():
        raise UserError(
            f"dataset for {defect_class!r} not found at {path}; "
            "run `camlabel build-dataset` first"
        )
    doc = json.loads(path.read_text())
    return {
        name: [
            CropSample(image_id=r["image_id"], window=tuple(r["window"]),
                       label=r["label"], defect_class=r["defect_class"],
                       origin_label_id=r["origin_label_id"])
            for r in records
        ]
        for name, records in doc["splits"].items()
    }


@main.command("train")
@with_common
def cmd_train(config_path, overrides, seed):
    """Train one binary classifier per defect class."""
    config = _load_config(config_path, overrides, seed)
    manifest = load_manifest(_existing_path(config, "manifest", "image manifest"))
    out_dir = _require_path(config, "out_dir", "artifact output")
    model_cfg = _build_cfg(ModelConfig, _section(config, "model"), "model")
    train_section = _section(config, "train")
    train_section.setdefault("seed", int(config["seed"]))
    train_cfg = _build_cfg(TrainConfig, train_section, "train")

    for defect_class in _classes(config):
        splits = _read_split(out_dir, defect_class)
        if not splits["train"] or not splits["val"]:
            raise UserError(
                f"class {defect_class!r} has an empty train or val split"
            )
        x_train, y_train = load_crop_pixels(splits["train"], manifest)
        x_val, y_val = load_crop_pixels(splits["val"], manifest)
        model = build_model(model_cfg)
        click.echo(f"training {defect_class!r} on {len(y_train)} crops ...")
        bundle = train(model, (x_train, y_train), (x_val, y_val), train_cfg,
                       log_callback=lambda row: click.echo(
                           f"  epoch {row['epoch']}: loss {row['loss']:.4f} "
                           f"f-measure {row['f_measure']:.3f}"))
        target = Path(out_dir) / "models" / defect_class
        bundle.save(target)
        click.echo(
            f"{defect_class}: best f-measure {bundle.best_f_measure:.3f} "
            f"(epoch {bundle.best_epoch}) -> {target}"
        )


def _load_models(out_dir: Path, classes) -> dict:
    models = {}
    for defect_class in classes:
        target = out_dir / "models" / defect_class
        if not (target / "weights.pt").exists():
            raise UserError(
                f"no checkpoint for {defect_class!r} at {target}; "
                "run `camlabel train` first"
            )
        models[defect_class] = CheckpointBundle.load(target).model
    return models


@main.command("propose")
@with_common
@click.option("--images", "image_list", type=str, default=None,
              help="comma-separated image ids (default: whole manifest)")
def cmd_propose(config_path, overrides, seed, image_list):
    """Generate instance proposals for manifest images."""
    from PIL import Image

    config = _load_config(config_path, overrides, seed)
    manifest = load_manifest(_existing_path(config, "manifest", "image manifest"))
    out_dir = _require_path(config, "out_dir", "artifact output")
    classes = _classes(config)
    models = _load_models(out_dir, classes)
    tiling = _build_cfg(TilingConfig, _section(config, "tiling"), "tiling")
    climb_cfg = _build_cfg(ClimbConfig, _section(config, "climb"), "climb")
    post_cfg = _build_cfg(PostprocConfig, _section(config, "postproc"), "postproc")

    wanted = image_list.split(",") if image_list else sorted(manifest)
    all_proposals = []
    for image_id in wanted:
        if image_id not in manifest:
            raise UserError(f"image {image_id!r} not in manifest")
        with Image.open(manifest[image_id].path) as img:
            pixels = np.asarray(img.convert("RGB"))
        proposals = propose(pixels, classes, models, tiling, climb_cfg, post_cfg,
                            image_id=image_id)
        click.echo(f"{image_id}: {len(proposals)} proposal(s)")
        all_proposals.extend(proposals)
    target = Path(out_dir) / "proposals.json"
    write_proposals(all_proposals, target)
    click.echo(f"wrote {len(all_proposals)} proposals -> {target}")


def _open_review(config: dict) -> ReviewApp:
    manifest = load_manifest(_existing_path(config, "manifest", "image manifest"))
    out_dir = _require_path(config, "out_dir", "artifact output")
    proposals_path = Path(out_dir) / "proposals.json"
    if not proposals_path.exists():
        raise UserError(
            f"no proposals at {proposals_path}; run `camlabel propose` first"
        )
    events_path = Path(config.get("paths", {}).get(
        "events", Path(out_dir) / "events.jsonl"))
    return ReviewApp.open(manifest, read_proposals(proposals_path), events_path)


@main.command("serve")
@with_common
@click.option("--host", type=str, default="127.0.0.1")
@click.option("--port", type=int, default=8321)
def cmd_serve(config_path, overrides, seed, host, port):
    """Start the proposal-review HTTP service."""
    import uvicorn

    config = _load_config(config_path, overrides, seed)
    app = create_app(_open_review(config))
    click.echo(f"serving on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("derive-labels")
@with_common
def cmd_derive_labels(config_path, overrides, seed):
    """Convert logged interactions into weak labels and append them."""
    config = _load_config(config_path, overrides, seed)
    review = _open_review(config)
    labels_path = _existing_path(config, "labels", "weak-label file")
    derived, warnings = derive_weak_labels(review.store.events, review.proposals)
    for warning in warnings:
        click.echo(f"warning: {warning}", err=True)
    existing = json.loads(labels_path.read_text())
    known = {r["id"] for r in existing}
    fresh = [l for l in derived if l.label_id not in known]
    merged = existing + [l.to_record() for l in fresh]
    labels_path.write_text(json.dumps(merged, indent=2))
    click.echo(f"derived {len(derived)} label(s), appended {len(fresh)} new -> {labels_path}")


@main.command("report")
@with_common
@click.option("--tallies", "tallies_path", type=str, required=True,
              help="JSON file of saving-band tallies")
@click.option("--out", "out_path", type=str, default=None, help="CSV output path")
def cmd_report(config_path, overrides, seed, tallies_path, out_path):
    """Compute the relative-time-saving table from band tallies."""
    path = Path(tallies_path)
    if not path.exists():
        raise UserError(f"tally file not found: {path}")
    raw = json.loads(path.read_text())
    rows = raw["tallies"] if isinstance(raw, dict) and "tallies" in raw else raw
    try:
        tallies = [SavingBandTally(**row) for row in rows]
        report = aggregate(tallies)
    except (TypeError, ValueError) as err:
        raise UserError(f"bad tallies: {err}")
    csv_text = report_to_csv(report)
    click.echo(csv_text.rstrip("\n"))
    if out_path:
        Path(out_path).write_text(csv_text)
        Path(out_path).with_suffix(".json").write_text(report_to_json(report))
        click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
