"""Weak click labels and balanced per-defect crop datasets.

A weak label is one annotator click: positive clicks sit on a defect,
negative clicks assert "no such defect in this patch". For each defect
class a balanced binary crop dataset is built by sampling several jittered
crops around every positive click and cycling through the class's negative
clicks until the counts match. Splits partition by image, never by crop,
so overlapping crops of one image cannot leak across splits.

Label documents are JSON arrays of records
``{id, image_id, point: [row, col], defect_class, polarity, source,
created_at}`` with an image manifest sidecar mapping image ids to
``{path, height, width}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .registry import ClassRegistry, DEFAULT_REGISTRY

POLARITIES = ("positive", "negative")
SOURCES = ("manual", "interaction_log")


class LabelParseError(ValueError):
    """The label document is not valid JSON / not an array of records."""


class LabelValidationError(ValueError):
    """One or more records violate bounds or registry constraints."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__(
            "invalid weak-label records:\n  " + "\n  ".join(problems)
        )


class DatasetBuildError(ValueError):
    """Crop sampling or splitting cannot satisfy its contract."""


@dataclass(frozen=True)
class WeakLabel:
    label_id: str
    image_id: str
    point: tuple[int, int]  # (row, col)
    defect_class: str
    polarity: str
    source: str = "manual"
    created_at: datetime | None = None

    def to_record(self) -> dict:
        created = self.created_at or datetime.now(timezone.utc)
        return {
            "id": self.label_id,
            "image_id": self.image_id,
            "point": [int(self.point[0]), int(self.point[1])],
            "defect_class": self.defect_class,
            "polarity": self.polarity,
            "source": self.source,
            "created_at": created.astimezone(timezone.utc).isoformat(),
        }


@dataclass(frozen=True)
class CropSample:
    image_id: str
    window: tuple[int, int, int, int]  # (row0, col0, height, width)
    label: str  # "defect" | "no_defect"
    defect_class: str
    origin_label_id: str


@dataclass(frozen=True)
class CropDatasetSpec:
    defect_class: str
    crop_size: int = 320
    crops_per_positive: int = 5
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.crops_per_positive < 1:
            raise ValueError("crops_per_positive must be >= 1")
        if self.crop_size < 32:
            raise ValueError("crop_size must be >= 32")
        fracs = tuple(float(f) for f in self.split_fractions)
        if len(fracs) != 3 or any(f < 0 for f in fracs):
            raise ValueError("split_fractions must be three nonnegative numbers")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split_fractions must sum to 1, got {fracs}")
        object.__setattr__(self, "split_fractions", fracs)


@dataclass(frozen=True)
class ImageInfo:
    image_id: str
    path: str
    height: int
    width: int


def load_manifest(path) -> dict[str, ImageInfo]:
    """Read an image manifest: {image_id: {path, height, width}}."""
    raw = json.loads(Path(path).read_text())
    manifest = {}
    for image_id, entry in raw.items():
        manifest[image_id] = ImageInfo(
            image_id=image_id,
            path=entry["path"],
            height=int(entry["height"]),
            width=int(entry["width"]),
        )
    return manifest


def save_manifest(manifest: dict[str, ImageInfo], path) -> None:
    raw = {
        info.image_id: {"path": info.path, "height": info.height, "width": info.width}
        for info in manifest.values()
    }
    Path(path).write_text(json.dumps(raw, indent=2, sort_keys=True))


def _parse_created_at(value) -> datetime:
    if value is None:
        return datetime.now(timezone.utc)
    dt = datetime.fromisoformat(str(value).replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


def parse_label_records(records, image_sizes, registry: ClassRegistry = DEFAULT_REGISTRY
                        ) -> list[WeakLabel]:
    """Validate raw records against bounds and registry; collect all faults.

    ``image_sizes`` maps image_id -> (height, width); pass a manifest's
    sizes for documents on disk.
    """
    labels = []
    problems = []
    seen_ids = set()
    for index, rec in enumerate(records):
        where = f"record #{index}"
        if not isinstance(rec, dict):
            problems.append(f"{where}: not an object")
            continue
        label_id = str(rec.get("id", ""))
        if label_id:
            where = f"record #{index} (id={label_id})"
        try:
            image_id = rec["image_id"]
            point = rec["point"]
            defect_class = rec["defect_class"]
            polarity = rec["polarity"]
        except KeyError as err:
            problems.append(f"{where}: missing field {err}")
            continue
        if not label_id:
            problems.append(f"{where}: missing id")
            continue
        if label_id in seen_ids:
            problems.append(f"{where}: duplicate id")
            continue
        seen_ids.add(label_id)
        if defect_class not in registry:
            problems.append(f"{where}: unregistered class {defect_class!r}")
            continue
        if polarity not in POLARITIES:
            problems.append(f"{where}: bad polarity {polarity!r}")
            continue
        source = rec.get("source", "manual")
        if source not in SOURCES:
            problems.append(f"{where}: bad source {source!r}")
            continue
        if image_id not in image_sizes:
            problems.append(f"{where}: unknown image {image_id!r}")
            continue
        height, width = image_sizes[image_id]
        try:
            row, col = (int(point[0]), int(point[1]))
        except (TypeError, ValueError, IndexError):
            problems.append(f"{where}: malformed point {point!r}")
            continue
        if not (0 <= row < height and 0 <= col < width):
            problems.append(
                f"{where}: point ({row}, {col}) outside {height}x{width} image"
            )
            continue
        labels.append(
            WeakLabel(
                label_id=label_id,
                image_id=image_id,
                point=(row, col),
                defect_class=defect_class,
                polarity=polarity,
                source=source,
                created_at=_parse_created_at(rec.get("created_at")),
            )
        )
    if problems:
        raise LabelValidationError(problems)
    return labels


def ingest_labels(path, manifest, registry: ClassRegistry = DEFAULT_REGISTRY
                  ) -> list[WeakLabel]:
    """Load and validate a weak-label document against an image manifest."""
    try:
        records = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise LabelParseError(f"cannot parse label document {path}: {err}") from err
    if not isinstance(records, list):
        raise LabelParseError(f"label document {path} must be a JSON array")
    sizes = {
        info.image_id: (info.height, info.width) for info in manifest.values()
    }
    return parse_label_records(records, sizes, registry)


def write_labels(labels, path) -> None:
    records = [label.to_record() for label in labels]
    Path(path).write_text(json.dumps(records, indent=2))


def _sample_window(point, crop: int, height: int, width: int,
                   rng: np.random.Generator) -> tuple[int, int, int, int]:
    """One jittered crop window around a click, clamped in-bounds.

    Jitter is uniform over [-crop/4, +crop/4] on the crop center, which
    keeps the click inside every window even after clamping.
    """
    jitter = crop // 4
    d_row = int(rng.integers(-jitter, jitter + 1))
    d_col = int(rng.integers(-jitter, jitter + 1))
    row0 = point[0] + d_row - crop // 2
    col0 = point[1] + d_col - crop // 2
    row0 = min(max(row0, 0), height - crop)
    col0 = min(max(col0, 0), width - crop)
    return (row0, col0, crop, crop)


def sample_crops(labels, spec: CropDatasetSpec, image_sizes) -> list[CropSample]:
    """Balanced defect / no-defect crops for one class.

    Every positive click yields exactly ``crops_per_positive`` windows that
    all contain it; negatives cycle through the class's negative clicks
    until counts match. Deterministic for a fixed seed.
    """
    crop = spec.crop_size
    positives = [l for l in labels
                 if l.defect_class == spec.defect_class and l.polarity == "positive"]
    negatives = [l for l in labels
                 if l.defect_class == spec.defect_class and l.polarity == "negative"]
    for label in positives + negatives:
        if label.image_id not in image_sizes:
            raise DatasetBuildError(f"no recorded size for image {label.image_id!r}")
        height, width = image_sizes[label.image_id]
        if height < crop or width < crop:
            raise DatasetBuildError(
                f"image {label.image_id!r} is {height}x{width}, "
                f"smaller than crop size {crop}"
            )
    if not positives:
        raise DatasetBuildError(
            f"no positive labels for class {spec.defect_class!r}: empty dataset"
        )
    if not negatives:
        raise DatasetBuildError(
            f"no negative labels for class {spec.defect_class!r}: "
            "cannot balance the dataset"
        )

    rng = np.random.default_rng(spec.seed)
    samples = []
    for label in positives:
        height, width = image_sizes[label.image_id]
        for _ in range(spec.crops_per_positive):
            window = _sample_window(label.point, crop, height, width, rng)
            samples.append(
                CropSample(image_id=label.image_id, window=window, label="defect",
                           defect_class=spec.defect_class,
                           origin_label_id=label.label_id)
            )
    n_positive = len(samples)
    for k in range(n_positive):
        label = negatives[k % len(negatives)]
        height, width = image_sizes[label.image_id]
        window = _sample_window(label.point, crop, height, width, rng)
        samples.append(
            CropSample(image_id=label.image_id, window=window, label="no_defect",
                       defect_class=spec.defect_class,
                       origin_label_id=label.label_id)
        )
    return samples


def load_crop_pixels(samples, manifest) -> tuple[np.ndarray, np.ndarray]:
    """Extract crop windows into (X, y) arrays for training.

    X is (N, crop, crop, 3) uint8, y is (N,) with 1 for defect crops.
    Images are read once each via the manifest paths.
    """
    from PIL import Image

    cache: dict[str, np.ndarray] = {}
    crops = []
    labels = []
    for sample in samples:
        if sample.image_id not in cache:
            info = manifest[sample.image_id]
            with Image.open(info.path) as img:
                cache[sample.image_id] = np.asarray(img.convert("RGB"))
        row0, col0, height, width = sample.window
        crops.append(cache[sample.image_id][row0:row0 + height, col0:col0 + width])
        labels.append(1 if sample.label == "defect" else 0)
    return np.stack(crops), np.array(labels, dtype=np.int64)


def split_dataset(samples, spec: CropDatasetSpec):
    """Partition samples into (train, val, test) by image id.

    No image contributes to two splits; fractions apply to image counts
    with largest-remainder rounding, every nonzero split getting at least
    one image. Deterministic for a fixed seed.
    """
    if not samples:
        raise DatasetBuildError("cannot split an empty sample list")
    image_ids = sorted({s.image_id for s in samples})
    fractions = spec.split_fractions
    nonzero = [i for i, f in enumerate(fractions) if f > 0]
    if len(image_ids) < len(nonzero):
        raise DatasetBuildError(
            f"{len(image_ids)} distinct image(s) cannot fill "
            f"{len(nonzero)} nonzero splits"
        )
    rng = np.random.default_rng(spec.seed)
    order = [image_ids[i] for i in rng.permutation(len(image_ids))]

    n = len(order)
    counts = [0, 0, 0]
    for i in nonzero:
        counts[i] = 1  # every nonzero split gets an image
    remaining = n - len(nonzero)
    quotas = [fractions[i] * n for i in range(3)]
    while remaining > 0:
        deficits = [(quotas[i] - counts[i], -i) for i in nonzero]
        best = max(range(len(nonzero)), key=lambda j: deficits[j])
        counts[nonzero[best]] += 1
        remaining -= 1

    boundaries = np.cumsum(counts)
    split_of = {}
    for idx, image_id in enumerate(order):
        split_of[image_id] = int(np.searchsorted(boundaries, idx, side="right"))
    buckets = ([], [], [])
    for sample in samples:
        buckets[split_of[sample.image_id]].append(sample)
    return buckets
