"""Full-image proposal generation.

Large inspection images do not fit the classifier input, so they are tiled
with overlap, climbed per tile, and the normalized per-tile maps are merged
by pixelwise maximum (mean-merging washes out thin cracks). The merged map
goes through post-processing and every surviving connected component
becomes one instance proposal. Proposals are emitted for every image; weak
ones included, since rejecting a false positive costs the reviewer almost
nothing compared to annotating a missed defect.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import masks as maskops
from .attribution import AttributionMap
from .classifier import predict
from .climb import ClimbConfig, advcam
from .postproc import PostprocConfig, postprocess
from .validation import check_image_array


class TilingError(ValueError):
    pass


class MissingModelError(KeyError):
    pass


class TileFailureError(RuntimeError):
    """One or more tiles failed; carries the failing windows."""

    def __init__(self, failures):
        self.failures = failures
        windows = ", ".join(str(w) for w, _ in failures)
        super().__init__(f"{len(failures)} tile(s) failed: {windows}")


@dataclass(frozen=True)
class TilingConfig:
    tile_size: int = 320
    overlap_fraction: float = 0.5
    merge: str = "max"
    small_image: str = "error"  # "error" | "single"

    def __post_init__(self):
        if self.tile_size < 1:
            raise ValueError("tile_size must be >= 1")
        if not 0 <= self.overlap_fraction <= 0.9:
            raise ValueError("overlap_fraction must be in [0, 0.9]")
        if self.merge != "max":
            raise ValueError(f"unsupported merge mode {self.merge!r}")
        if self.small_image not in ("error", "single"):
            raise ValueError("small_image must be 'error' or 'single'")


@dataclass(frozen=True)
class InstanceProposal:
    proposal_id: str
    image_id: str
    defect_class: str
    mask: dict  # RLE in full-image coordinates
    polygon: list  # [(row, col), ...] simplified outer contour
    score: float  # max normalized map value inside the mask
    area: int
    generator: dict  # climb + postproc + tiling parameter snapshot

    def to_record(self) -> dict:
        return {
            "proposal_id": self.proposal_id,
            "image_id": self.image_id,
            "defect_class": self.defect_class,
            "mask": self.mask,
            "polygon": [[int(r), int(c)] for r, c in self.polygon],
            "score": self.score,
            "area": self.area,
            "generator": self.generator,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "InstanceProposal":
        return cls(
            proposal_id=rec["proposal_id"],
            image_id=rec["image_id"],
            defect_class=rec["defect_class"],
            mask=rec["mask"],
            polygon=[(int(r), int(c)) for r, c in rec["polygon"]],
            score=float(rec["score"]),
            area=int(rec["area"]),
            generator=rec.get("generator", {}),
        )

    def decode_mask(self) -> np.ndarray:
        return maskops.decode_rle(self.mask)


def tile(image_size, config: TilingConfig) -> list[tuple[int, int, int, int]]:
    """Overlapping tile windows (row0, col0, h, w) covering the image.

    The grid strides by tile_size * (1 - overlap); the last row/column is
    shifted inward so every window stays in bounds and the union covers
    the image exactly.
    """
    height, width = int(image_size[0]), int(image_size[1])
    t = config.tile_size
    if height < t or width < t:
        if config.small_image == "single":
            return [(0, 0, height, width)]
        raise TilingError(
            f"image {height}x{width} smaller than tile size {t}"
        )
    stride = max(1, round(t * (1 - config.overlap_fraction)))

    def offsets(dim: int) -> list[int]:
        offs = list(range(0, dim - t + 1, stride))
        if offs[-1] != dim - t:
            offs.append(dim - t)
        return offs

    return [(r, c, t, t) for r in offsets(height) for c in offsets(width)]


def merged_class_map(image, model, tiling: TilingConfig, climb_cfg: ClimbConfig,
                     class_index: int = 0, image_ref: str | None = None,
                     prefilter: bool = False, prefilter_threshold: float = 0.05
                     ) -> AttributionMap:
    """Pixelwise-max merge of per-tile climbed maps over the whole image."""
    image = check_image_array(image)
    windows = tile(image.shape[:2], tiling)
    full = np.zeros(image.shape[:2], dtype=np.float32)
    failures = []
    for window in windows:
        row0, col0, height, width = window
        patch = image[row0:row0 + height, col0:col0 + width]
        try:
            if prefilter and float(predict(model, patch)[0]) < prefilter_threshold:
                continue
            trace = advcam(model, patch, class_index, climb_cfg, image_ref=image_ref)
        except Exception as err:  # noqa: BLE001 - collected into a partial-result error
            failures.append((window, err))
            continue
        region = full[row0:row0 + height, col0:col0 + width]
        np.maximum(region, trace.aggregate.values.astype(np.float32), out=region)
    if failures:
        raise TileFailureError(failures)
    return AttributionMap(values=full, normalization="unit_max",
                          class_id=class_index, image_ref=image_ref,
                          generator="advcam", degenerate=not bool(full.max() > 0))


def propose(image, classes, models, tiling: TilingConfig | None = None,
            climb_cfg: ClimbConfig | None = None,
            postproc_cfg: PostprocConfig | None = None,
            image_id: str = "image", prefilter: bool = False,
            prefilter_threshold: float = 0.05) -> list[InstanceProposal]:
    """Generate instance proposals for every requested class of one image.

    ``models`` maps class name -> trained model. Components are ordered by
    (class, bbox row, bbox col) and ids derived from that order, so output
    is deterministic for identical inputs.
    """
    tiling = tiling or TilingConfig()
    climb_cfg = climb_cfg or ClimbConfig()
    postproc_cfg = postproc_cfg or PostprocConfig()
    image = check_image_array(image)
    snapshot = {
        "climb": asdict(climb_cfg),
        "postproc": asdict(postproc_cfg),
        "tiling": asdict(tiling),
    }
    proposals = []
    for defect_class in classes:
        if defect_class not in models:
            raise MissingModelError(
                f"no trained checkpoint for class {defect_class!r}"
            )
        model = models[defect_class]
        full_map = merged_class_map(image, model, tiling, climb_cfg,
                                    image_ref=image_id, prefilter=prefilter,
                                    prefilter_threshold=prefilter_threshold)
        comps = postprocess(full_map, postproc_cfg)
        for index, comp in enumerate(comps):
            mask = comp.to_mask(full_map.shape)
            score = float(full_map.values[mask].max())
            proposals.append(
                InstanceProposal(
                    proposal_id=f"{image_id}:{defect_class}:{index:04d}",
                    image_id=image_id,
                    defect_class=defect_class,
                    mask=maskops.encode_rle(mask),
                    polygon=maskops.mask_to_polygon(mask),
                    score=score,
                    area=comp.area,
                    generator=snapshot,
                )
            )
    return proposals


def configs_from_snapshot(snapshot: dict):
    """Rebuild (tiling, climb, postproc) configs from a proposal snapshot."""
    climb_raw = dict(snapshot["climb"])
    post_raw = dict(snapshot["postproc"])
    tile_raw = dict(snapshot["tiling"])
    return (
        TilingConfig(**tile_raw),
        ClimbConfig(**climb_raw),
        PostprocConfig(**post_raw),
    )


def write_proposals(proposals, path) -> None:
    Path(path).write_text(
        json.dumps([p.to_record() for p in proposals], indent=2)
    )


def read_proposals(path) -> list[InstanceProposal]:
    records = json.loads(Path(path).read_text())
    return [InstanceProposal.from_record(rec) for rec in records]
