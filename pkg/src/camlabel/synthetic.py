"""Synthetic defect scenes with exact ground truth.

Renders concrete-like textured backgrounds and paints three defect types:
cracks (thin anti-aliased random polylines, 1-4 px wide), spalling (rough
dark irregular blobs) and rust (reddish mottled blobs). Exact ground-truth
masks and click points are produced alongside, so datasets, training runs
and proposal regression tests can run at desk scale without any
real imagery.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter, binary_dilation

from . import masks as maskops
from .weakset import ImageInfo, WeakLabel, save_manifest, write_labels

RUST_TONE = np.array([0.47, 0.26, 0.14])


@dataclass(frozen=True)
class SceneParams:
    size: tuple[int, int] = (256, 256)
    n_crack: int = 2
    n_spalling: int = 1
    n_rust: int = 1
    crack_width: tuple[int, int] = (2, 4)
    crack_segments: int = 7
    crack_segment_len: tuple[int, int] = (14, 30)
    blob_radius: tuple[int, int] = (12, 26)
    n_negative_clicks: int = 3
    negative_margin: int = 8

    def __post_init__(self):
        if min(self.size) < 64:
            raise ValueError("scene must be at least 64x64")
        counts = (self.n_crack, self.n_spalling, self.n_rust)
        if any(c < 0 for c in counts) or self.n_negative_clicks < 0:
            raise ValueError("instance and click counts must be >= 0")
        if sum(counts) == 0 and self.n_negative_clicks == 0:
            raise ValueError(
                "degenerate scene: zero instances and zero negative clicks"
            )

    @property
    def instance_counts(self) -> dict[str, int]:
        return {"crack": self.n_crack, "spalling": self.n_spalling,
                "rust": self.n_rust}


@dataclass(frozen=True)
class SceneInstance:
    defect_class: str
    mask: np.ndarray
    click: tuple[int, int]


@dataclass
class SyntheticScene:
    image: np.ndarray
    instances: list[SceneInstance]
    negative_points: list[tuple[int, int]]
    params: SceneParams
    seed: int

    def masks_for(self, defect_class: str) -> list[np.ndarray]:
        return [inst.mask for inst in self.instances
                if inst.defect_class == defect_class]

    def union_mask(self, defect_class: str) -> np.ndarray:
        union = np.zeros(self.image.shape[:2], dtype=bool)
        for mask in self.masks_for(defect_class):
            union |= mask
        return union


def _background(shape, rng) -> np.ndarray:
    height, width = shape
    tone = rng.uniform(0.5, 0.62)
    low = gaussian_filter(rng.normal(0, 1, shape), sigma=18)
    mid = gaussian_filter(rng.normal(0, 1, shape), sigma=4)
    grain = rng.normal(0, 1, shape)
    lum = tone + 0.05 * low + 0.035 * mid + 0.015 * grain
    lum = np.clip(lum, 0.25, 0.85)
    rgb = np.stack([lum, lum * 0.995, lum * 0.975], axis=-1)
    return rgb


def _crack_polyline(shape, rng, params: SceneParams) -> np.ndarray:
    height, width = shape
    margin = 10
    pt = np.array([rng.uniform(margin, height - margin),
                   rng.uniform(margin, width - margin)])
    heading = rng.uniform(0, 2 * np.pi)
    points = [pt.copy()]
    for _ in range(params.crack_segments):
        heading += rng.normal(0, 0.55)
        step = rng.uniform(*params.crack_segment_len)
        pt = pt + step * np.array([np.sin(heading), np.cos(heading)])
        pt[0] = np.clip(pt[0], 2, height - 3)
        pt[1] = np.clip(pt[1], 2, width - 3)
        points.append(pt.copy())
    return np.array(points)


def _stroke(shape, polyline, width: int, antialiased: bool) -> np.ndarray:
    """Rasterized polyline stroke as float alpha in [0, 1]."""
    canvas = np.zeros(shape, dtype=np.uint8)
    pts = np.round(polyline[:, ::-1]).astype(np.int32).reshape(1, -1, 2)  # (x, y)
    line_type = cv2.LINE_AA if antialiased else cv2.LINE_8
    cv2.polylines(canvas, pts, isClosed=False, color=255, thickness=width,
                  lineType=line_type)
    return canvas.astype(np.float64) / 255.0


def _blob_mask(shape, rng, params: SceneParams) -> np.ndarray:
    height, width = shape
    radius = rng.uniform(*params.blob_radius)
    center = np.array([rng.uniform(radius + 4, height - radius - 4),
                       rng.uniform(radius + 4, width - radius - 4)])
    angles = np.linspace(0, 2 * np.pi, 26, endpoint=False)
    wobble = gaussian_filter(rng.normal(0, 1, 26), sigma=2, mode="wrap")
    wobble = wobble / (np.abs(wobble).max() + 1e-9)
    radii = radius * (1 + 0.38 * wobble)
    rows = center[0] + radii * np.sin(angles)
    cols = center[1] + radii * np.cos(angles)
    pts = np.column_stack([cols, rows]).astype(np.int32).reshape(1, -1, 2)
    canvas = np.zeros(shape, dtype=np.uint8)
    cv2.fillPoly(canvas, pts, 1)
    return canvas.astype(bool)


def _paint_crack(rgb, mask_alpha):
    depth = 0.72 * mask_alpha  # dark fissure
    return rgb * (1 - depth[..., None])


def _paint_spalling(rgb, mask, rng):
    rough = 0.10 * rng.normal(0, 1, mask.shape) + 0.22
    rough = np.clip(rough, 0.08, 0.4)
    factor = np.where(mask, 1 - rough, 1.0)
    out = rgb * factor[..., None]
    # pitted speckle inside the spalled area
    speckle = (rng.random(mask.shape) < 0.08) & mask
    out[speckle] *= 0.55
    return out


def _paint_rust(rgb, mask, rng):
    alpha = np.where(mask, 0.55 + 0.3 * np.clip(
        gaussian_filter(rng.normal(0, 1, mask.shape), 3), -1, 1), 0.0)
    alpha = np.clip(alpha, 0.0, 0.95)
    return rgb * (1 - alpha[..., None]) + RUST_TONE[None, None, :] * alpha[..., None]


def _disjoint(mask, existing) -> bool:
    return not any((mask & other).any() for other in existing)


def generate_synthetic_scene(params: SceneParams, seed: int) -> SyntheticScene:
    """Deterministic scene for (params, seed); same-class masks disjoint."""
    rng = np.random.default_rng(seed)
    shape = params.size
    rgb = _background(shape, rng)
    instances: list[SceneInstance] = []
    per_class: dict[str, list[np.ndarray]] = {"crack": [], "spalling": [], "rust": []}

    for _ in range(params.n_crack):
        for _attempt in range(40):
            polyline = _crack_polyline(shape, rng, params)
            width = int(rng.integers(params.crack_width[0], params.crack_width[1] + 1))
            mask = _stroke(shape, polyline, width, antialiased=False) > 0
            if mask.any() and _disjoint(mask, per_class["crack"]):
                break
        else:
            raise RuntimeError("could not place a disjoint crack; relax params")
        alpha = _stroke(shape, polyline, width, antialiased=True)
        rgb = _paint_crack(rgb, alpha)
        per_class["crack"].append(mask)

    for _ in range(params.n_spalling):
        for _attempt in range(40):
            mask = _blob_mask(shape, rng, params)
            if mask.any() and _disjoint(mask, per_class["spalling"]):
                break
        else:
            raise RuntimeError("could not place a disjoint spalling blob")
        rgb = _paint_spalling(rgb, mask, rng)
        per_class["spalling"].append(mask)

    for _ in range(params.n_rust):
        for _attempt in range(40):
            mask = _blob_mask(shape, rng, params)
            if mask.any() and _disjoint(mask, per_class["rust"]):
                break
        else:
            raise RuntimeError("could not place a disjoint rust blob")
        rgb = _paint_rust(rgb, mask, rng)
        per_class["rust"].append(mask)

    for defect_class in ("crack", "spalling", "rust"):
        for mask in per_class[defect_class]:
            pixels = np.argwhere(mask)
            click = tuple(int(v) for v in pixels[rng.integers(0, len(pixels))])
            instances.append(SceneInstance(defect_class=defect_class, mask=mask,
                                           click=click))

    forbidden = np.zeros(shape, dtype=bool)
    for inst in instances:
        forbidden |= inst.mask
    if params.negative_margin > 0:
        forbidden = binary_dilation(forbidden, iterations=params.negative_margin)
    negative_points = []
    free = np.argwhere(~forbidden)
    if params.n_negative_clicks > 0:
        if len(free) == 0:
            raise RuntimeError("no defect-free area left for negative clicks")
        for _ in range(params.n_negative_clicks):
            negative_points.append(
                tuple(int(v) for v in free[rng.integers(0, len(free))])
            )

    image = np.clip(rgb * 255.0, 0, 255).astype(np.uint8)
    return SyntheticScene(image=image, instances=instances,
                          negative_points=negative_points, params=params, seed=seed)


def scene_weak_labels(scene: SyntheticScene, image_id: str,
                      negative_classes=("crack", "spalling", "rust")) -> list[WeakLabel]:
    """Click labels for a scene: one positive per instance, and one negative
    per (defect-free point, class) since a clean patch negates every class."""
    labels = []
    for i, inst in enumerate(scene.instances):
        labels.append(
            WeakLabel(label_id=f"{image_id}-pos-{i}", image_id=image_id,
                      point=inst.click, defect_class=inst.defect_class,
                      polarity="positive")
        )
    for j, point in enumerate(scene.negative_points):
        for defect_class in negative_classes:
            labels.append(
                WeakLabel(label_id=f"{image_id}-neg-{j}-{defect_class}",
                          image_id=image_id, point=point,
                          defect_class=defect_class, polarity="negative")
            )
    return labels


def write_scene_corpus(out_dir, n_scenes: int, params: SceneParams, seed: int,
                       negative_classes=("crack", "spalling", "rust")) -> dict:
    """Render a corpus to disk: images/, manifest.json, labels.json, gt.json.

    Ground truth is stored per scene as RLE masks so evaluation never has
    to re-render. Returns the written paths.
    """
    from PIL import Image

    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    manifest: dict[str, ImageInfo] = {}
    labels: list[WeakLabel] = []
    gt = {}
    for i in range(n_scenes):
        scene = generate_synthetic_scene(params, seed + i)
        image_id = f"scene_{i:04d}"
        path = out_dir / "images" / f"{image_id}.png"
        Image.fromarray(scene.image).save(path)
        manifest[image_id] = ImageInfo(image_id=image_id, path=str(path),
                                       height=scene.image.shape[0],
                                       width=scene.image.shape[1])
        labels.extend(scene_weak_labels(scene, image_id, negative_classes))
        gt[image_id] = [
            {"defect_class": inst.defect_class,
             "mask": maskops.encode_rle(inst.mask),
             "click": list(inst.click)}
            for inst in scene.instances
        ]
    save_manifest(manifest, out_dir / "manifest.json")
    write_labels(labels, out_dir / "labels.json")
    (out_dir / "gt.json").write_text(json.dumps(gt))
    (out_dir / "params.json").write_text(
        json.dumps({"seed": seed, "n_scenes": n_scenes, **asdict(params)}, indent=2)
    )
    return {
        "manifest": out_dir / "manifest.json",
        "labels": out_dir / "labels.json",
        "gt": out_dir / "gt.json",
        "images": out_dir / "images",
    }
