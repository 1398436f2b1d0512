"""Attribution map to instance masks: threshold, closure, components, filter.

Refined maps are binarized with a deliberately low threshold (default 0.1
of the unit max) so faint defect parts survive; the resulting sparsity and
noise are handled by morphological closure and a minimum-area filter on the
connected components. Stage order is fixed: binarize -> closure ->
components -> area filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .attribution import AttributionMap
from .validation import check_mask_array

CONNECTIVITY_STRUCTURES = {
    4: np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool),
    8: np.ones((3, 3), dtype=bool),
}


@dataclass(frozen=True)
class PostprocConfig:
    theta: float = 0.1
    closure_kernel: int = 5
    min_area: int = 64
    connectivity: int = 8

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError(f"theta must be in (0, 1), got {self.theta}")
        if self.closure_kernel < 1 or self.closure_kernel % 2 == 0:
            raise ValueError(f"closure_kernel must be odd >= 1, got {self.closure_kernel}")
        if self.min_area < 0:
            raise ValueError("min_area must be >= 0")
        if self.connectivity not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")


@dataclass(frozen=True)
class BinaryMask:
    values: np.ndarray
    source_ref: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", check_mask_array(self.values))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class Component:
    """One connected region: its pixels plus derived geometry."""

    pixels: np.ndarray  # (N, 2) array of (row, col)
    area: int
    bbox: tuple[int, int, int, int]  # (row0, col0, row1, col1) inclusive
    centroid: tuple[float, float]

    def to_mask(self, shape) -> np.ndarray:
        mask = np.zeros(shape, dtype=bool)
        mask[self.pixels[:, 0], self.pixels[:, 1]] = True
        return mask


@dataclass(frozen=True)
class ComponentSet:
    components: tuple[Component, ...]
    shape: tuple[int, int]
    source_ref: str | None = None

    def __len__(self) -> int:
        return len(self.components)

    def __iter__(self):
        return iter(self.components)

    def to_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for comp in self.components:
            mask[comp.pixels[:, 0], comp.pixels[:, 1]] = True
        return mask


def binarize(amap: AttributionMap, theta: float = 0.1) -> BinaryMask:
    """Pixel true iff normalized value >= theta (inclusive)."""
    if amap.normalization != "unit_max":
        raise ValueError("binarize expects a unit-max normalized map, got raw")
    if not 0 < theta < 1:
        raise ValueError(f"theta must be in (0, 1), got {theta}")
    return BinaryMask(values=amap.values >= theta, source_ref=amap.image_ref)


def closure(mask: BinaryMask, kernel: int = 5) -> BinaryMask:
    """Morphological closure (dilate then erode) with a square element.

    The mask is padded with background by the kernel radius first, which
    makes the computation identical to closure on the infinite plane
    restricted to the image, so the result contains the input (extensive)
    and a second application changes nothing (idempotent).
    """
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be odd >= 1, got {kernel}")
    if kernel == 1:
        return BinaryMask(values=mask.values.copy(), source_ref=mask.source_ref)
    radius = kernel // 2
    structure = np.ones((kernel, kernel), dtype=bool)
    padded = np.pad(mask.values, radius, constant_values=False)
    closed = ndimage.binary_erosion(
        ndimage.binary_dilation(padded, structure=structure), structure=structure
    )
    return BinaryMask(values=closed[radius:-radius, radius:-radius],
                      source_ref=mask.source_ref)


def components(mask: BinaryMask, connectivity: int = 8) -> ComponentSet:
    """Partition true pixels into maximal connected regions.

    Components come back sorted by bounding-box (row, col) so downstream
    ordering is deterministic.
    """
    if connectivity not in CONNECTIVITY_STRUCTURES:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    labels, count = ndimage.label(mask.values,
                                  structure=CONNECTIVITY_STRUCTURES[connectivity])
    comps = []
    for index, window in enumerate(ndimage.find_objects(labels), start=1):
        rows, cols = np.nonzero(labels[window] == index)
        rows = rows + window[0].start
        cols = cols + window[1].start
        comps.append(
            Component(
                pixels=np.column_stack([rows, cols]),
                area=int(rows.size),
                bbox=(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())),
                centroid=(float(rows.mean()), float(cols.mean())),
            )
        )
    comps.sort(key=lambda c: (c.bbox[0], c.bbox[1]))
    return ComponentSet(components=tuple(comps), shape=mask.values.shape,
                        source_ref=mask.source_ref)


def filter_area(comps: ComponentSet, min_area: int = 64) -> ComponentSet:
    """Keep components with area >= min_area (inclusive)."""
    if min_area < 0:
        raise ValueError("min_area must be >= 0")
    kept = tuple(c for c in comps.components if c.area >= min_area)
    return ComponentSet(components=kept, shape=comps.shape, source_ref=comps.source_ref)


def postprocess(amap: AttributionMap, config: PostprocConfig | None = None) -> ComponentSet:
    """Full pipeline: binarize -> closure -> components -> area filter."""
    config = config or PostprocConfig()
    mask = binarize(amap, config.theta)
    closed = closure(mask, config.closure_kernel)
    comps = components(closed, config.connectivity)
    return filter_area(comps, config.min_area)


class MaskPostprocessor(BaseEstimator, TransformerMixin):
    """Transformer wrapper: normalized maps in, component sets out."""

    def __init__(self, theta=0.1, closure_kernel=5, min_area=64, connectivity=8):
        self.theta = theta
        self.closure_kernel = closure_kernel
        self.min_area = min_area
        self.connectivity = connectivity

    def _config(self) -> PostprocConfig:
        return PostprocConfig(theta=self.theta, closure_kernel=self.closure_kernel,
                              min_area=self.min_area, connectivity=self.connectivity)

    def fit(self, X=None, y=None):
        self._config()  # validates parameters
        return self

    def transform(self, X) -> list[ComponentSet]:
        """X: iterable of unit-max AttributionMap (or (N, H, W) array)."""
        config = self._config()
        out = []
        for item in X:
            if not isinstance(item, AttributionMap):
                item = AttributionMap(values=np.asarray(item),
                                      normalization="unit_max")
            out.append(postprocess(item, config))
        return out
