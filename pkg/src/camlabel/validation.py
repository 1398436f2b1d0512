"""Input validation helpers shared across modules."""

from __future__ import annotations

import numpy as np


def check_image_array(img, name="image") -> np.ndarray:
    """Validate an H x W x 3 8-bit RGB raster and return it as uint8."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{name} must be HxWx3, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        raise ValueError(f"{name} must be uint8, got {arr.dtype}")
    return arr


def check_mask_array(mask, name="mask") -> np.ndarray:
    """Validate a 2-D boolean mask and return it as bool."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.dtype != np.bool_:
        if not np.isin(arr, (0, 1)).all():
            raise ValueError(f"{name} must be binary")
        arr = arr.astype(bool)
    return arr


def check_point_in_bounds(point, height: int, width: int, name="point") -> tuple[int, int]:
    """Validate an integer (row, col) pixel coordinate against image bounds."""
    try:
        row, col = point
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a (row, col) pair, got {point!r}") from None
    row, col = int(row), int(col)
    if not (0 <= row < height and 0 <= col < width):
        raise ValueError(
            f"{name} ({row}, {col}) outside image bounds {height}x{width}"
        )
    return row, col


def check_positive(value, name: str):
    if value is None or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return value
