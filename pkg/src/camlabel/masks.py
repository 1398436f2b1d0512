"""Binary-mask serialization and geometry helpers.

Masks travel between the proposer, the review service and any UI as
COCO-style run-length encodings, so one mask is a JSON object

    {"size": [height, width], "counts": "<compressed string>"}

The encoding is bit-exact with the de-facto COCO toolkit format:

1. Flatten the mask in column-major (Fortran) order.
2. Take run lengths of alternating values, always starting with the length
   of the leading run of zeros (0 if the first pixel is set).
3. Compress the run lengths into ASCII. Each value is first delta-coded:
   ``x = counts[i] - counts[i-2]`` for ``i > 2``, raw otherwise. Then x is
   written low-bits-first in 5-bit groups: ``c = x & 0x1f``, arithmetic
   shift ``x >>= 5``; emission continues while ``x != -1`` if the sign bit
   (0x10) of c is set, else while ``x != 0``; every non-final group gets
   the continuation bit 0x20; each group is the character ``chr(c + 48)``.

Polygons are simplified outer contours stored as (row, col) vertex lists.
"""

from __future__ import annotations

import numpy as np
import cv2

from .validation import check_mask_array


def mask_to_runs(mask) -> list[int]:
    """Column-major run lengths of a binary mask, leading zero-run first."""
    mask = check_mask_array(mask)
    flat = mask.ravel(order="F")
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def runs_to_mask(runs, shape) -> np.ndarray:
    height, width = shape
    total = sum(runs)
    if total != height * width:
        raise ValueError(f"runs sum to {total}, expected {height * width}")
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    return flat.reshape((height, width), order="F")


def _compress_counts(counts) -> str:
    chars = []
    for i, cnt in enumerate(counts):
        x = int(cnt)
        if i > 2:
            x -= int(counts[i - 2])
        while True:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            chars.append(chr(c + 48))
            if not more:
                break
    return "".join(chars)


def _decompress_counts(s: str) -> list[int]:
    counts: list[int] = []
    p = 0
    while p < len(s):
        x = 0
        k = 0
        while True:
            c = ord(s[p]) - 48
            if not 0 <= c < 64:
                raise ValueError(f"invalid RLE character {s[p]!r} at {p}")
            x |= (c & 0x1F) << (5 * k)
            p += 1
            k += 1
            if not c & 0x20:
                if c & 0x10:
                    x |= -1 << (5 * k)
                break
            if p >= len(s):
                raise ValueError("truncated RLE string")
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def encode_rle(mask) -> dict:
    """Encode a binary mask as {"size": [H, W], "counts": str}."""
    mask = check_mask_array(mask)
    return {
        "size": [int(mask.shape[0]), int(mask.shape[1])],
        "counts": _compress_counts(mask_to_runs(mask)),
    }


def decode_rle(rle: dict) -> np.ndarray:
    """Decode {"size": [H, W], "counts": str} back to a boolean mask."""
    try:
        height, width = rle["size"]
        counts = rle["counts"]
    except (KeyError, TypeError, ValueError):
        raise ValueError(f"malformed RLE object: {rle!r}") from None
    runs = _decompress_counts(counts)
    if any(r < 0 for r in runs):
        raise ValueError("negative run length after decompression")
    return runs_to_mask(runs, (int(height), int(width)))


def mask_to_polygon(mask, epsilon: float = 1.0) -> list[tuple[int, int]]:
    """Simplified outer contour of a nonempty mask as (row, col) vertices.

    For a mask with several connected pieces the largest contour is
    returned; callers hand in single components.
    """
    mask = check_mask_array(mask)
    if not mask.any():
        raise ValueError("cannot trace the contour of an empty mask")
    contours, _ = cv2.findContours(
        mask.astype(np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_SIMPLE
    )
    contour = max(contours, key=cv2.contourArea)
    approx = cv2.approxPolyDP(contour, epsilon, closed=True)
    # cv2 vertices are (x=col, y=row)
    return [(int(pt[0][1]), int(pt[0][0])) for pt in approx]


def polygon_to_mask(polygon, shape) -> np.ndarray:
    """Rasterize a (row, col) polygon onto a H x W boolean canvas."""
    height, width = shape
    canvas = np.zeros((height, width), dtype=np.uint8)
    pts = np.array([[(c, r) for r, c in polygon]], dtype=np.int32)
    cv2.fillPoly(canvas, pts, 1)
    return canvas.astype(bool)


def mask_centroid(mask) -> tuple[int, int]:
    """Integer (row, col) centroid of a nonempty mask's pixels."""
    mask = check_mask_array(mask)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise ValueError("centroid of an empty mask is undefined")
    return int(round(rows.mean())), int(round(cols.mean()))
