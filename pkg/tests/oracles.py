"""Independent brute-force oracles the library code is checked against.

These deliberately share no code with the package: components via BFS
flood fill, morphology via direct neighborhood loops, run lengths via a
python walk over the flattened mask, gradients via central finite
differences.
"""

from collections import deque

import numpy as np

NEIGHBORS_4 = [(-1, 0), (1, 0), (0, -1), (0, 1)]
NEIGHBORS_8 = NEIGHBORS_4 + [(-1, -1), (-1, 1), (1, -1), (1, 1)]


def flood_fill_components(mask, connectivity=8):
    """Partition of true pixels into frozensets of (row, col) tuples."""
    mask = np.asarray(mask, dtype=bool)
    neighbors = NEIGHBORS_8 if connectivity == 8 else NEIGHBORS_4
    height, width = mask.shape
    seen = np.zeros_like(mask)
    parts = []
    for r0 in range(height):
        for c0 in range(width):
            if not mask[r0, c0] or seen[r0, c0]:
                continue
            queue = deque([(r0, c0)])
            seen[r0, c0] = True
            pixels = []
            while queue:
                r, c = queue.popleft()
                pixels.append((r, c))
                for dr, dc in neighbors:
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < height and 0 <= cc < width \
                            and mask[rr, cc] and not seen[rr, cc]:
                        seen[rr, cc] = True
                        queue.append((rr, cc))
            parts.append(frozenset(pixels))
    return parts


def brute_dilate(mask, kernel):
    """Square-element dilation; outside the array counts as background."""
    mask = np.asarray(mask, dtype=bool)
    radius = kernel // 2
    height, width = mask.shape
    out = np.zeros_like(mask)
    for r in range(height):
        for c in range(width):
            window = mask[max(0, r - radius):r + radius + 1,
                          max(0, c - radius):c + radius + 1]
            out[r, c] = window.any()
    return out


def brute_erode(mask, kernel):
    """Square-element erosion; outside the array counts as background."""
    mask = np.asarray(mask, dtype=bool)
    radius = kernel // 2
    height, width = mask.shape
    out = np.zeros_like(mask)
    for r in range(height):
        for c in range(width):
            if (r - radius < 0 or r + radius >= height
                    or c - radius < 0 or c + radius >= width):
                continue  # neighborhood leaves the array: background wins
            window = mask[r - radius:r + radius + 1, c - radius:c + radius + 1]
            out[r, c] = window.all()
    return out


def brute_closure(mask, kernel):
    """Dilate then erode on a background-padded canvas, then crop."""
    mask = np.asarray(mask, dtype=bool)
    radius = kernel // 2
    if radius == 0:
        return mask.copy()
    padded = np.zeros((mask.shape[0] + 2 * radius, mask.shape[1] + 2 * radius),
                      dtype=bool)
    padded[radius:-radius, radius:-radius] = mask
    closed = brute_erode(brute_dilate(padded, kernel), kernel)
    return closed[radius:-radius, radius:-radius]


def naive_column_major_runs(mask):
    """Run lengths of the column-major flattening, leading zero-run first."""
    mask = np.asarray(mask, dtype=bool)
    flat = [bool(v) for v in mask.ravel(order="F")]
    runs = []
    current = False
    count = 0
    for value in flat:
        if value == current:
            count += 1
        else:
            runs.append(count)
            current = value
            count = 1
    runs.append(count)
    return runs


def central_difference_grad(fn, x, eps):
    """Central finite-difference gradient of scalar fn at numpy array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        plus = x.copy()
        minus = x.copy()
        plus[idx] += eps
        minus[idx] -= eps
        grad[idx] = (fn(plus) - fn(minus)) / (2 * eps)
        it.iternext()
    return grad
