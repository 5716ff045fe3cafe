"""Column-major uncompressed RLE, matching the harness mask convention:
runs alternate zeros/ones, the first count is the (possibly empty) zero run.
"""

from __future__ import annotations

import numpy as np


def encode_mask(grid: np.ndarray) -> dict:
    """Encode a (height, width) boolean array into the wire mask object."""
    arr = np.asarray(grid, dtype=bool)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"mask grid must be 2D and non-empty, got shape {arr.shape}")
    height, width = arr.shape
    flat = arr.flatten(order="F")
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    counts = [int(c) for c in np.diff(bounds)]
    if flat[0]:
        counts.insert(0, 0)
    return {"w": int(width), "h": int(height), "counts": counts}


def box_fill(box: tuple[float, float, float, float], width: int, height: int) -> np.ndarray:
    """Half-open rasterization of a box onto the pixel grid."""
    import math

    x1, y1, x2, y2 = box
    grid = np.zeros((height, width), dtype=bool)
    x_lo, x_hi = max(math.ceil(x1), 0), min(math.ceil(x2), width)
    y_lo, y_hi = max(math.ceil(y1), 0), min(math.ceil(y2), height)
    if x_lo < x_hi and y_lo < y_hi:
        grid[y_lo:y_hi, x_lo:x_hi] = True
    return grid
