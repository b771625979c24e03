"""Morphological thinning of binary masks to 1-pixel-wide skeletons.

Zhang-Suen two-subiteration thinning, with one safeguard: each
subiteration's candidates come from a snapshot of the grid, but deletions
are applied in raster order and a candidate is only removed while its
crossing number on the live grid is still 1 (it is still a simple point).
This keeps the classic centerline behavior while guaranteeing that no
connected component is ever split or deleted entirely.
"""

from __future__ import annotations

import numpy as np

from .grid import BinaryMask

# Neighbor ring in Zhang-Suen order: N, NE, E, SE, S, SW, W, NW.
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _neighbor_stack(grid: np.ndarray) -> np.ndarray:
    h, w = grid.shape
    padded = np.zeros((h + 2, w + 2), dtype=grid.dtype)
    padded[1:-1, 1:-1] = grid
    return np.stack([padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] for dr, dc in _RING])


def _candidates(grid: np.ndarray, subiteration: int) -> np.ndarray:
    nbrs = _neighbor_stack(grid)
    b = nbrs.sum(axis=0)
    ring = np.concatenate([nbrs, nbrs[:1]], axis=0)
    a = ((ring[:-1] == 0) & (ring[1:] == 1)).sum(axis=0)
    n, e, s, w = nbrs[0], nbrs[2], nbrs[4], nbrs[6]
    if subiteration == 0:
        direct = (n * e * s == 0) & (e * s * w == 0)
    else:
        direct = (n * e * w == 0) & (n * s * w == 0)
    return (grid == 1) & (b >= 2) & (b <= 6) & (a == 1) & direct


def _crossing_number(padded: np.ndarray, r: int, c: int) -> int:
    ring = [int(padded[r + dr, c + dc]) for dr, dc in _RING]
    ring.append(ring[0])
    return sum(1 for k in range(8) if ring[k] == 0 and ring[k + 1] == 1)


def skeletonize(mask: BinaryMask) -> BinaryMask:
    """Thin a mask to a 1-pixel-wide, 8-connected skeleton.

    Idempotent; every input component keeps exactly one skeleton component.
    """
    grid = mask.cells.astype(np.uint8)
    h, w = grid.shape
    padded = np.zeros((h + 2, w + 2), dtype=np.uint8)
    padded[1:-1, 1:-1] = grid
    while True:
        deleted_any = False
        for sub in (0, 1):
            cand = _candidates(padded[1:-1, 1:-1], sub)
            rows, cols = np.nonzero(cand)
            for r, c in zip(rows.tolist(), cols.tolist()):
                if _crossing_number(padded, r + 1, c + 1) == 1:
                    padded[r + 1, c + 1] = 0
                    deleted_any = True
        if not deleted_any:
            break
    return BinaryMask(padded[1:-1, 1:-1], mask.origin_x, mask.origin_y, mask.pixel_size)


def neighbor_counts(grid: np.ndarray) -> np.ndarray:
    """8-neighbor count per cell of a 0/1 grid."""
    return _neighbor_stack(grid.astype(np.uint8)).sum(axis=0)


def endpoints(grid: np.ndarray) -> np.ndarray:
    """Skeleton cells with exactly one 8-neighbor."""
    return (grid == 1) & (neighbor_counts(grid) == 1)
