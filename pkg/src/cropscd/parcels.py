"""Object-level parcel extraction from edge probability rasters.

The raster-domain pipeline: threshold the probabilities, thicken the edge
mask so near-misses join, thin it back to a one-pixel network, extend
dangling line ends to close small gaps (an extension is kept only when it
reaches other skeleton or the raster border), prune remaining short spurs,
and take the 4-connected components of the complement as candidate parcels.
Border-touching components are background; small fragments are dropped;
enclosed voids are folded into their parcel before polygonization.

Bi-temporal fusion intersects two parcel sets in raster space by label
pairs and merges sub-threshold slivers into the neighbor with the longest
shared boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import BinaryMask, GridError, Raster, connected_components, dilate
from .skeleton import neighbor_counts, skeletonize
from .vectorize import PolygonSet, polygon_area, polygonize, rasterize, simplify_polygon

_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


@dataclass(frozen=True)
class ParcelParams:
    threshold: float = 0.5
    dilate_radius: int = 1
    min_area: int = 25  # pixels
    simplify_tol: float = 1.0  # pixels
    extend_len: int = 8  # pixels
    dangle_len: int = 5  # pixels

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise GridError(f"threshold must be in (0,1), got {self.threshold}")
        for name in ("dilate_radius", "min_area", "simplify_tol", "extend_len", "dangle_len"):
            if getattr(self, name) < 0:
                raise GridError(f"{name} must be >= 0")


def validate_edge_probabilities(edges: Raster) -> None:
    if edges.cells.min() < 0.0 or edges.cells.max() > 1.0:
        raise GridError("edge probabilities must lie in [0, 1]")


def binarize(edges: Raster, threshold: float = 0.5) -> BinaryMask:
    """Cell is edge iff probability >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise GridError(f"threshold must be in (0,1), got {threshold}")
    validate_edge_probabilities(edges)
    return BinaryMask(edges.cells >= threshold, edges.origin_x, edges.origin_y, edges.pixel_size)


def _walk_tail(grid: np.ndarray, start: tuple[int, int], max_steps: int = 5) -> list[tuple[int, int]]:
    """Follow the line from an endpoint for up to max_steps cells."""
    h, w = grid.shape
    path = [start]
    prev = None
    cur = start
    for _ in range(max_steps):
        neighbors = []
        for dr, dc in _RING:
            r, c = cur[0] + dr, cur[1] + dc
            if 0 <= r < h and 0 <= c < w and grid[r, c] and (r, c) != prev:
                neighbors.append((r, c))
        if len(neighbors) != 1:
            break
        prev = cur
        cur = neighbors[0]
        path.append(cur)
    return path


def extend_endpoints(skel: BinaryMask, extend_len: int) -> BinaryMask:
    """Extend each dangling endpoint along its incoming direction.

    The direction comes from the vector between the endpoint and the end of
    its (up to) 5-pixel tail. Marching steps are unit moves in the dominant
    direction; the extension is committed only when it lands on skeleton,
    becomes 4-adjacent to foreign skeleton, or reaches the raster border
    within extend_len steps, otherwise it is discarded.
    """
    grid = skel.cells.astype(np.uint8)
    if extend_len <= 0:
        return skel
    h, w = grid.shape
    ep = np.argwhere((grid == 1) & (neighbor_counts(grid) == 1))
    for r0, c0 in map(tuple, ep.tolist()):
        if grid[r0, c0] != 1:
            continue
        tail = _walk_tail(grid, (r0, c0))
        if len(tail) < 2:
            continue
        own = set(tail)
        dr = r0 - tail[-1][0]
        dc = c0 - tail[-1][1]
        norm = max(abs(dr), abs(dc))
        if norm == 0:
            continue
        step_r, step_c = dr / norm, dc / norm
        drawn = []
        committed = False
        for k in range(1, extend_len + 1):
            r = int(round(r0 + k * step_r))
            c = int(round(c0 + k * step_c))
            if not (0 <= r < h and 0 <= c < w):
                committed = True  # ran off the raster: the border closes the line
                break
            if grid[r, c] == 1 and (r, c) not in own:
                committed = True
                break
            touches = False
            for ar, ac in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if 0 <= ar < h and 0 <= ac < w and grid[ar, ac] == 1:
                    if (ar, ac) not in own and (ar, ac) not in drawn and (ar, ac) != (r0, c0):
                        touches = True
                        break
            drawn.append((r, c))
            if touches:
                committed = True
                break
        if committed:
            for r, c in drawn:
                grid[r, c] = 1
    return BinaryMask(grid, skel.origin_x, skel.origin_y, skel.pixel_size)


def prune_dangles(skel: BinaryMask, dangle_len: int) -> BinaryMask:
    """Delete open-ended spurs shorter than dangle_len pixels."""
    grid = skel.cells.astype(np.uint8)
    if dangle_len <= 0:
        return skel
    h, w = grid.shape
    ep = np.argwhere((grid == 1) & (neighbor_counts(grid) == 1))
    for r0, c0 in map(tuple, ep.tolist()):
        if grid[r0, c0] != 1:
            continue
        path = [(r0, c0)]
        visited = {(r0, c0)}
        cur = (r0, c0)
        while len(path) <= dangle_len:
            unvisited = []
            for dr, dc in _RING:
                r, c = cur[0] + dr, cur[1] + dc
                if 0 <= r < h and 0 <= c < w and grid[r, c] and (r, c) not in visited:
                    unvisited.append((r, c))
            if len(unvisited) != 1:
                break  # dead end or a branch: the spur ends here
            cur = unvisited[0]
            path.append(cur)
            visited.add(cur)
        if len(path) < dangle_len:
            for r, c in path:
                grid[r, c] = 0
    return BinaryMask(grid, skel.origin_x, skel.origin_y, skel.pixel_size)


def _renumber(labels: np.ndarray, keep_ids: np.ndarray) -> np.ndarray:
    lut = np.zeros(int(labels.max(initial=0)) + 1, dtype=np.uint16)
    lut[keep_ids] = np.arange(1, len(keep_ids) + 1, dtype=np.uint16)
    return lut[labels]


def candidate_parcels(edge_mask: BinaryMask, min_area: int) -> Raster:
    """4-connected components of the edge-network complement, cleaned up.

    Drops every border-touching component (the scene background) and all
    components smaller than min_area; enclosed voids are folded into the
    surrounding parcel, with nested parcels taking precedence over the fill
    of their host.
    """
    complement = BinaryMask(
        1 - edge_mask.cells, edge_mask.origin_x, edge_mask.origin_y, edge_mask.pixel_size
    )
    comps = connected_components(complement, 4)
    labels = comps.cells.astype(np.int64)
    border = np.unique(
        np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    )
    sizes = np.bincount(labels.ravel())
    keep = [
        i
        for i in range(1, sizes.size)
        if sizes[i] >= min_area and i not in set(border.tolist())
    ]
    if not keep:
        return comps.like(np.zeros_like(comps.cells))
    kept = _renumber(labels, np.asarray(keep))

    final = np.zeros_like(kept)
    kept_sizes = np.bincount(kept.ravel().astype(np.int64))
    order = sorted(range(1, len(keep) + 1), key=lambda pid: -int(kept_sizes[pid]))
    for pid in order:  # larger parcels first, so nested parcels overwrite fills
        filled = ndimage.binary_fill_holes(kept == pid)
        final[filled] = pid
    return comps.like(final.astype(np.uint16))


def parcels_from_labels(labels: Raster, simplify_tol: float) -> PolygonSet:
    polys = polygonize(labels)
    out = []
    sizes = np.bincount(labels.cells.ravel().astype(np.int64))
    tol = simplify_tol * labels.pixel_size
    for poly in polys:
        simplified = simplify_polygon(poly, tol)
        simplified.properties["pixels"] = int(sizes[poly.label])
        simplified.properties["area"] = polygon_area(simplified)
        out.append(simplified)
    return PolygonSet(out)


def extract_parcels(edges: Raster, params: ParcelParams = ParcelParams()) -> PolygonSet:
    """Full edge-map to parcel-set pipeline; an empty result is legal."""
    mask = binarize(edges, params.threshold)
    mask = dilate(mask, params.dilate_radius)
    skel = skeletonize(mask)
    skel = extend_endpoints(skel, params.extend_len)
    skel = prune_dangles(skel, params.dangle_len)
    labels = candidate_parcels(skel, params.min_area)
    return parcels_from_labels(labels, params.simplify_tol)


# ---------------------------------------------------------------------------
# Bi-temporal fusion
# ---------------------------------------------------------------------------


def pair_intersection_labels(t1: PolygonSet, t2: PolygonSet, template: Raster) -> tuple[Raster, dict]:
    """Label raster of nonempty pairwise parcel intersections.

    Each 4-connected component of each (t1 id, t2 id) cell set becomes its
    own label; the returned mapping records which pair produced each label.
    """
    l1 = rasterize(t1, template).cells.astype(np.int64)
    l2 = rasterize(t2, template).cells.astype(np.int64)
    both = (l1 > 0) & (l2 > 0)
    base = int(l2.max(initial=0)) + 1
    code = np.where(both, l1 * base + l2, 0)
    out = np.zeros(code.shape, dtype=np.uint16)
    pair_of: dict[int, tuple[int, int]] = {}
    next_id = 1
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    for pair_code in np.unique(code):
        if pair_code == 0:
            continue
        regions, n = ndimage.label(code == pair_code, structure=structure)
        for rid in range(1, n + 1):
            out[regions == rid] = next_id
            pair_of[next_id] = (int(pair_code // base), int(pair_code % base))
            next_id += 1
    # Renumber into raster-scan order of first appearance for determinism.
    flat = out.ravel()
    nz = flat != 0
    if nz.any():
        ids, first = np.unique(flat[nz], return_index=True)
        order = ids[np.argsort(first, kind="stable")]
        lut = np.zeros(int(out.max()) + 1, dtype=np.uint16)
        lut[order] = np.arange(1, len(order) + 1, dtype=np.uint16)
        out = lut[out]
        pair_of = {int(lut[i]): pair for i, pair in pair_of.items()}
    raster = Raster(out, template.origin_x, template.origin_y, template.pixel_size)
    return raster, pair_of


def _shared_boundary(labels: np.ndarray, pid: int) -> dict[int, int]:
    """Neighbor id -> count of 4-adjacent cell pairs shared with pid."""
    region = labels == pid
    counts: dict[int, int] = {}
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        rolled = np.roll(labels, shift, axis=axis)
        edge = region.copy()
        # roll wraps around; mask the wrapped row/column
        if axis == 0:
            if shift == 1:
                edge[0, :] = False
            else:
                edge[-1, :] = False
        else:
            if shift == 1:
                edge[:, 0] = False
            else:
                edge[:, -1] = False
        neighbor_vals = rolled[edge]
        for val in np.unique(neighbor_vals):
            v = int(val)
            if v != pid and v != 0:
                counts[v] = counts.get(v, 0) + int((neighbor_vals == val).sum())
    return counts


def merge_slivers(labels: Raster, min_area: int) -> Raster:
    """Merge components below min_area into their longest-boundary neighbor.

    Smallest sliver first; ties on boundary length go to the lower parcel
    id. Slivers with no parcel neighbor are dropped.
    """
    grid = labels.cells.astype(np.int64)
    while True:
        sizes = np.bincount(grid.ravel())
        sliver_ids = [
            i for i in range(1, sizes.size) if 0 < sizes[i] < min_area
        ]
        if not sliver_ids:
            break
        sliver_ids.sort(key=lambda i: (sizes[i], i))
        sid = sliver_ids[0]
        neighbors = _shared_boundary(grid, sid)
        if not neighbors:
            grid[grid == sid] = 0
            continue
        best = max(sorted(neighbors), key=lambda nid: (neighbors[nid], -nid))
        grid[grid == sid] = best
    # compact ids in raster-scan order
    flat = grid.ravel()
    nz = flat != 0
    out = np.zeros_like(grid, dtype=np.uint16)
    if nz.any():
        ids, first = np.unique(flat[nz], return_index=True)
        order = ids[np.argsort(first, kind="stable")]
        lut = np.zeros(int(grid.max()) + 1, dtype=np.uint16)
        lut[order] = np.arange(1, len(order) + 1, dtype=np.uint16)
        out = lut[grid]
    return labels.like(out)


def fuse_parcels(
    t1: PolygonSet, t2: PolygonSet, template: Raster, min_area: int = 25
) -> PolygonSet:
    """Bi-temporal fusion: pairwise intersections with sliver cleanup."""
    paired, _ = pair_intersection_labels(t1, t2, template)
    merged = merge_slivers(paired, min_area)
    return parcels_from_labels(merged, simplify_tol=0.0)
