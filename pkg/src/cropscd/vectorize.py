"""Vector polygons and exact raster/vector conversion.

Polygon boundaries produced by ``polygonize`` trace pixel edges, so every
polygon is a union of whole pixel squares and ``rasterize`` recovers the
source label raster cell-exactly. Smoothing is a separate, explicit step
(``simplify_polygon``).

Ring convention: rings are closed (first vertex repeated last), exteriors
wind counter-clockwise in map coordinates (y up), interiors clockwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import GridError, Raster

Point = tuple[float, float]
Ring = list[Point]


class PolygonError(ValueError):
    """Invalid ring or polygon; inputs are rejected, never repaired."""


def ring_signed_area(ring: Ring) -> float:
    """Shoelace area; positive for counter-clockwise rings (map y up)."""
    xs = np.array([p[0] for p in ring], dtype=np.float64)
    ys = np.array([p[1] for p in ring], dtype=np.float64)
    return float(0.5 * np.sum(xs[:-1] * ys[1:] - xs[1:] * ys[:-1]))


def validate_ring(ring: Ring) -> None:
    if len(ring) < 4:
        raise PolygonError(f"ring needs >= 4 vertices, got {len(ring)}")
    if ring[0] != ring[-1]:
        raise PolygonError("ring is not closed (first vertex != last)")


@dataclass
class Polygon:
    """Single polygon: one exterior ring, zero or more interior rings (holes)."""

    exterior: Ring
    interiors: list[Ring] = field(default_factory=list)
    label: int = 0
    properties: dict = field(default_factory=dict)

    def validate(self) -> None:
        validate_ring(self.exterior)
        if ring_signed_area(self.exterior) <= 0:
            raise PolygonError("exterior ring must be counter-clockwise with area > 0")
        for hole in self.interiors:
            validate_ring(hole)
            if ring_signed_area(hole) >= 0:
                raise PolygonError("interior rings must be clockwise")
        if polygon_area(self) <= 0:
            raise PolygonError("polygon area must be > 0")

    def rings(self) -> list[Ring]:
        return [self.exterior] + list(self.interiors)


@dataclass
class PolygonSet:
    """Ordered collection of polygons sharing one map coordinate system."""

    polygons: list[Polygon] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.polygons)

    def __iter__(self):
        return iter(self.polygons)

    def validate(self) -> None:
        for p in self.polygons:
            p.validate()

    def labels(self) -> list[int]:
        return [p.label for p in self.polygons]


def polygon_area(poly: Polygon) -> float:
    """Exterior shoelace area minus hole areas (holes carry negative shoelace)."""
    area = ring_signed_area(poly.exterior)
    for hole in poly.interiors:
        area += ring_signed_area(hole)
    return area


def point_in_ring(x: float, y: float, ring: Ring) -> bool:
    """Even-odd ray-casting test against a single closed ring."""
    inside = False
    for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
        if (y1 <= y < y2) or (y2 <= y < y1):
            xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < xc:
                inside = not inside
    return inside


def point_in_polygon(x: float, y: float, poly: Polygon) -> bool:
    """Even-odd over all rings: inside the exterior and outside every hole."""
    crossings = 0
    for ring in poly.rings():
        if point_in_ring(x, y, ring):
            crossings += 1
    return crossings % 2 == 1


# ---------------------------------------------------------------------------
# Polygonization: label raster -> pixel-edge polygons
# ---------------------------------------------------------------------------

# Directed boundary edges keep the region on the walker's left, which makes
# exterior rings CCW and hole rings CW in map coordinates. Junction corners
# (diagonal pinches) prefer the clockwise-most turn so each 8-connected
# region yields exactly one exterior ring.

_EDGE_STEPS = {
    "S": ((0, 1), (1, 1)),  # bottom side exposed: BL -> BR
    "E": ((1, 1), (1, 0)),  # right side exposed:  BR -> TR
    "N": ((1, 0), (0, 0)),  # top side exposed:    TR -> TL
    "W": ((0, 0), (0, 1)),  # left side exposed:   TL -> BL
}


def _region_edges(region: np.ndarray) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    h, w = region.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = region
    edges = []
    exposures = {
        "N": region & ~padded[:-2, 1:-1],
        "S": region & ~padded[2:, 1:-1],
        "W": region & ~padded[1:-1, :-2],
        "E": region & ~padded[1:-1, 2:],
    }
    for side in ("N", "S", "W", "E"):
        (sdx, sdy), (edx, edy) = _EDGE_STEPS[side]
        rows, cols = np.nonzero(exposures[side])
        for r, c in zip(rows.tolist(), cols.tolist()):
            edges.append(((c + sdx, r + sdy), (c + edx, r + edy)))
    return edges


def _turn_priority(incoming: tuple[int, int], outgoing: tuple[int, int]) -> int:
    # Corner-lattice coords have y growing downward; flip y for map-space turns.
    ux, uy = incoming[0], -incoming[1]
    vx, vy = outgoing[0], -outgoing[1]
    cross = ux * vy - uy * vx
    dot = ux * vx + uy * vy
    if cross < 0:
        return 0  # right (clockwise-most) turn
    if cross == 0 and dot > 0:
        return 1  # straight
    if cross > 0:
        return 2  # left turn
    return 3  # U-turn


def _trace_rings(edges) -> list[list[tuple[int, int]]]:
    """Chain directed edges into closed rings, merging at pinch corners."""
    by_start: dict[tuple[int, int], list[int]] = {}
    for idx, (s, _e) in enumerate(edges):
        by_start.setdefault(s, []).append(idx)
    for lst in by_start.values():
        lst.sort(key=lambda i: edges[i][1])

    successor = [-1] * len(edges)
    taken = [False] * len(edges)
    order = sorted(range(len(edges)), key=lambda i: (edges[i][0], edges[i][1]))
    for i in order:
        s, e = edges[i]
        din = (e[0] - s[0], e[1] - s[1])
        candidates = [j for j in by_start.get(e, []) if not taken[j]]
        if not candidates:
            raise PolygonError("boundary trace broke: open edge chain")
        best = min(
            candidates,
            key=lambda j: (
                _turn_priority(din, (edges[j][1][0] - e[0], edges[j][1][1] - e[1])),
                edges[j][1],
            ),
        )
        successor[i] = best
        taken[best] = True

    rings = []
    visited = [False] * len(edges)
    for i in order:
        if visited[i]:
            continue
        chain = []
        j = i
        while not visited[j]:
            visited[j] = True
            chain.append(edges[j][0])
            j = successor[j]
        chain.append(edges[i][0])
        rings.append(_drop_collinear(chain))
    return rings


def _drop_collinear(ring: list[tuple[int, int]]) -> list[tuple[int, int]]:
    # Unit-step tracing yields runs of collinear vertices; keep only corners.
    pts = ring[:-1]
    n = len(pts)
    kept = []
    for k in range(n):
        prev_pt = pts[k - 1]
        cur = pts[k]
        nxt = pts[(k + 1) % n]
        d1 = (cur[0] - prev_pt[0], cur[1] - prev_pt[1])
        d2 = (nxt[0] - cur[0], nxt[1] - cur[1])
        if d1[0] * d2[1] - d1[1] * d2[0] != 0:
            kept.append(cur)
    start = min(range(len(kept)), key=lambda k: kept[k])
    kept = kept[start:] + kept[:start]
    kept.append(kept[0])
    return kept


def polygonize(labels: Raster) -> PolygonSet:
    """Trace pixel-edge boundary polygons for every nonzero label.

    Returns one polygon per 8-connected region of each label (a label split
    across disjoint regions yields several polygons carrying the same label).
    Enclosed background becomes interior rings.
    """
    cells = labels.cells
    if not np.issubdtype(cells.dtype, np.integer):
        raise GridError("polygonize expects an integer label raster")
    ox, oy, ps = labels.origin_x, labels.origin_y, labels.pixel_size

    def to_map(corner: tuple[int, int]) -> Point:
        return (ox + corner[0] * ps, oy - corner[1] * ps)

    polygons = []
    for label in np.unique(cells):
        if label == 0:
            continue
        mask = cells == label
        regions, n_regions = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
        for rid in range(1, n_regions + 1):
            region = regions == rid
            rings = _trace_rings(_region_edges(region))
            exterior = None
            holes = []
            for ring in rings:
                mapped = [to_map(p) for p in ring]
                if ring_signed_area(mapped) > 0:
                    if exterior is not None:
                        raise PolygonError("region traced more than one exterior ring")
                    exterior = mapped
                else:
                    holes.append(mapped)
            polygons.append(Polygon(exterior, holes, label=int(label)))
    polygons.sort(key=lambda p: p.label)
    return PolygonSet(polygons)


# ---------------------------------------------------------------------------
# Rasterization: polygons -> label raster
# ---------------------------------------------------------------------------


def rasterize(polys: PolygonSet, template: Raster) -> Raster:
    """Label each cell by the polygon containing its center.

    Later polygons in list order win overlaps; uncovered cells stay 0.
    Containment is even-odd over all rings, so holes are left unlabeled.
    """
    out = np.zeros((template.height, template.width), dtype=np.uint16)
    ox, oy, ps = template.origin_x, template.origin_y, template.pixel_size
    for poly in polys:
        segs = []
        for ring in poly.rings():
            pts = np.asarray(ring, dtype=np.float64)
            px = (pts[:, 0] - ox) / ps - 0.5  # fractional col of a center at this x
            py = (oy - pts[:, 1]) / ps - 0.5  # fractional row of a center at this y
            segs.append(np.stack([px[:-1], py[:-1], px[1:], py[1:]], axis=1))
        segs = np.concatenate(segs, axis=0)
        y1, y2 = segs[:, 1], segs[:, 3]
        r_lo = max(0, int(np.ceil(np.minimum(y1, y2).min())))
        r_hi = min(template.height - 1, int(np.floor(np.maximum(y1, y2).max())))
        for r in range(r_lo, r_hi + 1):
            lower = np.minimum(y1, y2)
            upper = np.maximum(y1, y2)
            hit = (lower <= r) & (r < upper)
            if not hit.any():
                continue
            s = segs[hit]
            xc = s[:, 0] + (r - s[:, 1]) * (s[:, 2] - s[:, 0]) / (s[:, 3] - s[:, 1])
            xc = np.sort(xc)
            for xa, xb in zip(xc[0::2], xc[1::2]):
                c_start = max(0, int(np.ceil(xa)))
                c_stop = min(template.width - 1, int(np.floor(xb)))
                if np.ceil(xb) == xb:
                    c_stop = min(template.width - 1, int(xb) - 1)  # half-open right edge
                if c_start <= c_stop:
                    out[r, c_start : c_stop + 1] = poly.label
    return Raster(out, ox, oy, ps)


# ---------------------------------------------------------------------------
# Douglas-Peucker simplification
# ---------------------------------------------------------------------------


def _point_segment_distance(p: Point, a: Point, b: Point) -> float:
    ax, ay = a
    bx, by = b
    px, py = p
    dx, dy = bx - ax, by - ay
    seg2 = dx * dx + dy * dy
    if seg2 == 0:
        return float(np.hypot(px - ax, py - ay))
    # Perpendicular distance to the infinite line through a-b, the classic
    # Douglas-Peucker metric.
    return float(abs(dy * px - dx * py + bx * ay - by * ax) / np.sqrt(seg2))


def douglas_peucker(points: list[Point], tolerance: float) -> list[Point]:
    """Iterative Douglas-Peucker on an open polyline; endpoints always kept."""
    if tolerance < 0:
        raise PolygonError(f"tolerance must be >= 0, got {tolerance}")
    if tolerance == 0 or len(points) <= 2:
        return list(points)
    keep = np.zeros(len(points), dtype=bool)
    keep[0] = keep[-1] = True
    stack = [(0, len(points) - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        dmax, split = 0.0, lo
        for k in range(lo + 1, hi):
            d = _point_segment_distance(points[k], points[lo], points[hi])
            if d > dmax:
                dmax, split = d, k
        if dmax > tolerance:
            keep[split] = True
            stack.append((lo, split))
            stack.append((split, hi))
    return [p for p, k in zip(points, keep) if k]


def _simplify_ring(ring: Ring, tolerance: float) -> Ring:
    if tolerance == 0:
        return list(ring)
    pts = ring[:-1]
    if len(pts) <= 3:
        return list(ring)
    # Anchor a closed ring at vertex 0 and the vertex farthest from it,
    # then simplify the two halves independently.
    d0 = [np.hypot(p[0] - pts[0][0], p[1] - pts[0][1]) for p in pts]
    far = int(np.argmax(d0))
    if far == 0:
        return list(ring)
    half1 = douglas_peucker(pts[: far + 1], tolerance)
    half2 = douglas_peucker(pts[far:] + [pts[0]], tolerance)
    new = half1[:-1] + half2[:-1]
    new.append(new[0])
    if len(new) < 4:
        return list(ring)
    orig_area = ring_signed_area(ring)
    new_area = ring_signed_area(new)
    if new_area == 0 or (new_area > 0) != (orig_area > 0):
        return list(ring)
    return new


def simplify_polygon(poly: Polygon, tolerance: float) -> Polygon:
    """Douglas-Peucker each ring; a ring that would become invalid is kept as-is."""
    if tolerance < 0:
        raise PolygonError(f"tolerance must be >= 0, got {tolerance}")
    return Polygon(
        _simplify_ring(poly.exterior, tolerance),
        [_simplify_ring(h, tolerance) for h in poly.interiors],
        label=poly.label,
        properties=dict(poly.properties),
    )
