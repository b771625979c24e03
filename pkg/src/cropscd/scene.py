"""Agricultural scene division: land-cover preselection, terrain thresholds,
vector masking, and clipping.

The division runs as a monotone chain of raster stages, each only removing
cells: agriculture preselection from two land-cover products, elevation and
slope thresholding of tree/shrub cells, removal of cells covered by
building/water polygons or buffered road lines, and finally clipping of the
working layers to the surviving scene mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import BinaryMask, GridError, Raster, require_aligned
from .vectorize import PolygonSet, rasterize

# Merged land-cover categories used by the terrain stage.
LULC_OTHER = 0
LULC_TREE = 1
LULC_CROP = 2
LULC_SHRUB = 3

AGRI_CLASSES = ("agri_tree", "agri_crop", "agri_shrub")
_CLASS_CODE = {"other": LULC_OTHER, "agri_tree": LULC_TREE, "agri_crop": LULC_CROP, "agri_shrub": LULC_SHRUB}

DEFAULT_MAX_ELEVATION_M = 93.0
DEFAULT_MAX_SLOPE_DEG = 16.0
DEFAULT_ROAD_BUFFER = 6.0


@dataclass(frozen=True)
class LulcProduct:
    """Categorical land-cover raster plus its raw-id class mapping."""

    labels: Raster
    class_map: dict[int, str]

    def __post_init__(self):
        present = np.unique(self.labels.cells)
        missing = [int(v) for v in present if int(v) not in self.class_map]
        if missing:
            raise GridError(f"land-cover ids missing from class_map: {missing}")
        bad = [v for v in self.class_map.values() if v not in _CLASS_CODE]
        if bad:
            raise GridError(f"unknown land-cover classes: {bad}")

    def merged_codes(self) -> np.ndarray:
        """Cells mapped to the merged {other, tree, crop, shrub} code space."""
        lut = np.zeros(int(self.labels.cells.max()) + 1, dtype=np.uint16)
        for raw, name in self.class_map.items():
            if 0 <= raw < lut.size:
                lut[raw] = _CLASS_CODE[name]
        return lut[self.labels.cells]


@dataclass(frozen=True)
class Polyline:
    points: list[tuple[float, float]]


@dataclass(frozen=True)
class OsmLayers:
    """Crowdsourced vector layers; road buffer width is the distance from the centerline."""

    buildings: PolygonSet = field(default_factory=PolygonSet)
    water: PolygonSet = field(default_factory=PolygonSet)
    roads: list[Polyline] = field(default_factory=list)
    road_buffer: float = DEFAULT_ROAD_BUFFER

    def __post_init__(self):
        if self.roads and self.road_buffer <= 0:
            raise GridError("road buffer width must be > 0 when roads are present")


class SceneMask(BinaryMask):
    """1 = inside the agricultural scene."""


def preselect_agriculture(a: LulcProduct, b: LulcProduct) -> BinaryMask:
    """Union of agriculture-related cover (tree, crop, shrub) from both products."""
    require_aligned(a.labels, b.labels)
    agri_a = a.merged_codes() != LULC_OTHER
    agri_b = b.merged_codes() != LULC_OTHER
    t = a.labels
    return BinaryMask(agri_a | agri_b, t.origin_x, t.origin_y, t.pixel_size)


def merge_lulc(a: LulcProduct, b: LulcProduct) -> Raster:
    """Single merged-category raster for the terrain stage.

    Where the products disagree, crop wins over tree over shrub so that crop
    cells keep their terrain exemption.
    """
    require_aligned(a.labels, b.labels)
    ca, cb = a.merged_codes(), b.merged_codes()
    precedence = {LULC_CROP: 3, LULC_TREE: 2, LULC_SHRUB: 1, LULC_OTHER: 0}
    rank = np.vectorize(precedence.__getitem__, otypes=[np.int64])
    out = np.where(rank(ca) >= rank(cb), ca, cb)
    return a.labels.like(out.astype(np.uint16))


def terrain_filter(
    pre: BinaryMask,
    lulc_union: Raster,
    dem: Raster,
    slope: Raster,
    max_elev: float = DEFAULT_MAX_ELEVATION_M,
    max_slope: float = DEFAULT_MAX_SLOPE_DEG,
) -> BinaryMask:
    """Drop tree/shrub cells above the elevation or slope maxima.

    Comparisons are strict, so cells exactly at the maxima survive; crop
    cells are never removed here.
    """
    require_aligned(pre, lulc_union, dem, slope)
    woody = (lulc_union.cells == LULC_TREE) | (lulc_union.cells == LULC_SHRUB)
    too_high = (dem.cells > max_elev) | (slope.cells > max_slope)
    keep = pre.cells.astype(bool) & ~(woody & too_high)
    return BinaryMask(keep, pre.origin_x, pre.origin_y, pre.pixel_size)


def stamp_roads(covered: np.ndarray, frame: Raster, roads: list[Polyline], buffer: float) -> None:
    h, w = covered.shape
    ps = frame.pixel_size
    cols = np.arange(w)
    rows = np.arange(h)
    cx = frame.origin_x + (cols + 0.5) * ps
    cy = frame.origin_y - (rows + 0.5) * ps
    for line in roads:
        pts = line.points
        for (x1, y1), (x2, y2) in zip(pts[:-1], pts[1:]):
            lo_x = min(x1, x2) - buffer
            hi_x = max(x1, x2) + buffer
            lo_y = min(y1, y2) - buffer
            hi_y = max(y1, y2) + buffer
            csel = np.nonzero((cx >= lo_x) & (cx <= hi_x))[0]
            rsel = np.nonzero((cy >= lo_y) & (cy <= hi_y))[0]
            if csel.size == 0 or rsel.size == 0:
                continue
            px, py = np.meshgrid(cx[csel], cy[rsel])
            dx, dy = x2 - x1, y2 - y1
            seg2 = dx * dx + dy * dy
            if seg2 == 0:
                dist2 = (px - x1) ** 2 + (py - y1) ** 2
            else:
                t = np.clip(((px - x1) * dx + (py - y1) * dy) / seg2, 0.0, 1.0)
                dist2 = (px - (x1 + t * dx)) ** 2 + (py - (y1 + t * dy)) ** 2
            hit = dist2 <= buffer * buffer
            covered[np.ix_(rsel, csel)] |= hit


def remove_osm(mask: BinaryMask, osm: OsmLayers) -> SceneMask:
    """Zero out cells whose centers fall in buildings, water, or buffered roads."""
    covered = np.zeros(mask.cells.shape, dtype=bool)
    for layer in (osm.buildings, osm.water):
        if len(layer):
            covered |= rasterize(_with_unit_labels(layer), mask).cells != 0
    if osm.roads:
        stamp_roads(covered, mask, osm.roads, osm.road_buffer)
    keep = mask.cells.astype(bool) & ~covered
    return SceneMask(keep, mask.origin_x, mask.origin_y, mask.pixel_size)


def _with_unit_labels(polys: PolygonSet) -> PolygonSet:
    from .vectorize import Polygon

    return PolygonSet(
        [Polygon(p.exterior, p.interiors, label=1, properties=p.properties) for p in polys]
    )


def clip(image: Raster, scene: SceneMask, fill) -> Raster:
    """Replace cells outside the scene with fill (0 for imagery, background id for labels)."""
    require_aligned(image, scene)
    inside = scene.cells.astype(bool)
    out = np.where(inside, image.cells, np.asarray(fill, dtype=image.cells.dtype))
    return image.like(out.astype(image.cells.dtype), nodata=image.nodata)


def divide_scene(
    lulc_a: LulcProduct,
    lulc_b: LulcProduct,
    dem: Raster,
    slope: Raster,
    osm: OsmLayers,
    max_elev: float = DEFAULT_MAX_ELEVATION_M,
    max_slope: float = DEFAULT_MAX_SLOPE_DEG,
) -> SceneMask:
    """Full division chain: preselect, terrain-filter, OSM removal."""
    pre = preselect_agriculture(lulc_a, lulc_b)
    merged = merge_lulc(lulc_a, lulc_b)
    filtered = terrain_filter(pre, merged, dem, slope, max_elev, max_slope)
    return remove_osm(filtered, osm)
