"""Geo-referenced raster grids and the raster-domain primitives built on them.

A raster is a row-major grid anchored at the map coordinate of its top-left
corner. Cell (row, col) covers x in [ox + col*ps, ox + (col+1)*ps] and
y in [oy - (row+1)*ps, oy - row*ps]; row 0 is the northmost row. Continuous
layers use float32 cells ("f32"), categorical layers uint16 ("u16").

All raster objects are value-semantic: the cell array is copied on
construction and frozen, so instances can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

DTYPES = {"f32": np.float32, "u16": np.uint16}

_STRUCT_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_STRUCT_8 = np.ones((3, 3), dtype=bool)


class GridError(ValueError):
    """Invalid raster construction or mismatched grids."""


@dataclass(frozen=True, eq=False)
class Raster:
    """Immutable geo-referenced grid of float32 or uint16 cells."""

    cells: np.ndarray
    origin_x: float = 0.0
    origin_y: float = 0.0
    pixel_size: float = 1.0
    nodata: Optional[float] = None

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2:
            raise GridError(f"cells must be 2-D, got shape {cells.shape}")
        if cells.dtype not in (np.float32, np.uint16):
            if np.issubdtype(cells.dtype, np.floating):
                cells = cells.astype(np.float32)
            elif np.issubdtype(cells.dtype, np.integer) or cells.dtype == bool:
                cells = cells.astype(np.uint16)
            else:
                raise GridError(f"unsupported cell dtype {cells.dtype}")
        else:
            cells = cells.copy()
        if self.pixel_size <= 0:
            raise GridError(f"pixel_size must be > 0, got {self.pixel_size}")
        if cells.size == 0:
            raise GridError("raster must contain at least one cell")
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def dtype_name(self) -> str:
        return "f32" if self.cells.dtype == np.float32 else "u16"

    def like(self, cells: np.ndarray, nodata: Optional[float] = None) -> "Raster":
        """New raster on this grid's frame with the given cells."""
        if cells.shape != self.cells.shape:
            raise GridError(f"cells shape {cells.shape} != grid {self.cells.shape}")
        return Raster(cells, self.origin_x, self.origin_y, self.pixel_size, nodata)

    def aligned_with(self, other: "Raster") -> bool:
        return (
            self.width == other.width
            and self.height == other.height
            and self.origin_x == other.origin_x
            and self.origin_y == other.origin_y
            and self.pixel_size == other.pixel_size
        )

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (
            self.origin_x + (col + 0.5) * self.pixel_size,
            self.origin_y - (row + 0.5) * self.pixel_size,
        )

    def same_content(self, other: "Raster") -> bool:
        return self.aligned_with(other) and bool(np.array_equal(self.cells, other.cells))


def require_aligned(*rasters: Raster) -> None:
    """Fail loudly when any pair of rasters disagrees on the grid frame."""
    first = rasters[0]
    for r in rasters[1:]:
        if not first.aligned_with(r):
            raise GridError(
                "rasters are not aligned: "
                f"({first.width}x{first.height} @ {first.origin_x},{first.origin_y} ps={first.pixel_size}) vs "
                f"({r.width}x{r.height} @ {r.origin_x},{r.origin_y} ps={r.pixel_size})"
            )


class BinaryMask(Raster):
    """Raster restricted to {0, 1} uint16 cells."""

    def __post_init__(self):
        super().__post_init__()
        vals = np.unique(self.cells)
        if not np.isin(vals, (0, 1)).all():
            raise GridError(f"mask cells must be 0/1, found values {vals[:8]}")
        if self.cells.dtype != np.uint16:
            cells = self.cells.astype(np.uint16)
            cells.flags.writeable = False
            object.__setattr__(self, "cells", cells)

    @staticmethod
    def from_raster(r: Raster) -> "BinaryMask":
        return BinaryMask(r.cells != 0, r.origin_x, r.origin_y, r.pixel_size)

    def astype_bool(self) -> np.ndarray:
        return self.cells.astype(bool)


def resample_nearest(src: Raster, template: Raster) -> Raster:
    """Resample src onto template's frame by nearest-neighbor lookup.

    Cells of the template whose centers fall outside src take src's nodata
    (or 0 when src has none).
    """
    rows = np.arange(template.height)
    cols = np.arange(template.width)
    cy = template.origin_y - (rows + 0.5) * template.pixel_size
    cx = template.origin_x + (cols + 0.5) * template.pixel_size
    src_r = np.floor((src.origin_y - cy) / src.pixel_size).astype(np.int64)
    src_c = np.floor((cx - src.origin_x) / src.pixel_size).astype(np.int64)
    rr, cc = np.meshgrid(src_r, src_c, indexing="ij")
    inside = (rr >= 0) & (rr < src.height) & (cc >= 0) & (cc < src.width)
    fill = src.nodata if src.nodata is not None else 0
    out = np.full((template.height, template.width), fill, dtype=src.cells.dtype)
    out[inside] = src.cells[rr[inside], cc[inside]]
    return Raster(out, template.origin_x, template.origin_y, template.pixel_size, src.nodata)


def slope_from_dem(dem: Raster) -> Raster:
    """Per-cell slope in degrees from a DEM of elevations in meters.

    Gradients use the 3x3 Horn kernel divided by pixel size; border cells
    replicate the edge value. Output is in [0, 90).
    """
    if dem.width < 3 or dem.height < 3:
        raise GridError(f"slope needs at least 3x3 cells, got {dem.width}x{dem.height}")
    z = np.pad(dem.cells.astype(np.float64), 1, mode="edge")
    a = z[:-2, :-2]
    b = z[:-2, 1:-1]
    c = z[:-2, 2:]
    d = z[1:-1, :-2]
    f = z[1:-1, 2:]
    g = z[2:, :-2]
    h = z[2:, 1:-1]
    i = z[2:, 2:]
    denom = 8.0 * dem.pixel_size
    gx = ((c + 2.0 * f + i) - (a + 2.0 * d + g)) / denom
    gy = ((g + 2.0 * h + i) - (a + 2.0 * b + c)) / denom
    deg = np.degrees(np.arctan(np.hypot(gx, gy)))
    return dem.like(deg.astype(np.float32))


def dilate(mask: BinaryMask, radius: int) -> BinaryMask:
    """Set a cell to 1 iff any input 1-cell lies within Chebyshev distance radius."""
    if radius < 0:
        raise GridError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return mask
    out = ndimage.maximum_filter(mask.cells, size=2 * radius + 1, mode="constant", cval=0)
    return BinaryMask(out, mask.origin_x, mask.origin_y, mask.pixel_size)


def connected_components(mask: BinaryMask, connectivity: int = 4) -> Raster:
    """Label maximal connected components of the 1-cells.

    Components are numbered 1..k in raster-scan order of each component's
    first cell; background stays 0.
    """
    if connectivity not in (4, 8):
        raise GridError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = _STRUCT_4 if connectivity == 4 else _STRUCT_8
    raw, n = ndimage.label(mask.cells, structure=structure)
    if n > np.iinfo(np.uint16).max:
        raise GridError(f"too many components for u16 labels: {n}")
    if n == 0:
        return mask.like(np.zeros_like(mask.cells))
    flat = raw.ravel()
    nz = flat != 0
    ids, first = np.unique(flat[nz], return_index=True)
    lut = np.zeros(n + 1, dtype=np.uint16)
    lut[ids[np.argsort(first, kind="stable")]] = np.arange(1, n + 1, dtype=np.uint16)
    return mask.like(lut[raw])


def component_sizes(labels: Raster) -> np.ndarray:
    """Cell count per label id; index 0 is the background count."""
    return np.bincount(labels.cells.ravel().astype(np.int64))
