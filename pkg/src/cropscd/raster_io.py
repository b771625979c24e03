"""File formats: PGR rasters, PNG imagery, GeoJSON vectors.

PGR is a two-file portable raster: ``<name>.pgr`` holds the little-endian
row-major cell payload and ``<name>.pgr.json`` the header
{width, height, origin_x, origin_y, pixel_size, dtype, nodata}.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .grid import DTYPES, Raster
from .vectorize import Polygon, PolygonError, PolygonSet, ring_signed_area


class DataError(ValueError):
    """Malformed or inconsistent input file."""


def header_path(payload_path: Path) -> Path:
    return payload_path.with_name(payload_path.name + ".json")


def write_pgr(raster: Raster, path: str | Path) -> Path:
    path = Path(path)
    if path.suffix != ".pgr":
        path = path.with_suffix(".pgr")
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "width": raster.width,
        "height": raster.height,
        "origin_x": raster.origin_x,
        "origin_y": raster.origin_y,
        "pixel_size": raster.pixel_size,
        "dtype": raster.dtype_name,
        "nodata": raster.nodata,
    }
    header_path(path).write_text(json.dumps(header, sort_keys=True) + "\n")
    payload = raster.cells.astype("<f4" if raster.dtype_name == "f32" else "<u2")
    path.write_bytes(payload.tobytes(order="C"))
    return path


def read_pgr(path: str | Path) -> Raster:
    path = Path(path)
    hp = header_path(path)
    if not path.exists() or not hp.exists():
        raise DataError(f"missing PGR payload or header for {path}")
    header = json.loads(hp.read_text())
    try:
        dtype = {"f32": "<f4", "u16": "<u2"}[header["dtype"]]
        width, height = int(header["width"]), int(header["height"])
    except KeyError as exc:
        raise DataError(f"bad PGR header {hp}: missing {exc}") from exc
    raw = np.frombuffer(path.read_bytes(), dtype=dtype)
    if raw.size != width * height:
        raise DataError(f"{path}: payload has {raw.size} cells, header says {width * height}")
    cells = raw.reshape(height, width).astype(DTYPES[header["dtype"]])
    return Raster(
        cells,
        float(header["origin_x"]),
        float(header["origin_y"]),
        float(header["pixel_size"]),
        header.get("nodata"),
    )


def write_png(rgb: np.ndarray, path: str | Path) -> Path:
    """Write an (H, W, 3) uint8 array as an 8-bit RGB PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise DataError(f"expected (H, W, 3) uint8 image, got {rgb.shape} {rgb.dtype}")
    Image.fromarray(rgb, mode="RGB").save(path)
    return path


def read_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


# ---------------------------------------------------------------------------
# GeoJSON vectors
# ---------------------------------------------------------------------------


def _ring_to_coords(ring) -> list[list[float]]:
    return [[float(x), float(y)] for x, y in ring]


def _coords_to_ring(coords) -> list[tuple[float, float]]:
    ring = [(float(x), float(y)) for x, y in coords]
    if len(ring) < 4:
        raise DataError(f"GeoJSON ring has {len(ring)} vertices, need >= 4")
    if ring[0] != ring[-1]:
        raise DataError("GeoJSON ring is not closed")
    return ring


def _polygon_coords(poly: Polygon) -> list[list[list[float]]]:
    return [_ring_to_coords(poly.exterior)] + [_ring_to_coords(h) for h in poly.interiors]


def write_geojson(polys: PolygonSet, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    features = []
    for poly in polys:
        props = {"label": poly.label}
        props.update(poly.properties)
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": _polygon_coords(poly)},
                "properties": props,
            }
        )
    doc = {"type": "FeatureCollection", "features": features}
    path.write_text(json.dumps(doc, sort_keys=True) + "\n")
    return path


def _polygon_from_coords(coords, props: dict) -> Polygon:
    rings = [_coords_to_ring(c) for c in coords]
    exterior, holes = rings[0], rings[1:]
    if ring_signed_area(exterior) <= 0:
        raise DataError("exterior ring must be counter-clockwise with positive area")
    for h in holes:
        if ring_signed_area(h) >= 0:
            raise DataError("interior rings must be clockwise")
    label = int(props.get("label", 0))
    extra = {k: v for k, v in props.items() if k != "label"}
    return Polygon(exterior, holes, label=label, properties=extra)


def read_geojson(path: str | Path) -> PolygonSet:
    """Read a FeatureCollection of Polygons/MultiPolygons.

    Invalid geometry (open rings, wrong winding) is rejected, not repaired.
    """
    doc = json.loads(Path(path).read_text())
    if doc.get("type") != "FeatureCollection":
        raise DataError(f"{path}: expected a FeatureCollection")
    polygons = []
    for feat in doc.get("features", []):
        geom = feat.get("geometry") or {}
        props = feat.get("properties") or {}
        gtype = geom.get("type")
        try:
            if gtype == "Polygon":
                polygons.append(_polygon_from_coords(geom["coordinates"], props))
            elif gtype == "MultiPolygon":
                for part in geom["coordinates"]:
                    polygons.append(_polygon_from_coords(part, props))
            else:
                raise DataError(f"unsupported geometry type {gtype!r}")
        except PolygonError as exc:
            raise DataError(f"{path}: invalid polygon: {exc}") from exc
    return PolygonSet(polygons)
