"""Seeded synthetic bi-temporal scene generator.

Builds an internally consistent miniature survey area: terrain with a hill
that trips the elevation threshold, two disagreeing coarse land-cover
products, vector obstructions (buildings, a pond, a road), a jittered grid
of farm parcels inside the surviving agricultural scene, per-epoch crop
labels drawn from the seven from-to transition categories, rendered RGB
imagery for both epochs, and the ground-truth rasters for every pipeline
stage. All randomness flows from one seed through named sub-streams, so any
stage can be regenerated independently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import CHANGE_CATEGORIES, assemble, category_report
from .grid import BinaryMask, Raster, resample_nearest, slope_from_dem
from .nn.rng import stream_seed
from .raster_io import write_geojson, write_pgr, write_png
from .scene import LulcProduct, OsmLayers, Polyline, divide_scene, stamp_roads
from .vectorize import Polygon, PolygonSet, polygonize, rasterize
from .grid import connected_components

# transition category -> (t1 class, t2 class, changed)
CATEGORY_RECIPES = {
    0: (0, 0, False),  # fallow ground, no change
    1: (1, 1, False),
    2: (2, 2, False),
    3: (3, 3, True),
    4: (3, 4, True),
    5: (4, 3, True),
    6: (4, 4, True),
}

# Per-epoch class colors (RGB). The distinct palette keeps classes far
# apart; the confusable palette gives different crops similar hues, the
# spectral-confusion regime that motivates change-feature learning.
PALETTES = {
    "distinct": {
        "t1": {0: (150, 120, 90), 1: (60, 200, 70), 2: (20, 110, 40), 3: (170, 190, 60), 4: (235, 205, 40)},
        "t2": {0: (150, 120, 90), 1: (70, 210, 90), 2: (25, 115, 50), 3: (220, 170, 60), 4: (40, 150, 130)},
    },
    "confusable": {
        "t1": {0: (150, 120, 90), 1: (90, 170, 80), 2: (80, 160, 85), 3: (160, 180, 80), 4: (200, 190, 70)},
        "t2": {0: (150, 120, 90), 1: (95, 175, 85), 2: (85, 165, 80), 3: (190, 180, 75), 4: (100, 170, 90)},
    },
}

PATH_COLOR = (80, 70, 60)
ROAD_COLOR = (105, 100, 95)
WATER_COLOR = (50, 90, 170)
BUILDING_COLOR = (185, 75, 65)

# Raw land-cover ids mimic two different product code systems.
LULC_A_CLASS_MAP = {0: "other", 2: "agri_tree", 5: "agri_crop", 6: "agri_shrub", 8: "other"}
LULC_B_CLASS_MAP = {0: "other", 10: "agri_tree", 40: "agri_crop", 20: "agri_shrub", 50: "other", 80: "other"}


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    size: int = 1024
    tile: int = 64
    parcel_pitch: int = 96
    jitter: int = 8
    palette: str = "distinct"
    category_weights: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    min_parcel_px: int = 400
    road_buffer: float = 6.0
    pixel_size: float = 1.0
    min_tile_coverage: float = 0.5
    # Difficulty controls: crop-colored vegetation outside the scene (the
    # complex background that interferes without scene division) and small
    # off-color blotches inside parcels (salt-and-pepper material that the
    # parcel constraint cleans up).
    background_confusion: float = 0.5
    speckle_fraction: float = 0.06

    def __post_init__(self):
        if self.size % self.tile:
            raise ValueError(f"size {self.size} not divisible by tile {self.tile}")
        if self.tile % 16:
            raise ValueError("tile must be divisible by 16 for the edge network")
        if self.palette not in PALETTES:
            raise ValueError(f"palette must be one of {sorted(PALETTES)}")
        if len(self.category_weights) != len(CHANGE_CATEGORIES):
            raise ValueError("need one weight per change category")


@dataclass
class SyntheticScene:
    config: SynthConfig
    frame: Raster
    dem: Raster
    slope: Raster
    lulc_a: LulcProduct
    lulc_b: LulcProduct
    osm: OsmLayers
    scene_mask: BinaryMask
    parcel_labels: Raster
    parcels: PolygonSet
    parcel_categories: dict[int, int]
    edge_truth: BinaryMask
    seg_t1: Raster
    seg_t2: Raster
    change: BinaryMask
    scmap: Raster
    imagery_t1: np.ndarray
    imagery_t2: np.ndarray
    tiles: dict[str, list[tuple[int, int]]]
    manifest: dict = field(default_factory=dict)


def _rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, name))


def _smooth_noise(rng: np.random.Generator, size: int, coarse: int, lo: float, hi: float) -> np.ndarray:
    """Bilinear interpolation of a coarse random grid up to size x size."""
    nodes = rng.uniform(lo, hi, size=(coarse + 1, coarse + 1))
    pos = np.linspace(0, coarse, size)
    i0 = np.clip(np.floor(pos).astype(int), 0, coarse - 1)
    frac = pos - i0
    top = nodes[i0][:, i0] * (1 - frac)[None, :] + nodes[i0][:, i0 + 1] * frac[None, :]
    bottom = nodes[i0 + 1][:, i0] * (1 - frac)[None, :] + nodes[i0 + 1][:, i0 + 1] * frac[None, :]
    return top * (1 - frac)[:, None] + bottom * frac[:, None]


def _farmland_region(rng: np.random.Generator, size: int) -> np.ndarray:
    """Union of a few big jittered rectangles around the raster center."""
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(3):
        h = int(rng.uniform(0.55, 0.7) * size)
        w = int(rng.uniform(0.6, 0.8) * size)
        r0 = int(rng.uniform(0.03, 0.3) * size)
        c0 = int(rng.uniform(0.02, 0.25) * size)
        mask[r0 : min(r0 + h, size), c0 : min(c0 + w, size)] = True
    return mask


def _jittered_cuts(rng: np.random.Generator, size: int, pitch: int, jitter: int) -> list[int]:
    cuts = [0]
    pos = pitch
    while pos < size - pitch // 2:
        cuts.append(int(np.clip(pos + rng.integers(-jitter, jitter + 1), cuts[-1] + 8, size - 8)))
        pos += pitch
    cuts.append(size)
    return cuts


def _grid_ids(rng: np.random.Generator, size: int, pitch: int, jitter: int) -> np.ndarray:
    rows = _jittered_cuts(rng, size, pitch, jitter)
    cols = _jittered_cuts(rng, size, pitch, jitter)
    out = np.zeros((size, size), dtype=np.int64)
    gid = 1
    for r0, r1 in zip(rows[:-1], rows[1:]):
        for c0, c1 in zip(cols[:-1], cols[1:]):
            out[r0:r1, c0:c1] = gid
            gid += 1
    return out


def _boundary_cells(extended: np.ndarray) -> np.ndarray:
    """Cells whose 4-neighborhood crosses a label change (2 px wide inside)."""
    pad = np.pad(extended, 1, mode="edge")
    diff = (
        (pad[:-2, 1:-1] != extended)
        | (pad[2:, 1:-1] != extended)
        | (pad[1:-1, :-2] != extended)
        | (pad[1:-1, 2:] != extended)
    )
    return diff


def build_scene(config: SynthConfig) -> SyntheticScene:
    size = config.size
    frame = Raster(np.zeros((size, size), dtype=np.uint16), 0.0, 0.0, config.pixel_size)

    # --- terrain --------------------------------------------------------
    terrain_rng = _rng(config.seed, "terrain")
    dem_cells = _smooth_noise(terrain_rng, size, 16, 25.0, 55.0)
    yy, xx = np.mgrid[0:size, 0:size]
    hill_r, hill_c = int(0.16 * size), int(0.84 * size)
    sigma = size / 9.0
    dem_cells = dem_cells + 75.0 * np.exp(-(((yy - hill_r) ** 2 + (xx - hill_c) ** 2) / (2 * sigma**2)))
    dem = frame.like(dem_cells.astype(np.float32))
    slope = slope_from_dem(dem)

    # --- land cover products at 8x coarser resolution --------------------
    layout_rng = _rng(config.seed, "layout")
    farmland = _farmland_region(layout_rng, size)
    coarse = size // 8
    idx = (np.arange(coarse) * 8 + 4).astype(int)
    farm_coarse = farmland[np.ix_(idx, idx)]
    hill_coarse = dem.cells[np.ix_(idx, idx)] > 80.0

    lulc_rng = _rng(config.seed, "lulc")
    base = lulc_rng.choice([0, 2, 6, 8], p=[0.62, 0.22, 0.10, 0.06], size=(coarse, coarse))
    a_cells = np.where(farm_coarse, 5, base)
    a_cells = np.where(hill_coarse & ~farm_coarse, 2, a_cells)
    flip = lulc_rng.random((coarse, coarse)) < 0.08
    b_base = lulc_rng.choice([0, 10, 20, 50, 80], p=[0.56, 0.22, 0.10, 0.06, 0.06], size=(coarse, coarse))
    translate_ab = {0: 0, 2: 10, 5: 40, 6: 20, 8: 50}
    b_cells = np.vectorize(translate_ab.__getitem__)(a_cells)
    b_cells = np.where(flip, b_base, b_cells)

    coarse_frame = Raster(
        np.zeros((coarse, coarse), dtype=np.uint16), 0.0, 0.0, config.pixel_size * 8
    )
    lulc_a = LulcProduct(coarse_frame.like(a_cells.astype(np.uint16)), LULC_A_CLASS_MAP)
    lulc_b = LulcProduct(coarse_frame.like(b_cells.astype(np.uint16)), LULC_B_CLASS_MAP)

    # --- vector obstructions ---------------------------------------------
    osm_rng = _rng(config.seed, "osm")

    def rect(r0, c0, h, w, label):
        x0, x1 = float(c0), float(c0 + w)
        y0, y1 = -float(r0), -float(r0 + h)
        return Polygon([(x0, y1), (x1, y1), (x1, y0), (x0, y0), (x0, y1)], label=label)

    buildings = []
    for _ in range(6):
        r0 = int(osm_rng.uniform(0.02, 0.9) * size)
        c0 = int(osm_rng.uniform(0.02, 0.9) * size)
        buildings.append(rect(r0, c0, int(osm_rng.integers(10, 26)), int(osm_rng.integers(10, 26)), 1))
    pond_r = int(osm_rng.uniform(0.6, 0.8) * size)
    pond_c = int(osm_rng.uniform(0.05, 0.2) * size)
    water = [rect(pond_r, pond_c, int(0.08 * size), int(0.1 * size), 1)]
    road_y = osm_rng.uniform(0.35, 0.65) * size
    road = Polyline(
        [
            (0.0, -float(road_y + osm_rng.uniform(-0.05, 0.05) * size)),
            (size * 0.5, -float(road_y + osm_rng.uniform(-0.08, 0.08) * size)),
            (float(size), -float(road_y + osm_rng.uniform(-0.05, 0.05) * size)),
        ]
    )
    osm = OsmLayers(
        buildings=PolygonSet(buildings),
        water=PolygonSet(water),
        roads=[road],
        road_buffer=config.road_buffer,
    )

    # --- agricultural scene ----------------------------------------------
    lulc_a_fine = LulcProduct(resample_nearest(lulc_a.labels, frame), LULC_A_CLASS_MAP)
    lulc_b_fine = LulcProduct(resample_nearest(lulc_b.labels, frame), LULC_B_CLASS_MAP)
    scene_mask = divide_scene(lulc_a_fine, lulc_b_fine, dem, slope, osm)

    # --- parcels -----------------------------------------------------------
    grid = _grid_ids(layout_rng, size, config.parcel_pitch, config.jitter)
    in_scene = scene_mask.cells.astype(bool)
    extended = np.where(in_scene, grid, 0)
    boundary = _boundary_cells(extended) & in_scene
    parcel_area = in_scene & ~boundary & (extended > 0)

    comps = connected_components(BinaryMask(parcel_area, 0.0, 0.0, config.pixel_size), 4)
    sizes = np.bincount(comps.cells.ravel().astype(np.int64))
    keep = [i for i in range(1, sizes.size) if sizes[i] >= config.min_parcel_px]
    lut = np.zeros(sizes.size, dtype=np.uint16)
    lut[keep] = np.arange(1, len(keep) + 1, dtype=np.uint16)
    parcel_label_cells = lut[comps.cells.astype(np.int64)]
    parcel_labels = frame.like(parcel_label_cells)
    parcels = polygonize(parcel_labels)

    # --- transitions --------------------------------------------------------
    n_parcels = len(keep)
    weights = np.asarray(config.category_weights, dtype=np.float64)
    weights = weights / weights.sum()
    # largest-remainder allocation keeps every nonzero-weight category represented
    quota = weights * n_parcels
    alloc = np.floor(quota).astype(int)
    remainder = quota - alloc
    for cat in np.argsort(-remainder)[: n_parcels - alloc.sum()]:
        alloc[cat] += 1
    assignment: list[int] = []
    for cat, count in enumerate(alloc):
        assignment.extend([cat] * count)
    trans_rng = _rng(config.seed, "transitions")
    trans_rng.shuffle(assignment)
    parcel_categories = {pid: int(assignment[pid - 1]) for pid in range(1, n_parcels + 1)}

    cat_lut = np.zeros(n_parcels + 1, dtype=np.uint16)
    t1_lut = np.zeros(n_parcels + 1, dtype=np.uint16)
    t2_lut = np.zeros(n_parcels + 1, dtype=np.uint16)
    chg_lut = np.zeros(n_parcels + 1, dtype=np.uint16)
    for pid, cat in parcel_categories.items():
        c1, c2, changed = CATEGORY_RECIPES[cat]
        cat_lut[pid] = cat
        t1_lut[pid] = c1
        t2_lut[pid] = c2
        chg_lut[pid] = 1 if changed else 0

    ids = parcel_label_cells.astype(np.int64)
    seg_t1 = frame.like(t1_lut[ids])
    seg_t2 = frame.like(t2_lut[ids])
    change = BinaryMask(chg_lut[ids], 0.0, 0.0, config.pixel_size)

    result = assemble(seg_t1, seg_t2, change)
    if result.invalid_total:
        raise AssertionError("generator produced invalid transitions")
    scmap = result.scmap
    if not np.array_equal(np.where(ids > 0, cat_lut[ids], 0), scmap.cells):
        raise AssertionError("assembled change map disagrees with parcel categories")

    edge_truth = BinaryMask(boundary, 0.0, 0.0, config.pixel_size)

    # --- imagery -------------------------------------------------------------
    tex_rng = _rng(config.seed, "texture")
    palette = PALETTES[config.palette]
    imagery_t1 = _render(tex_rng, dem, scene_mask, ids, seg_t1.cells, boundary, osm, palette["t1"], size, config)
    imagery_t2 = _render(tex_rng, dem, scene_mask, ids, seg_t2.cells, boundary, osm, palette["t2"], size, config)

    # --- tiles ----------------------------------------------------------------
    tiles_all = []
    t = config.tile
    for r in range(0, size, t):
        for c in range(0, size, t):
            coverage = in_scene[r : r + t, c : c + t].mean()
            if coverage >= config.min_tile_coverage:
                tiles_all.append((r, c))
    split_rng = _rng(config.seed, "split")
    order = list(split_rng.permutation(len(tiles_all)))
    n_train = round(0.6 * len(tiles_all))
    n_val = round(0.1 * len(tiles_all))
    tiles = {
        "train": sorted(tiles_all[i] for i in order[:n_train]),
        "val": sorted(tiles_all[i] for i in order[n_train : n_train + n_val]),
        "test": sorted(tiles_all[i] for i in order[n_train + n_val :]),
    }

    report = category_report(scmap)
    parcel_counts = {name: 0 for name in CHANGE_CATEGORIES}
    for cat in parcel_categories.values():
        parcel_counts[CHANGE_CATEGORIES[cat]] += 1
    manifest = {
        "seed": config.seed,
        "size": size,
        "tile": t,
        "palette": config.palette,
        "pixel_size": config.pixel_size,
        "n_parcels": n_parcels,
        "categories": {
            name: {
                "area_pct": report["categories"][name]["area_pct"],
                "parcels": parcel_counts[name],
            }
            for name in CHANGE_CATEGORIES
        },
        "tiles": {split: [[int(r), int(c)] for r, c in lst] for split, lst in tiles.items()},
        "lulc_a_class_map": {str(k): v for k, v in LULC_A_CLASS_MAP.items()},
        "lulc_b_class_map": {str(k): v for k, v in LULC_B_CLASS_MAP.items()},
        "road_buffer": config.road_buffer,
    }

    return SyntheticScene(
        config=config,
        frame=frame,
        dem=dem,
        slope=slope,
        lulc_a=lulc_a,
        lulc_b=lulc_b,
        osm=osm,
        scene_mask=scene_mask,
        parcel_labels=parcel_labels,
        parcels=parcels,
        parcel_categories=parcel_categories,
        edge_truth=edge_truth,
        seg_t1=seg_t1,
        seg_t2=seg_t2,
        change=change,
        scmap=scmap,
        imagery_t1=imagery_t1,
        imagery_t2=imagery_t2,
        tiles=tiles,
        manifest=manifest,
    )


def _paint_blob(img, valid, r, c, radius, color) -> int:
    """Paint a disc clipped to `valid`; returns the painted cell count."""
    size = valid.shape[0]
    r0, r1 = max(0, r - radius), min(size, r + radius + 1)
    c0, c1 = max(0, c - radius), min(size, c + radius + 1)
    yy, xx = np.ogrid[r0:r1, c0:c1]
    disc = ((yy - r) ** 2 + (xx - c) ** 2 <= radius * radius) & valid[r0:r1, c0:c1]
    img[r0:r1, c0:c1][disc] = color
    return int(disc.sum())


def _render(tex_rng, dem, scene_mask, parcel_ids, seg_cells, boundary, osm, colors, size, config):
    shade = (dem.cells - dem.cells.min()) / max(float(np.ptp(dem.cells)), 1e-6)
    img = np.zeros((size, size, 3), dtype=np.float64)
    img[..., 0] = 95 + 60 * shade
    img[..., 1] = 105 + 55 * shade
    img[..., 2] = 80 + 45 * shade

    in_scene = scene_mask.cells.astype(bool)
    n_parcels = int(parcel_ids.max())
    jitter = tex_rng.uniform(-14, 14, size=n_parcels + 1)
    jitter[0] = 0.0
    class_rgb = np.zeros((max(colors) + 1, 3))
    for cls, rgb in colors.items():
        class_rgb[cls] = rgb

    # Crop-colored vegetation patches over the non-scene background: they
    # mimic crop spectra per epoch, so a model that never divides the scene
    # keeps misreading them as (changing) crops.
    outside = ~in_scene
    target = config.background_confusion * outside.sum()
    if target > 0:
        covered = 0
        guard = 0
        while covered < target and guard < 6000:
            guard += 1
            r = int(tex_rng.integers(0, size))
            c = int(tex_rng.integers(0, size))
            if not outside[r, c]:
                continue
            radius = int(tex_rng.integers(6, 22))
            cls = int(tex_rng.integers(1, 5))
            color = class_rgb[cls] + tex_rng.uniform(-10, 10)
            covered += _paint_blob(img, outside, r, c, radius, color)

    field = class_rgb[seg_cells.astype(np.int64)] + jitter[parcel_ids][..., None]
    on_parcel = parcel_ids > 0
    img[on_parcel] = field[on_parcel]

    # Salt-and-pepper material: small off-class blotches inside parcels.
    if config.speckle_fraction > 0 and n_parcels:
        total_parcel = int(on_parcel.sum())
        target = config.speckle_fraction * total_parcel
        covered = 0
        guard = 0
        rows, cols = np.nonzero(on_parcel)
        while covered < target and guard < 12000:
            guard += 1
            k = int(tex_rng.integers(0, rows.size))
            r, c = int(rows[k]), int(cols[k])
            true_cls = int(seg_cells[r, c])
            other = int(tex_rng.integers(1, 5))
            if other == true_cls:
                other = 1 + (other % 4)
            radius = int(tex_rng.integers(1, 4))
            color = class_rgb[other] + tex_rng.uniform(-8, 8)
            covered += _paint_blob(img, on_parcel, r, c, radius, color)

    paths = in_scene & ~on_parcel
    img[paths] = PATH_COLOR
    img[boundary] = PATH_COLOR

    # obstructions sit outside the scene; draw them for visual realism
    template = Raster(np.zeros((size, size), dtype=np.uint16), 0.0, 0.0, scene_mask.pixel_size)
    if len(osm.water):
        img[rasterize(osm.water, template).cells > 0] = WATER_COLOR
    if len(osm.buildings):
        img[rasterize(osm.buildings, template).cells > 0] = BUILDING_COLOR
    road_mask = np.zeros((size, size), dtype=bool)
    stamp_roads(road_mask, template, osm.roads, osm.road_buffer)
    img[road_mask] = ROAD_COLOR

    img += tex_rng.normal(0, 4.0, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def tile_arrays(scene: SyntheticScene, split: str):
    """Per-tile training arrays: (images_t1, images_t2, seg_t1, seg_t2, change, edges)."""
    t = scene.config.tile
    out = []
    for r, c in scene.tiles[split]:
        sl = (slice(r, r + t), slice(c, c + t))
        out.append(
            {
                "origin": (r, c),
                "img_t1": scene.imagery_t1[sl].transpose(2, 0, 1).astype(np.float32) / 255.0,
                "img_t2": scene.imagery_t2[sl].transpose(2, 0, 1).astype(np.float32) / 255.0,
                "seg_t1": scene.seg_t1.cells[sl].astype(np.int64),
                "seg_t2": scene.seg_t2.cells[sl].astype(np.int64),
                "change": scene.change.cells[sl].astype(np.float32),
                "edges": scene.edge_truth.cells[sl].astype(np.float32),
            }
        )
    return out


def write_scene(scene: SyntheticScene, out_dir: str | Path) -> Path:
    """Persist every artifact plus the manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_png(scene.imagery_t1, out / "imagery_t1.png")
    write_png(scene.imagery_t2, out / "imagery_t2.png")
    write_pgr(scene.dem, out / "dem.pgr")
    write_pgr(scene.slope, out / "slope.pgr")
    write_pgr(scene.lulc_a.labels, out / "lulc_a.pgr")
    write_pgr(scene.lulc_b.labels, out / "lulc_b.pgr")
    write_pgr(scene.scene_mask, out / "scene_mask.pgr")
    write_pgr(scene.parcel_labels, out / "parcel_labels.pgr")
    write_pgr(scene.seg_t1, out / "truth_seg_t1.pgr")
    write_pgr(scene.seg_t2, out / "truth_seg_t2.pgr")
    write_pgr(scene.change, out / "truth_change.pgr")
    write_pgr(scene.scmap, out / "truth_scmap.pgr")
    write_pgr(scene.edge_truth, out / "truth_edges.pgr")
    write_geojson(scene.parcels, out / "truth_parcels.geojson")
    write_geojson(scene.osm.buildings, out / "osm_buildings.geojson")
    write_geojson(scene.osm.water, out / "osm_water.geojson")
    roads = {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[x, y] for x, y in line.points],
                },
                "properties": {},
            }
            for line in scene.osm.roads
        ],
    }
    (out / "osm_roads.geojson").write_text(json.dumps(roads, sort_keys=True) + "\n")
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(scene.manifest, indent=1, sort_keys=True) + "\n")
    return manifest_path
