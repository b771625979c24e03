"""Stage orchestration: wiring the modules into the end-to-end run.

Stages execute in a fixed order, each persisting its artifacts under the
output directory; a rerun skips any stage whose outputs already exist, so
interrupted runs resume without recomputation and produce the identical
final report. The report deliberately carries no timing or cache
information, which keeps two runs of the same seeded config byte-identical.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assembly import (
    CHANGE_CATEGORIES,
    NUM_CHANGE_CATEGORIES,
    SemanticChangeMap,
    assemble,
    category_report,
    parcel_constrain,
    preview_rgb,
)
from .changenet import ChangeNet, ScdSample, ScdTrainConfig, train_change_net
from .config import PipelineConfig
from .edgenet import EdgeNet, EdgeTrainConfig, SemConfig, infer_edge_raster, train_edge_net
from .grid import BinaryMask, Raster, resample_nearest, slope_from_dem
from .metrics import build_cm, overall_report
from .nn import Tensor, no_grad
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.rng import stream_seed
from .parcels import ParcelParams, extract_parcels, fuse_parcels
from .raster_io import DataError, read_geojson, read_pgr, read_png, write_geojson, write_pgr, write_png
from .scene import LulcProduct, OsmLayers, Polyline, divide_scene
from .vectorize import polygonize


def log(msg: str) -> None:
    print(msg, file=sys.stderr)


# Display colors for per-epoch class labels (background + 4 crops).
SEG_PREVIEW_PALETTE = (
    (40, 40, 40),
    (64, 180, 75),
    (20, 100, 45),
    (255, 200, 40),
    (150, 80, 200),
)


@dataclass
class SceneInputs:
    """Artifacts of a scene directory (as written by the synth command)."""

    frame: Raster
    manifest: dict
    imagery_t1: np.ndarray
    imagery_t2: np.ndarray
    dem: Raster
    lulc_a: LulcProduct
    lulc_b: LulcProduct
    osm: OsmLayers
    truth_scmap: Raster
    truth_seg_t1: Raster
    truth_seg_t2: Raster
    truth_change: Raster
    truth_edges: Raster


def load_scene_dir(scene_dir: str | Path) -> SceneInputs:
    scene_dir = Path(scene_dir)
    manifest_path = scene_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"scene directory {scene_dir} has no manifest.json (run synth first)")
    manifest = json.loads(manifest_path.read_text())
    dem = read_pgr(scene_dir / "dem.pgr")
    lulc_a = LulcProduct(
        read_pgr(scene_dir / "lulc_a.pgr"),
        {int(k): v for k, v in manifest["lulc_a_class_map"].items()},
    )
    lulc_b = LulcProduct(
        read_pgr(scene_dir / "lulc_b.pgr"),
        {int(k): v for k, v in manifest["lulc_b_class_map"].items()},
    )
    buildings = read_geojson(scene_dir / "osm_buildings.geojson")
    water = read_geojson(scene_dir / "osm_water.geojson")
    roads_doc = json.loads((scene_dir / "osm_roads.geojson").read_text())
    roads = [
        Polyline([(float(x), float(y)) for x, y in feat["geometry"]["coordinates"]])
        for feat in roads_doc.get("features", [])
        if feat.get("geometry", {}).get("type") == "LineString"
    ]
    osm = OsmLayers(buildings=buildings, water=water, roads=roads, road_buffer=manifest["road_buffer"])
    return SceneInputs(
        frame=dem.like(np.zeros_like(dem.cells, dtype=np.uint16)),
        manifest=manifest,
        imagery_t1=read_png(scene_dir / "imagery_t1.png"),
        imagery_t2=read_png(scene_dir / "imagery_t2.png"),
        dem=dem,
        lulc_a=lulc_a,
        lulc_b=lulc_b,
        osm=osm,
        truth_scmap=read_pgr(scene_dir / "truth_scmap.pgr"),
        truth_seg_t1=read_pgr(scene_dir / "truth_seg_t1.pgr"),
        truth_seg_t2=read_pgr(scene_dir / "truth_seg_t2.pgr"),
        truth_change=read_pgr(scene_dir / "truth_change.pgr"),
        truth_edges=read_pgr(scene_dir / "truth_edges.pgr"),
    )


def parcel_params_from_config(config: PipelineConfig) -> ParcelParams:
    p = config["parcels"]
    return ParcelParams(
        threshold=float(p["threshold"]),
        dilate_radius=int(p["dilate_radius"]),
        min_area=int(p["min_area"]),
        simplify_tol=float(p["simplify_tol"]),
        extend_len=int(p["extend_len"]),
        dangle_len=int(p["dangle_len"]),
    )


def _tiles_all(size: int, tile: int) -> list[tuple[int, int]]:
    return [(r, c) for r in range(0, size, tile) for c in range(0, size, tile)]


def _split_all_tiles(size: int, tile: int, seed: int) -> dict[str, list[tuple[int, int]]]:
    tiles = _tiles_all(size, tile)
    rng = np.random.default_rng(stream_seed(seed, "split-all"))
    order = list(rng.permutation(len(tiles)))
    n_train = round(0.6 * len(tiles))
    n_val = round(0.1 * len(tiles))
    return {
        "train": sorted(tiles[i] for i in order[:n_train]),
        "val": sorted(tiles[i] for i in order[n_train : n_train + n_val]),
        "test": sorted(tiles[i] for i in order[n_train + n_val :]),
    }


class Pipeline:
    """One configured end-to-end run over a scene directory."""

    STAGES = (
        "scene-divide",
        "edge-train",
        "edge-infer",
        "parcel-extract",
        "parcel-fuse",
        "scd-train",
        "scd-infer",
        "assemble",
        "constrain",
        "evaluate",
    )

    def __init__(self, config: PipelineConfig, scene_dir: str | Path, out_dir: str | Path):
        self.config = config
        self.scene_dir = Path(scene_dir)
        self.out = Path(out_dir)
        self.use_scene_division = bool(config["ablation"]["scene"])
        self.use_parcel_constraint = bool(config["ablation"]["parcels"])
        self._scene: SceneInputs | None = None
        self._seed: int | None = None

    # -- helpers -----------------------------------------------------------

    @property
    def seed(self) -> int:
        # Training and splitting need it; pure raster stages do not.
        if self._seed is None:
            self._seed = self.config.require_seed()
        return self._seed

    @property
    def scene(self) -> SceneInputs:
        if self._scene is None:
            self._scene = load_scene_dir(self.scene_dir)
        return self._scene

    def plan(self) -> list[str]:
        stages = ["scene-divide"] if self.use_scene_division else []
        if self.use_parcel_constraint:
            stages += ["edge-train", "edge-infer", "parcel-extract", "parcel-fuse"]
        stages += ["scd-train", "scd-infer", "assemble"]
        if self.use_parcel_constraint:
            stages += ["constrain"]
        stages += ["evaluate"]
        return stages

    def _done(self, *paths: Path) -> bool:
        return all(p.exists() for p in paths)

    def _tile_size(self) -> int:
        return int(self.scene.manifest["tile"])

    def _splits(self) -> dict[str, list[tuple[int, int]]]:
        if self.use_scene_division:
            return {
                split: [(int(r), int(c)) for r, c in tiles]
                for split, tiles in self.scene.manifest["tiles"].items()
            }
        return _split_all_tiles(int(self.scene.manifest["size"]), self._tile_size(), self.seed)

    # -- stages ------------------------------------------------------------

    def stage_scene_divide(self) -> None:
        out = self.out / "scene"
        mask_p = out / "scene_mask.pgr"
        if self._done(mask_p, out / "imagery_t1_clipped.png", out / "scene_outline.geojson"):
            log("scene-divide: cached")
            return
        s = self.scene
        scene_cfg = self.config["scene"]
        lulc_a = LulcProduct(resample_nearest(s.lulc_a.labels, s.frame), s.lulc_a.class_map)
        lulc_b = LulcProduct(resample_nearest(s.lulc_b.labels, s.frame), s.lulc_b.class_map)
        slope = slope_from_dem(s.dem)
        osm = OsmLayers(
            buildings=s.osm.buildings,
            water=s.osm.water,
            roads=s.osm.roads,
            road_buffer=float(scene_cfg["road_buffer"]),
        )
        mask = divide_scene(
            lulc_a, lulc_b, s.dem, slope, osm,
            max_elev=float(scene_cfg["max_elev"]),
            max_slope=float(scene_cfg["max_slope"]),
        )
        write_pgr(mask, mask_p)
        write_pgr(slope, out / "slope.pgr")
        outline = polygonize(mask.like(mask.cells))
        write_geojson(outline, out / "scene_outline.geojson")
        for name, img in (("t1", s.imagery_t1), ("t2", s.imagery_t2)):
            clipped = (img * mask.cells[:, :, None]).astype(np.uint8)
            write_png(clipped, out / f"imagery_{name}_clipped.png")
        log("scene-divide: done")

    def _imagery(self) -> tuple[np.ndarray, np.ndarray]:
        if self.use_scene_division:
            t1 = read_png(self.out / "scene" / "imagery_t1_clipped.png")
            t2 = read_png(self.out / "scene" / "imagery_t2_clipped.png")
        else:
            t1, t2 = self.scene.imagery_t1, self.scene.imagery_t2
        return t1, t2

    def _tile(self, arr: np.ndarray, r: int, c: int) -> np.ndarray:
        t = self._tile_size()
        return arr[r : r + t, c : c + t]

    def _img_tile(self, img: np.ndarray, r: int, c: int) -> np.ndarray:
        return self._tile(img, r, c).transpose(2, 0, 1).astype(np.float32) / 255.0

    def stage_edge_train(self) -> None:
        ckpt = self.out / "edge_model"
        if self._done(ckpt / "manifest.json"):
            log("edge-train: cached")
            return
        t1, t2 = self._imagery()
        edges = self.scene.truth_edges.cells
        images, masks = [], []
        for r, c in self._splits()["train"]:
            for img in (t1, t2):
                images.append(self._img_tile(img, r, c))
                masks.append(self._tile(edges, r, c).astype(np.float32))
        cfg = self.config["edge"]
        sem = SemConfig(int(cfg["sem_rate_factor"]), int(cfg["sem_branches"]), int(cfg["sem_channels"]))
        model = EdgeNet(stream_seed(self.seed, "edge-init"), sem)
        train_cfg = EdgeTrainConfig(
            epochs=int(cfg["epochs"]),
            batch_size=int(cfg["batch_size"]),
            lr=float(cfg["lr"]),
            momentum=float(cfg["momentum"]),
            weight_decay=float(cfg["weight_decay"]),
            seed=self.seed,
        )
        model, train_log = train_edge_net(images, masks, train_cfg, model=model)
        save_checkpoint(model, ckpt)
        (self.out / "edge_train_log.json").write_text(
            json.dumps(train_log.steps, sort_keys=True) + "\n"
        )
        log(f"edge-train: done ({len(train_log.steps)} steps)")

    def _edge_model(self) -> EdgeNet:
        cfg = self.config["edge"]
        sem = SemConfig(int(cfg["sem_rate_factor"]), int(cfg["sem_branches"]), int(cfg["sem_channels"]))
        model = EdgeNet(stream_seed(self.seed, "edge-init"), sem)
        return load_checkpoint(model, self.out / "edge_model")

    def stage_edge_infer(self) -> None:
        out1, out2 = self.out / "edges_t1.pgr", self.out / "edges_t2.pgr"
        if self._done(out1, out2):
            log("edge-infer: cached")
            return
        model = self._edge_model()
        cfg = self.config["edge"]
        t1, t2 = self._imagery()
        for img, path in ((t1, out1), (t2, out2)):
            arr = img.transpose(2, 0, 1).astype(np.float32) / 255.0
            raster = infer_edge_raster(
                model, arr, self.scene.frame.like(np.zeros(arr.shape[1:], dtype=np.uint16)),
                window=int(cfg["infer_window"]),
                margin=int(cfg["infer_margin"]),
            )
            write_pgr(raster, path)
        log("edge-infer: done")

    def _parcel_params(self) -> ParcelParams:
        return parcel_params_from_config(self.config)

    def stage_parcel_extract(self) -> None:
        out1, out2 = self.out / "parcels_t1.geojson", self.out / "parcels_t2.geojson"
        if self._done(out1, out2):
            log("parcel-extract: cached")
            return
        params = self._parcel_params()
        for src, dst in ((self.out / "edges_t1.pgr", out1), (self.out / "edges_t2.pgr", out2)):
            parcels = extract_parcels(read_pgr(src), params)
            write_geojson(parcels, dst)
            log(f"parcel-extract: {dst.name} ({len(parcels)} parcels)")

    def stage_parcel_fuse(self) -> None:
        out = self.out / "parcels_fused.geojson"
        if self._done(out):
            log("parcel-fuse: cached")
            return
        t1 = read_geojson(self.out / "parcels_t1.geojson")
        t2 = read_geojson(self.out / "parcels_t2.geojson")
        fused = fuse_parcels(
            t1, t2, self.scene.frame, min_area=int(self.config["parcels"]["fuse_min_area"])
        )
        write_geojson(fused, out)
        log(f"parcel-fuse: done ({len(fused)} parcels)")

    def stage_scd_train(self) -> None:
        ckpt = self.out / "scd_model"
        if self._done(ckpt / "manifest.json"):
            log("scd-train: cached")
            return
        t1, t2 = self._imagery()
        s = self.scene
        splits = self._splits()

        def samples_of(split: str) -> list[ScdSample]:
            out = []
            for r, c in splits[split]:
                out.append(
                    ScdSample(
                        img_t1=self._img_tile(t1, r, c),
                        img_t2=self._img_tile(t2, r, c),
                        y_t1=self._tile(s.truth_seg_t1.cells, r, c).astype(np.int64),
                        y_t2=self._tile(s.truth_seg_t2.cells, r, c).astype(np.int64),
                        y_bcd=self._tile(s.truth_change.cells, r, c).astype(np.float32),
                    )
                )
            return out

        cfg = self.config["scd"]
        train_cfg = ScdTrainConfig(
            epochs=int(cfg["epochs"]),
            batch_size=int(cfg["batch_size"]),
            lr=float(cfg["lr"]),
            momentum=float(cfg["momentum"]),
            weight_decay=float(cfg["weight_decay"]),
            seed=self.seed,
            rcca_repeats=int(cfg["rcca_repeats"]),
        )
        model = ChangeNet(stream_seed(self.seed, "scd-init"), train_cfg.rcca_repeats)
        model, train_log = train_change_net(samples_of("train"), samples_of("val"), train_cfg, model=model)
        save_checkpoint(model, ckpt)
        (self.out / "scd_train_log.json").write_text(
            json.dumps({"steps": train_log.steps, "epochs": train_log.epochs, "best_epoch": train_log.best_epoch}, sort_keys=True)
            + "\n"
        )
        log(f"scd-train: done ({len(train_log.steps)} steps, best epoch {train_log.best_epoch})")

    def _scd_model(self) -> ChangeNet:
        model = ChangeNet(stream_seed(self.seed, "scd-init"), int(self.config["scd"]["rcca_repeats"]))
        return load_checkpoint(model, self.out / "scd_model")

    def stage_scd_infer(self) -> None:
        outs = [self.out / f"pred_{n}.pgr" for n in ("seg_t1", "seg_t2", "change")]
        previews = [self.out / f"pred_{n}.png" for n in ("seg_t1", "seg_t2", "change")]
        if self._done(*outs, *previews):
            log("scd-infer: cached")
            return
        model = self._scd_model()
        model.eval()
        t1, t2 = self._imagery()
        size = int(self.scene.manifest["size"])
        tile = self._tile_size()
        seg1 = np.zeros((size, size), dtype=np.uint16)
        seg2 = np.zeros((size, size), dtype=np.uint16)
        chg = np.zeros((size, size), dtype=np.uint16)
        tiles = _tiles_all(size, tile)
        batch = 8
        with no_grad():
            for start in range(0, len(tiles), batch):
                group = tiles[start : start + batch]
                x1 = Tensor(np.stack([self._img_tile(t1, r, c) for r, c in group]))
                x2 = Tensor(np.stack([self._img_tile(t2, r, c) for r, c in group]))
                l1, l2, lb = model(x1, x2)
                a1 = l1.data.argmax(axis=1).astype(np.uint16)
                a2 = l2.data.argmax(axis=1).astype(np.uint16)
                ab = (lb.data[:, 0] > 0).astype(np.uint16)
                for i, (r, c) in enumerate(group):
                    seg1[r : r + tile, c : c + tile] = a1[i]
                    seg2[r : r + tile, c : c + tile] = a2[i]
                    chg[r : r + tile, c : c + tile] = ab[i]
        frame = self.scene.frame
        write_pgr(frame.like(seg1), outs[0])
        write_pgr(frame.like(seg2), outs[1])
        write_pgr(frame.like(chg), outs[2])
        seg_lut = np.array(SEG_PREVIEW_PALETTE, dtype=np.uint8)
        chg_lut = np.array(((235, 235, 235), (200, 30, 30)), dtype=np.uint8)
        write_png(seg_lut[seg1.astype(np.int64)], self.out / "pred_seg_t1.png")
        write_png(seg_lut[seg2.astype(np.int64)], self.out / "pred_seg_t2.png")
        write_png(chg_lut[chg.astype(np.int64)], self.out / "pred_change.png")
        log("scd-infer: done")

    def stage_assemble(self) -> None:
        out = self.out / "scmap_pixel.pgr"
        if self._done(out, self.out / "scmap_pixel.png", self.out / "assemble_invalid.json"):
            log("assemble: cached")
            return
        seg1 = read_pgr(self.out / "pred_seg_t1.pgr")
        seg2 = read_pgr(self.out / "pred_seg_t2.pgr")
        change = BinaryMask.from_raster(read_pgr(self.out / "pred_change.pgr"))
        result = assemble(seg1, seg2, change)
        write_pgr(result.scmap, out)
        write_png(preview_rgb(result.scmap), self.out / "scmap_pixel.png")
        invalid = {f"{a}->{b}": n for (a, b), n in sorted(result.invalid_pairs.items())}
        (self.out / "assemble_invalid.json").write_text(json.dumps(invalid, sort_keys=True) + "\n")
        log(f"assemble: done ({result.invalid_total} invalid transition cells)")

    def stage_constrain(self) -> None:
        out = self.out / "scmap_final.pgr"
        if self._done(out, self.out / "scmap_final.png"):
            log("constrain: cached")
            return
        scmap = SemanticChangeMap.from_raster_checked(read_pgr(self.out / "scmap_pixel.pgr"))
        parcels = read_geojson(self.out / "parcels_fused.geojson")
        constrained = parcel_constrain(scmap, parcels)
        write_pgr(constrained, out)
        write_png(preview_rgb(constrained), self.out / "scmap_final.png")
        log("constrain: done")

    def _final_scmap_path(self) -> Path:
        return self.out / ("scmap_final.pgr" if self.use_parcel_constraint else "scmap_pixel.pgr")

    def stage_evaluate(self) -> dict:
        report_path = self.out / "report.json"
        if report_path.exists():
            log("evaluate: cached")
            return json.loads(report_path.read_text())
        s = self.scene
        pred = read_pgr(self._final_scmap_path())
        size = int(s.manifest["size"])
        tile = self._tile_size()
        region = np.zeros((size, size), dtype=np.uint16)
        for r, c in s.manifest["tiles"]["test"]:
            region[r : r + tile, c : c + tile] = 1
        region_mask = BinaryMask(region, s.frame.origin_x, s.frame.origin_y, s.frame.pixel_size)
        cm = build_cm(s.truth_scmap, pred, NUM_CHANGE_CATEGORIES, scene=region_mask, names=CHANGE_CATEGORIES)
        metrics = overall_report(cm)

        scmap = SemanticChangeMap.from_raster_checked(pred)
        cat_report = category_report(scmap)
        echo = {
            key: self.config[key]
            for key in ("seed", "scene", "edge", "parcels", "scd", "ablation")
        }
        report = {
            "config": echo,
            "confusion_matrix": cm.counts.tolist(),
            "detailed": metrics["per_class"],
            "overall": metrics["overall"],
            "category_report": cat_report,
        }
        report_path.write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
        log("evaluate: done")
        return report

    # -- driver --------------------------------------------------------------

    def run(self, dry_run: bool = False) -> dict:
        plan = self.plan()
        if dry_run:
            for name in plan:
                log(f"plan: {name}")
            return {"plan": plan}
        self.out.mkdir(parents=True, exist_ok=True)
        handlers = {
            "scene-divide": self.stage_scene_divide,
            "edge-train": self.stage_edge_train,
            "edge-infer": self.stage_edge_infer,
            "parcel-extract": self.stage_parcel_extract,
            "parcel-fuse": self.stage_parcel_fuse,
            "scd-train": self.stage_scd_train,
            "scd-infer": self.stage_scd_infer,
            "assemble": self.stage_assemble,
            "constrain": self.stage_constrain,
        }
        for name in plan[:-1]:
            try:
                handlers[name]()
            except Exception as exc:
                raise PipelineStageError(name, exc) from exc
        try:
            return self.stage_evaluate()
        except Exception as exc:
            raise PipelineStageError("evaluate", exc) from exc


class PipelineStageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause
