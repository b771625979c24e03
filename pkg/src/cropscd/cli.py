"""Command-line front end.

One executable with a subcommand per pipeline stage plus `synth` (scene
generation), `run` (the whole chain), and `gradcheck` (numerical
validation). Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cropscd",
        description="Parcel-scale crop semantic change detection pipeline",
    )
    parser.add_argument("--config", type=Path, default=None, help="pipeline config JSON")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument("--dry-run", action="store_true", help="print the plan, execute nothing")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic bi-temporal scene")
    synth.add_argument("--size", type=int, default=None)
    synth.add_argument("--palette", choices=["distinct", "confusable"], default=None)

    run = sub.add_parser("run", help="execute the full pipeline on a scene directory")
    run.add_argument("--scene", type=Path, required=True, help="scene directory from synth")
    run.add_argument(
        "--ablation",
        choices=["base", "scene", "parcels", "full"],
        default=None,
        help="override config ablation: base (neither), scene (division only), parcels (constraint only), full (both)",
    )

    divide = sub.add_parser("scene-divide", help="agricultural scene division")
    divide.add_argument("--scene", type=Path, required=True)

    et = sub.add_parser("edge-train", help="train the edge network")
    et.add_argument("--scene", type=Path, required=True)

    ei = sub.add_parser("edge-infer", help="edge probability raster for both epochs")
    ei.add_argument("--scene", type=Path, required=True)

    pe = sub.add_parser("parcel-extract", help="edge probability raster to parcel polygons")
    pe.add_argument("--edges", type=Path, required=True, help="input edge PGR")
    pe.add_argument("--parcels", type=Path, required=True, help="output GeoJSON")

    pf = sub.add_parser("parcel-fuse", help="fuse two parcel sets")
    pf.add_argument("--t1", type=Path, required=True)
    pf.add_argument("--t2", type=Path, required=True)
    pf.add_argument("--frame", type=Path, required=True, help="template raster PGR")
    pf.add_argument("--fused", type=Path, required=True, help="output GeoJSON")

    st = sub.add_parser("scd-train", help="train the change network")
    st.add_argument("--scene", type=Path, required=True)

    si = sub.add_parser("scd-infer", help="per-epoch segmentation and change mosaics")
    si.add_argument("--scene", type=Path, required=True)

    asm = sub.add_parser("assemble", help="build the from-to semantic change map")
    asm.add_argument("--seg-t1", type=Path, required=True)
    asm.add_argument("--seg-t2", type=Path, required=True)
    asm.add_argument("--change", type=Path, required=True)
    asm.add_argument("--scmap", type=Path, required=True, help="output PGR")

    con = sub.add_parser("constrain", help="apply the parcel majority constraint")
    con.add_argument("--scmap", type=Path, required=True)
    con.add_argument("--parcels", type=Path, required=True)
    con.add_argument("--constrained", type=Path, required=True, help="output PGR")

    ev = sub.add_parser("evaluate", help="confusion matrix and metric report")
    ev.add_argument("--truth", type=Path, required=True)
    ev.add_argument("--pred", type=Path, required=True)
    ev.add_argument("--scene-mask", type=Path, default=None)
    ev.add_argument("--classes", type=int, default=7)
    ev.add_argument("--report", type=Path, required=True, help="output JSON")

    sub.add_parser("gradcheck", help="finite-difference validation of every operation")
    return parser


def _load_config(args):
    from .config import PipelineConfig

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    return PipelineConfig.load(args.config, overrides)


def _pipeline(args, config, scene_dir):
    from .pipeline import Pipeline

    out_dir = Path(config["out_dir"])
    return Pipeline(config, scene_dir, out_dir)


def cmd_synth(args, config) -> int:
    from .assembly import CHANGE_CATEGORIES
    from .synth import SynthConfig, build_scene, write_scene

    seed = config.require_seed()
    s = dict(config["synth"])
    if args.size is not None:
        s["size"] = args.size
    if args.palette is not None:
        s["palette"] = args.palette
    synth_config = SynthConfig(
        seed=seed,
        size=int(s["size"]),
        tile=int(s["tile"]),
        parcel_pitch=int(s["parcel_pitch"]),
        jitter=int(s["jitter"]),
        palette=s["palette"],
        category_weights=tuple(float(w) for w in s["category_weights"]),
        min_parcel_px=int(s["min_parcel_px"]),
        road_buffer=float(s["road_buffer"]),
        min_tile_coverage=float(s["min_tile_coverage"]),
        background_confusion=float(s["background_confusion"]),
        speckle_fraction=float(s["speckle_fraction"]),
    )
    out = Path(config["out_dir"]) if args.out is None else args.out
    if args.dry_run:
        print(f"plan: synth size={synth_config.size} palette={synth_config.palette} -> {out}")
        return EXIT_OK
    scene = build_scene(synth_config)
    manifest = write_scene(scene, out)
    counts = {name: scene.manifest["categories"][name]["parcels"] for name in CHANGE_CATEGORIES}
    print(f"synth: wrote {manifest} ({scene.manifest['n_parcels']} parcels, {counts})")
    return EXIT_OK


def cmd_run(args, config) -> int:
    if args.ablation is not None:
        flags = {
            "base": {"scene": False, "parcels": False},
            "scene": {"scene": True, "parcels": False},
            "parcels": {"scene": False, "parcels": True},
            "full": {"scene": True, "parcels": True},
        }[args.ablation]
        config.data["ablation"] = flags
    pipe = _pipeline(args, config, args.scene)
    report = pipe.run(dry_run=args.dry_run)
    if not args.dry_run:
        overall = report["overall"]
        print(
            "run: F1={f1:.3f} KC={kappa:.3f} OA={oa:.3f} mIoU={miou:.3f}".format(**overall)
        )
    return EXIT_OK


def _single_stage(args, config, stage: str) -> int:
    pipe = _pipeline(args, config, args.scene)
    if args.dry_run:
        print(f"plan: {stage}")
        return EXIT_OK
    pipe.out.mkdir(parents=True, exist_ok=True)
    handler = {
        "scene-divide": pipe.stage_scene_divide,
        "edge-train": pipe.stage_edge_train,
        "edge-infer": pipe.stage_edge_infer,
        "scd-train": pipe.stage_scd_train,
        "scd-infer": pipe.stage_scd_infer,
    }[stage]
    handler()
    return EXIT_OK


def cmd_parcel_extract(args, config) -> int:
    from .parcels import extract_parcels
    from .pipeline import parcel_params_from_config
    from .raster_io import read_pgr, write_geojson

    if args.dry_run:
        print("plan: parcel-extract")
        return EXIT_OK
    parcels = extract_parcels(read_pgr(args.edges), parcel_params_from_config(config))
    write_geojson(parcels, args.parcels)
    print(f"parcel-extract: {len(parcels)} parcels -> {args.parcels}")
    return EXIT_OK


def cmd_parcel_fuse(args, config) -> int:
    from .parcels import fuse_parcels
    from .raster_io import read_geojson, read_pgr, write_geojson

    if args.dry_run:
        print("plan: parcel-fuse")
        return EXIT_OK
    fused = fuse_parcels(
        read_geojson(args.t1),
        read_geojson(args.t2),
        read_pgr(args.frame),
        min_area=int(config["parcels"]["fuse_min_area"]),
    )
    write_geojson(fused, args.fused)
    print(f"parcel-fuse: {len(fused)} parcels -> {args.fused}")
    return EXIT_OK


def cmd_assemble(args, config) -> int:
    from .assembly import assemble, category_report, preview_rgb
    from .grid import BinaryMask
    from .raster_io import read_pgr, write_pgr, write_png

    if args.dry_run:
        print("plan: assemble")
        return EXIT_OK
    result = assemble(
        read_pgr(args.seg_t1),
        read_pgr(args.seg_t2),
        BinaryMask.from_raster(read_pgr(args.change)),
    )
    out = write_pgr(result.scmap, args.scmap)
    write_png(preview_rgb(result.scmap), out.with_suffix(".png"))
    report = category_report(result.scmap)
    out.with_suffix(".report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    invalid = {f"{a}->{b}": n for (a, b), n in sorted(result.invalid_pairs.items())}
    print(f"assemble: wrote {args.scmap} (invalid transitions: {json.dumps(invalid)})")
    return EXIT_OK


def cmd_constrain(args, config) -> int:
    from .assembly import SemanticChangeMap, category_report, parcel_constrain, preview_rgb
    from .raster_io import read_geojson, read_pgr, write_pgr, write_png

    if args.dry_run:
        print("plan: constrain")
        return EXIT_OK
    scmap = SemanticChangeMap.from_raster_checked(read_pgr(args.scmap))
    parcels = read_geojson(args.parcels)
    constrained = parcel_constrain(scmap, parcels)
    out = write_pgr(constrained, args.constrained)
    write_png(preview_rgb(constrained), out.with_suffix(".png"))
    report = category_report(constrained, parcels)
    out.with_suffix(".report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(f"constrain: wrote {args.constrained}")
    return EXIT_OK


def cmd_evaluate(args, config) -> int:
    from .grid import BinaryMask
    from .metrics import build_cm, overall_report, write_report
    from .raster_io import read_pgr

    if args.dry_run:
        print("plan: evaluate")
        return EXIT_OK
    scene = None
    if args.scene_mask is not None:
        scene = BinaryMask.from_raster(read_pgr(args.scene_mask))
    cm = build_cm(read_pgr(args.truth), read_pgr(args.pred), args.classes, scene=scene)
    report = overall_report(cm)
    report["confusion_matrix"] = cm.counts.tolist()
    write_report(report, args.report)
    overall = report["overall"]
    print(
        "evaluate: F1={f1:.3f} KC={kappa:.3f} OA={oa:.3f} mIoU={miou:.3f} -> {path}".format(
            path=args.report, **overall
        )
    )
    return EXIT_OK


def cmd_gradcheck(args, config) -> int:
    from .nn import gradcheck
    from .nn import functional as F

    if args.dry_run:
        print("plan: gradcheck")
        return EXIT_OK
    rng = np.random.default_rng(config.data.get("seed") or 0)
    bce_targets = (rng.random((1, 1, 4, 4)) < 0.5).astype(np.float64)
    cce_labels = rng.integers(0, 3, (1, 4, 4))
    checks = {
        "conv2d": lambda: gradcheck(
            lambda x, w, b: F.conv2d(x, w, b, stride=1, padding=1),
            [rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)],
        ),
        "maxpool2d": lambda: gradcheck(
            lambda x: F.maxpool2d(x),
            [rng.permutation(np.arange(32, dtype=np.float64)).reshape(1, 2, 4, 4)],
        ),
        "batchnorm2d": lambda: gradcheck(
            lambda x, g, b: F.batchnorm2d(x, g, b, np.zeros(2), np.ones(2), training=True),
            [rng.standard_normal((2, 2, 3, 3)), rng.standard_normal(2) + 1.5, rng.standard_normal(2)],
        ),
        "upsample_bilinear": lambda: gradcheck(
            lambda x: F.upsample_bilinear(x, 2), [rng.standard_normal((1, 2, 3, 3))]
        ),
        "cc_energy": lambda: gradcheck(
            lambda q, k: F.cc_energy(q, k),
            [rng.standard_normal((1, 2, 3, 4)), rng.standard_normal((1, 2, 3, 4))],
        ),
        "cc_aggregate": lambda: gradcheck(
            lambda a, v: F.cc_aggregate(a, v),
            [rng.standard_normal((1, 3, 4, 7)), rng.standard_normal((1, 2, 3, 4))],
        ),
        "bce_with_logits": lambda: gradcheck(
            lambda l: F.bce_with_logits(l, bce_targets),
            [rng.standard_normal((1, 1, 4, 4))],
        ),
        "cce_with_logits": lambda: gradcheck(
            lambda l: F.cce_with_logits(l, cce_labels),
            [rng.standard_normal((1, 3, 4, 4))],
        ),
    }
    failures = []
    for name, check in checks.items():
        report = check()
        status = "pass" if report.passed else "FAIL"
        print(f"gradcheck {name}: {status} (max rel err {report.max_rel_error:.2e})")
        if not report.passed:
            failures.append(name)
    if failures:
        print(f"gradcheck: FAILED for {failures}")
        return EXIT_NUMERICAL
    return EXIT_OK


def main(argv=None) -> int:
    from .config import ConfigError
    from .grid import GridError
    from .metrics import MetricError
    from .nn import NumericalError
    from .pipeline import PipelineStageError
    from .raster_io import DataError
    from .vectorize import PolygonError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args)
        if args.command == "synth":
            return cmd_synth(args, config)
        if args.command == "run":
            return cmd_run(args, config)
        if args.command in ("scene-divide", "edge-train", "edge-infer", "scd-train", "scd-infer"):
            return _single_stage(args, config, args.command)
        if args.command == "parcel-extract":
            return cmd_parcel_extract(args, config)
        if args.command == "parcel-fuse":
            return cmd_parcel_fuse(args, config)
        if args.command == "assemble":
            return cmd_assemble(args, config)
        if args.command == "constrain":
            return cmd_constrain(args, config)
        if args.command == "evaluate":
            return cmd_evaluate(args, config)
        if args.command == "gradcheck":
            return cmd_gradcheck(args, config)
        parser.error(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, GridError, PolygonError, MetricError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PipelineStageError as exc:
        cause = exc.cause
        print(f"pipeline error: {exc}", file=sys.stderr)
        if isinstance(cause, ConfigError):
            return EXIT_CONFIG
        if isinstance(cause, NumericalError):
            return EXIT_NUMERICAL
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
