import json

import numpy as np
import pytest

from cropscd.assembly import CHANGE_CATEGORIES, assemble
from cropscd.synth import CATEGORY_RECIPES, SynthConfig, build_scene, tile_arrays, write_scene

SMALL = dict(size=256, parcel_pitch=64, min_parcel_px=200)


@pytest.fixture(scope="module")
def scene():
    return build_scene(SynthConfig(seed=11, **SMALL))


class TestDeterminism:
    def test_same_seed_bit_identical(self, scene):
        again = build_scene(SynthConfig(seed=11, **SMALL))
        assert np.array_equal(scene.imagery_t1, again.imagery_t1)
        assert np.array_equal(scene.imagery_t2, again.imagery_t2)
        assert np.array_equal(scene.scmap.cells, again.scmap.cells)
        assert np.array_equal(scene.parcel_labels.cells, again.parcel_labels.cells)
        assert scene.tiles == again.tiles
        assert scene.manifest == again.manifest

    def test_different_seed_differs(self, scene):
        other = build_scene(SynthConfig(seed=12, **SMALL))
        assert not np.array_equal(scene.imagery_t1, other.imagery_t1)


class TestInternalConsistency:
    def test_truth_scmap_matches_assemble(self, scene):
        result = assemble(scene.seg_t1, scene.seg_t2, scene.change)
        assert result.invalid_total == 0
        assert np.array_equal(result.scmap.cells, scene.scmap.cells)

    def test_parcels_single_category(self, scene):
        ids = scene.parcel_labels.cells
        for pid, cat in scene.parcel_categories.items():
            values = np.unique(scene.scmap.cells[ids == pid])
            assert values.tolist() == [cat]

    def test_segmentation_matches_recipes(self, scene):
        ids = scene.parcel_labels.cells
        for pid, cat in scene.parcel_categories.items():
            c1, c2, changed = CATEGORY_RECIPES[cat]
            sel = ids == pid
            assert np.all(scene.seg_t1.cells[sel] == c1)
            assert np.all(scene.seg_t2.cells[sel] == c2)
            assert np.all(scene.change.cells[sel] == (1 if changed else 0))

    def test_parcels_inside_scene(self, scene):
        on_parcel = scene.parcel_labels.cells > 0
        assert np.all(scene.scene_mask.cells[on_parcel] == 1)

    def test_manifest_matches_rasters(self, scene):
        total = scene.scmap.cells.size
        for i, name in enumerate(CHANGE_CATEGORIES):
            want = 100.0 * (scene.scmap.cells == i).sum() / total
            assert scene.manifest["categories"][name]["area_pct"] == pytest.approx(want)

    def test_edge_truth_separates_parcels(self, scene):
        # Parcel cells never sit on the edge-truth lines.
        on_parcel = scene.parcel_labels.cells > 0
        assert not (scene.edge_truth.cells.astype(bool) & on_parcel).any()

    def test_dem_exceeds_elevation_threshold_somewhere(self, scene):
        assert scene.dem.cells.max() > 93.0
        assert (scene.slope.cells > 16.0).any()


class TestFrequencyForcing:
    def test_single_category_weights(self):
        weights = (0, 0, 0, 1.0, 0, 0, 0)
        scene = build_scene(SynthConfig(seed=13, category_weights=weights, **SMALL))
        present = set(np.unique(scene.scmap.cells).tolist())
        assert present <= {0, 3}
        assert set(scene.parcel_categories.values()) == {3}
        counts = scene.manifest["categories"]
        assert counts["early_rice_to_middle_rice"]["parcels"] == len(scene.parcel_categories)


class TestTiles:
    def test_split_ratios(self, scene):
        n = sum(len(v) for v in scene.tiles.values())
        assert len(scene.tiles["train"]) == round(0.6 * n)
        assert len(scene.tiles["val"]) == round(0.1 * n)
        assert len(scene.tiles["train"]) + len(scene.tiles["val"]) + len(scene.tiles["test"]) == n

    def test_tiles_disjoint_and_aligned(self, scene):
        seen = set()
        for split in ("train", "val", "test"):
            for r, c in scene.tiles[split]:
                assert r % scene.config.tile == 0 and c % scene.config.tile == 0
                assert (r, c) not in seen
                seen.add((r, c))

    def test_tile_arrays_shapes(self, scene):
        tiles = tile_arrays(scene, "val")
        assert tiles
        t = scene.config.tile
        for entry in tiles:
            assert entry["img_t1"].shape == (3, t, t)
            assert entry["img_t1"].dtype == np.float32
            assert entry["seg_t1"].shape == (t, t)
            assert set(np.unique(entry["change"])) <= {0.0, 1.0}

    def test_infeasible_tile_size_rejected(self):
        with pytest.raises(ValueError):
            SynthConfig(seed=1, size=100, tile=64)
        with pytest.raises(ValueError):
            SynthConfig(seed=1, size=128, tile=24)


class TestPalettes:
    def test_confusable_palette_reduces_class_contrast(self):
        distinct = build_scene(SynthConfig(seed=14, **SMALL))
        confusable = build_scene(SynthConfig(seed=14, palette="confusable", **SMALL))

        def class_distance(scene):
            # mean pairwise distance between per-class mean colors at t2
            means = []
            for cls in range(1, 5):
                sel = scene.seg_t2.cells == cls
                if sel.any():
                    means.append(scene.imagery_t2[sel].astype(np.float64).mean(axis=0))
            d = [
                np.linalg.norm(a - b) for i, a in enumerate(means) for b in means[i + 1 :]
            ]
            return np.mean(d)

        assert class_distance(confusable) < class_distance(distinct)


def test_write_scene_artifacts(tmp_path, scene):
    manifest_path = write_scene(scene, tmp_path / "scene")
    manifest = json.loads(manifest_path.read_text())
    assert manifest == scene.manifest
    for name in (
        "imagery_t1.png",
        "imagery_t2.png",
        "dem.pgr",
        "lulc_a.pgr",
        "scene_mask.pgr",
        "truth_scmap.pgr",
        "truth_parcels.geojson",
        "osm_roads.geojson",
    ):
        assert (tmp_path / "scene" / name).exists()
    from cropscd.raster_io import read_pgr

    back = read_pgr(tmp_path / "scene" / "truth_scmap.pgr")
    assert np.array_equal(back.cells, scene.scmap.cells)
