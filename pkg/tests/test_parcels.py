import numpy as np
import pytest

from cropscd.grid import BinaryMask, GridError, Raster, connected_components
from cropscd.parcels import (
    ParcelParams,
    binarize,
    candidate_parcels,
    extend_endpoints,
    extract_parcels,
    fuse_parcels,
    merge_slivers,
    pair_intersection_labels,
    prune_dangles,
)
from cropscd.vectorize import polygon_area, polygonize, rasterize


def grid_scene(size=100, fields=3, field_px=28, line_px=2, gap=None):
    """Edge probability map for a fields x fields grid of square parcels.

    Lines (probability 0.9) surround and separate field_px-sized fields;
    `gap` optionally erases a stretch of one interior vertical line, given
    as (row_start, length).
    """
    probs = np.full((size, size), 0.1, dtype=np.float32)
    pitch = field_px + line_px
    extent = fields * pitch + line_px
    margin = (size - extent) // 2
    for k in range(fields + 1):
        off = margin + k * pitch
        probs[margin : margin + extent, off : off + line_px] = 0.9
        probs[off : off + line_px, margin : margin + extent] = 0.9
    if gap is not None:
        row_start, length = gap
        off = margin + pitch  # first interior vertical line
        probs[row_start : row_start + length, off : off + line_px] = 0.1
    return Raster(probs), field_px * field_px


class TestBinarize:
    def test_all_high(self):
        edges = Raster(np.full((4, 4), 0.9, dtype=np.float32))
        assert np.all(binarize(edges).cells == 1)

    def test_all_low(self):
        edges = Raster(np.full((4, 4), 0.1, dtype=np.float32))
        assert np.all(binarize(edges).cells == 0)

    def test_threshold_inclusive(self):
        edges = Raster(np.array([[0.5, 0.49]], dtype=np.float32))
        out = binarize(edges, 0.5).cells
        assert out[0, 0] == 1 and out[0, 1] == 0

    @pytest.mark.parametrize("seed", [0, 1])
    def test_matches_percell_comparison(self, seed):
        rng = np.random.default_rng(seed)
        cells = rng.random((10, 10)).astype(np.float32)
        got = binarize(Raster(cells), 0.5).cells
        for r in range(10):
            for c in range(10):
                assert got[r, c] == (1 if cells[r, c] >= 0.5 else 0)

    def test_rejects_bad_threshold(self):
        edges = Raster(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(GridError):
            binarize(edges, 0.0)

    def test_rejects_out_of_range_probabilities(self):
        with pytest.raises(GridError):
            binarize(Raster(np.full((2, 2), 1.5, dtype=np.float32)))


class TestEndpointExtension:
    def test_closes_straight_gap(self):
        cells = np.zeros((7, 15), dtype=np.uint16)
        cells[3, 1:6] = 1
        cells[3, 9:14] = 1
        out = extend_endpoints(BinaryMask(cells), extend_len=4).cells
        assert np.all(out[3, 1:14] == 1)

    def test_discards_unconnectable_extension(self):
        cells = np.zeros((9, 20), dtype=np.uint16)
        cells[4, 6:10] = 1  # isolated line far from anything
        out = extend_endpoints(BinaryMask(cells), extend_len=3).cells
        assert np.array_equal(out, cells)

    def test_commits_extension_to_border(self):
        cells = np.zeros((5, 8), dtype=np.uint16)
        cells[2, 2:6] = 1
        out = extend_endpoints(BinaryMask(cells), extend_len=3).cells
        assert out[2, 0] == 1 and out[2, 7] == 1


class TestDanglePruning:
    def test_short_spur_removed(self):
        cells = np.zeros((9, 9), dtype=np.uint16)
        cells[4, :] = 1  # main line
        cells[2:4, 4] = 1  # 2-px spur onto the line
        out = prune_dangles(BinaryMask(cells), dangle_len=4).cells
        want = np.zeros_like(cells)
        want[4, :] = 1
        assert np.array_equal(out, want)

    def test_long_line_kept(self):
        cells = np.zeros((9, 9), dtype=np.uint16)
        cells[4, :] = 1
        out = prune_dangles(BinaryMask(cells), dangle_len=4).cells
        assert np.array_equal(out, cells)


class TestExtractParcels:
    def test_grid_with_gap_yields_nine_parcels(self):
        edges, field_area = grid_scene(gap=(50, 3))
        params = ParcelParams(extend_len=4)
        parcels = extract_parcels(edges, params)
        assert len(parcels) == 9
        for poly in parcels:
            assert abs(poly.properties["pixels"] - field_area) / field_area < 0.10

    def test_all_zero_edges_empty_result(self):
        edges = Raster(np.zeros((32, 32), dtype=np.float32))
        assert len(extract_parcels(edges)) == 0

    def test_closed_ring_single_parcel(self):
        probs = np.full((24, 24), 0.0, dtype=np.float32)
        probs[5, 5:19] = 1.0
        probs[18, 5:19] = 1.0
        probs[5:19, 5] = 1.0
        probs[5:19, 18] = 1.0
        parcels = extract_parcels(Raster(probs), ParcelParams(min_area=4))
        assert len(parcels) == 1
        interior = polygon_area(parcels.polygons[0])
        assert interior == pytest.approx(13 * 13, rel=0.25)

    def test_parcel_ids_unique_and_footprints_disjoint(self):
        edges, _ = grid_scene()
        parcels = extract_parcels(edges, ParcelParams())
        ids = parcels.labels()
        assert len(ids) == len(set(ids))
        template = Raster(np.zeros((100, 100), dtype=np.uint16))
        cover = np.zeros((100, 100), dtype=np.int64)
        from cropscd.vectorize import PolygonSet

        for poly in parcels:
            cover += rasterize(PolygonSet([poly]), template).cells != 0
        assert cover.max() <= 1

    def test_footprints_single_component(self):
        edges, _ = grid_scene(gap=(50, 3))
        parcels = extract_parcels(edges, ParcelParams(extend_len=4))
        labels = rasterize(parcels, Raster(np.zeros((100, 100), dtype=np.uint16)))
        for pid in set(parcels.labels()):
            mask = BinaryMask(labels.cells == pid)
            assert connected_components(mask, 4).cells.max() == 1


class TestCandidateParcels:
    def test_border_touching_component_dropped(self):
        cells = np.zeros((12, 12), dtype=np.uint16)
        cells[6, :] = 1  # line splitting the raster: both halves touch the border
        labels = candidate_parcels(BinaryMask(cells), min_area=1)
        assert labels.cells.max() == 0

    def test_void_filled_into_parcel(self):
        # A ring-shaped edge network with junk inside the parcel.
        mask = np.zeros((20, 20), dtype=np.uint16)
        mask[4, 4:16] = 1
        mask[15, 4:16] = 1
        mask[4:16, 4] = 1
        mask[4:16, 15] = 1
        mask[9:11, 9:11] = 1  # small blob: its 4 cells are voids after dropping
        labels = candidate_parcels(BinaryMask(mask), min_area=8)
        assert labels.cells.max() == 1
        assert np.all(labels.cells[9:11, 9:11] == 1)  # void folded into the parcel


def label_raster_to_parcels(cells):
    labels = Raster(np.asarray(cells, dtype=np.uint16))
    return polygonize(labels), labels


class TestFuseParcels:
    def _partition(self, splits, size=20):
        cells = np.zeros((size, size), dtype=np.uint16)
        label = 1
        bounds = [0] + splits + [size]
        for a, b in zip(bounds[:-1], bounds[1:]):
            cells[:, a:b] = label
            label += 1
        return cells

    def test_identical_inputs_idempotent(self):
        cells = self._partition([7, 13])
        parcels, labels = label_raster_to_parcels(cells)
        fused = fuse_parcels(parcels, parcels, labels, min_area=4)
        back = rasterize(fused, labels)
        # same partition up to renumbering: equality of co-partitions
        for pid in np.unique(back.cells):
            if pid == 0:
                continue
            orig = cells[back.cells == pid]
            assert len(np.unique(orig)) == 1

    def test_split_by_crossing_boundary(self):
        vert = self._partition([10])
        horiz = self._partition([10]).T
        p1, labels = label_raster_to_parcels(vert)
        p2, _ = label_raster_to_parcels(horiz)
        fused = fuse_parcels(p1, p2, labels, min_area=4)
        assert len(fused) == 4

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_pairing_matches_percell_oracle(self, seed):
        rng = np.random.default_rng(seed)
        a = self._partition(sorted(rng.integers(2, 18, 2).tolist()))
        b = self._partition(sorted(rng.integers(2, 18, 2).tolist())).T
        p1, labels = label_raster_to_parcels(a)
        p2, _ = label_raster_to_parcels(b)
        paired, pair_of = pair_intersection_labels(p1, p2, labels)
        # refinement: every fused cell maps to exactly one (t1, t2) pair
        for pid, (i, j) in pair_of.items():
            cells = paired.cells == pid
            assert cells.any()
            assert set(np.unique(a[cells])) == {i}
            assert set(np.unique(b[cells])) == {j}
        # cell-level oracle: any two cells with equal (t1, t2) pair and
        # 4-connectivity share a fused label
        covered = (a > 0) & (b > 0)
        assert np.array_equal(paired.cells > 0, covered)

    def test_sliver_merges_into_longest_boundary_neighbor(self):
        cells = np.zeros((6, 10), dtype=np.uint16)
        cells[:, 0:5] = 1
        cells[:, 5:7] = 2  # 12-cell sliver
        cells[:, 7:10] = 3
        merged = merge_slivers(Raster(cells), min_area=13)
        # label 2 shares a 6-cell boundary with both; tie goes to lower id 1
        vals = np.unique(merged.cells[:, 5:7])
        assert vals.tolist() == [1]

    def test_isolated_sliver_dropped(self):
        cells = np.zeros((8, 8), dtype=np.uint16)
        cells[2:4, 2:4] = 1
        merged = merge_slivers(Raster(cells), min_area=10)
        assert merged.cells.max() == 0

    def test_fused_parcels_have_min_area(self):
        rng = np.random.default_rng(3)
        a = self._partition([6, 11])
        b = self._partition([5, 14]).T
        p1, labels = label_raster_to_parcels(a)
        p2, _ = label_raster_to_parcels(b)
        fused = fuse_parcels(p1, p2, labels, min_area=12)
        back = rasterize(fused, labels)
        sizes = np.bincount(back.cells.ravel())[1:]
        assert np.all(sizes[sizes > 0] >= 12)
