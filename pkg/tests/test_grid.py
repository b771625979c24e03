import numpy as np
import pytest

from cropscd.grid import (
    BinaryMask,
    GridError,
    Raster,
    component_sizes,
    connected_components,
    dilate,
    require_aligned,
    resample_nearest,
    slope_from_dem,
)


def horn_slope_oracle(dem: Raster) -> np.ndarray:
    """Direct per-cell Horn slope with clamped borders, written independently."""
    z = dem.cells.astype(np.float64)
    h, w = z.shape
    out = np.zeros((h, w), dtype=np.float64)

    def at(r, c):
        return z[min(max(r, 0), h - 1), min(max(c, 0), w - 1)]

    for r in range(h):
        for c in range(w):
            a, b, cc = at(r - 1, c - 1), at(r - 1, c), at(r - 1, c + 1)
            d, f = at(r, c - 1), at(r, c + 1)
            g, hh, i = at(r + 1, c - 1), at(r + 1, c), at(r + 1, c + 1)
            gx = ((cc + 2 * f + i) - (a + 2 * d + g)) / (8 * dem.pixel_size)
            gy = ((g + 2 * hh + i) - (a + 2 * b + cc)) / (8 * dem.pixel_size)
            out[r, c] = np.degrees(np.arctan(np.hypot(gx, gy)))
    return out.astype(np.float32)


class TestRaster:
    def test_cells_are_frozen(self):
        r = Raster(np.zeros((4, 4), dtype=np.float32))
        with pytest.raises(ValueError):
            r.cells[0, 0] = 1.0

    def test_rejects_bad_pixel_size(self):
        with pytest.raises(GridError):
            Raster(np.zeros((2, 2), dtype=np.float32), pixel_size=0.0)

    def test_alignment(self):
        a = Raster(np.zeros((4, 4), dtype=np.float32))
        b = Raster(np.zeros((4, 4), dtype=np.float32), origin_x=1.0)
        assert not a.aligned_with(b)
        with pytest.raises(GridError):
            require_aligned(a, b)

    def test_mask_rejects_other_values(self):
        with pytest.raises(GridError):
            BinaryMask(np.array([[0, 2]], dtype=np.uint16))


class TestSlope:
    def test_flat_plane_is_zero(self):
        dem = Raster(np.full((8, 8), 42.0, dtype=np.float32))
        assert np.all(slope_from_dem(dem).cells == 0.0)

    def test_unit_gradient_plane_is_45_degrees(self):
        # 1 m rise per 1 m pixel along x.
        x = np.tile(np.arange(10, dtype=np.float32), (10, 1))
        slope = slope_from_dem(Raster(x)).cells
        assert np.allclose(slope[1:-1, 1:-1], 45.0, atol=1e-5)

    def test_matches_bruteforce_horn(self):
        rng = np.random.default_rng(7)
        dem = Raster((rng.random((16, 16)) * 50).astype(np.float32), pixel_size=2.5)
        got = slope_from_dem(dem).cells
        want = horn_slope_oracle(dem)
        assert np.allclose(got, want, atol=1e-6)

    def test_rejects_tiny_rasters(self):
        with pytest.raises(GridError):
            slope_from_dem(Raster(np.zeros((2, 5), dtype=np.float32)))

    def test_range(self):
        rng = np.random.default_rng(3)
        dem = Raster((rng.random((12, 12)) * 500).astype(np.float32), pixel_size=0.5)
        s = slope_from_dem(dem).cells
        assert np.all(s >= 0.0) and np.all(s < 90.0)


def brute_dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    h, w = mask.shape
    out = np.zeros_like(mask)
    for r in range(h):
        for c in range(w):
            r0, r1 = max(0, r - radius), min(h, r + radius + 1)
            c0, c1 = max(0, c - radius), min(w, c + radius + 1)
            out[r, c] = mask[r0:r1, c0:c1].max()
    return out


class TestDilate:
    def test_radius_zero_is_identity(self):
        m = BinaryMask(np.eye(5, dtype=np.uint16))
        assert dilate(m, 0).same_content(m)

    def test_single_cell_radius_one(self):
        cells = np.zeros((5, 5), dtype=np.uint16)
        cells[2, 2] = 1
        out = dilate(BinaryMask(cells), 1).cells
        want = np.zeros((5, 5), dtype=np.uint16)
        want[1:4, 1:4] = 1
        assert np.array_equal(out, want)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(11)
        cells = (rng.random((32, 32)) < 0.1).astype(np.uint16)
        m = BinaryMask(cells)
        assert np.array_equal(dilate(m, 2).cells, brute_dilate(cells, 2))

    def test_monotone_and_composes(self):
        rng = np.random.default_rng(13)
        a = (rng.random((20, 20)) < 0.05).astype(np.uint16)
        b = np.maximum(a, (rng.random((20, 20)) < 0.05).astype(np.uint16))
        da = dilate(BinaryMask(a), 2).cells
        db = dilate(BinaryMask(b), 2).cells
        assert np.all(da <= db)
        once = dilate(BinaryMask(a), 3).cells
        twice = dilate(dilate(BinaryMask(a), 1), 2).cells
        assert np.array_equal(once, twice)


def flood_fill_oracle(mask: np.ndarray, connectivity: int) -> np.ndarray:
    """Raster-scan BFS labeling; label order matches first-cell scan order."""
    if connectivity == 4:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    else:
        steps = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.uint16)
    next_label = 1
    for r in range(h):
        for c in range(w):
            if mask[r, c] and labels[r, c] == 0:
                queue = [(r, c)]
                labels[r, c] = next_label
                while queue:
                    rr, cc = queue.pop()
                    for dr, dc in steps:
                        nr, nc = rr + dr, cc + dc
                        if 0 <= nr < h and 0 <= nc < w and mask[nr, nc] and labels[nr, nc] == 0:
                            labels[nr, nc] = next_label
                            queue.append((nr, nc))
                next_label += 1
    return labels


class TestConnectedComponents:
    def test_all_zero(self):
        m = BinaryMask(np.zeros((6, 6), dtype=np.uint16))
        assert np.all(connected_components(m, 4).cells == 0)

    def test_diagonal_pair(self):
        cells = np.zeros((4, 4), dtype=np.uint16)
        cells[1, 1] = 1
        cells[2, 2] = 1
        m = BinaryMask(cells)
        assert connected_components(m, 4).cells.max() == 2
        assert connected_components(m, 8).cells.max() == 1

    @pytest.mark.parametrize("connectivity", [4, 8])
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_flood_fill(self, connectivity, seed):
        rng = np.random.default_rng(seed)
        cells = (rng.random((24, 24)) < 0.4).astype(np.uint16)
        got = connected_components(BinaryMask(cells), connectivity).cells
        want = flood_fill_oracle(cells, connectivity)
        assert np.array_equal(got, want)

    def test_component_sizes(self):
        cells = np.zeros((4, 4), dtype=np.uint16)
        cells[0, :2] = 1
        cells[3, 3] = 1
        sizes = component_sizes(connected_components(BinaryMask(cells), 4))
        assert sizes.tolist() == [13, 2, 1]


class TestResample:
    def test_coarse_to_fine_nearest(self):
        src = Raster(np.array([[1, 2], [3, 4]], dtype=np.uint16), pixel_size=2.0)
        template = Raster(np.zeros((4, 4), dtype=np.uint16), pixel_size=1.0)
        out = resample_nearest(src, template).cells
        want = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=np.uint16)
        assert np.array_equal(out, want)

    def test_identity_on_same_frame(self):
        rng = np.random.default_rng(5)
        src = Raster((rng.random((6, 6)) * 9).astype(np.uint16))
        out = resample_nearest(src, src)
        assert out.same_content(src)
