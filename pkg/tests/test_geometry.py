import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from accrete.errors import ConfigError, DegenerateShapeError
from accrete.geometry import (
    Annulus,
    Ball,
    Box,
    CellMask,
    Difference,
    DomainClassParams,
    Grid,
    Union,
    dilate_mask,
    docking_component,
    hausdorff_distance,
    mask_distance,
    rasterize,
    sublevel_mask,
)

from oracles import brute_hausdorff


@pytest.fixture
def grid32():
    return Grid(cells=(64, 64), spacing=1.0 / 32.0, origin=(-1.0, -1.0))


def random_blob(grid, rng):
    centers = grid.cell_centers()
    k = rng.integers(1, 4)
    vals = np.zeros(grid.cells, dtype=bool)
    for _ in range(k):
        c = rng.uniform(-0.7, 0.7, size=2)
        r = rng.uniform(0.1, 0.5)
        vals |= np.sum((centers - c) ** 2, axis=-1) < r**2
    if not vals.any():
        vals[grid.cells[0] // 2, grid.cells[1] // 2] = True
    return CellMask(grid, vals)


class TestGrid:
    def test_invariants(self):
        with pytest.raises(ConfigError):
            Grid(cells=(3, 8), spacing=0.1, origin=(0.0, 0.0))
        with pytest.raises(ConfigError):
            Grid(cells=(8, 8), spacing=-0.1, origin=(0.0, 0.0))
        g = Grid(cells=(8, 4), spacing=0.5, origin=(1.0, 2.0))
        assert g.box_measure == pytest.approx(4.0 * 2.0)
        np.testing.assert_allclose(g.box_hi, [5.0, 4.0])

    def test_3d(self):
        g = Grid(cells=(4, 5, 6), spacing=0.25, origin=(0.0, 0.0, 0.0))
        assert g.node_shape == (5, 6, 7)
        assert g.cell_centers().shape == (4, 5, 6, 3)


class TestRasterize:
    def test_unit_disk_measure(self):
        grid = Grid(cells=(128, 128), spacing=1.0 / 32.0, origin=(-2.0, -2.0))
        mask = rasterize(Ball((0.0, 0.0), 1.0), grid)
        # measure within two boundary cell-rows of the disk area
        slack = 2.0 * 2.0 * np.pi * grid.spacing
        assert abs(mask.measure - np.pi) <= slack

    def test_full_box(self, grid32):
        mask = rasterize(Box((-1.0, -1.0), (1.0, 1.0)), grid32)
        assert mask.values.all()

    def test_degenerate_ball(self, grid32):
        # tiny ball centered at a grid node: no cell center inside
        with pytest.raises(DegenerateShapeError):
            rasterize(Ball((0.0, 0.0), 0.4 * grid32.spacing), grid32)

    def test_composites(self, grid32):
        ring = rasterize(Annulus((0.0, 0.0), 0.3, 0.8), grid32)
        diff = rasterize(
            Difference(Ball((0.0, 0.0), 0.8), Ball((0.0, 0.0), 0.3)), grid32
        )
        assert ring == diff
        both = rasterize(
            Union((Ball((-0.5, 0.0), 0.2), Ball((0.5, 0.0), 0.2))), grid32
        )
        assert both.count == 2 * rasterize(Ball((0.5, 0.0), 0.2), grid32).count


class TestSublevel:
    def test_radial_field(self, grid32):
        seed = rasterize(Ball((0.0, 0.0), 0.4), grid32)
        coords = grid32.node_coords()
        theta = np.maximum(np.linalg.norm(coords, axis=-1) - 0.4, 0.0)
        got = sublevel_mask(theta, 0.35, seed)
        inner = rasterize(Ball((0.0, 0.0), 0.75 - 1.01 * grid32.spacing), grid32)
        outer = rasterize(Ball((0.0, 0.0), 0.75 + 1.01 * grid32.spacing), grid32)
        assert inner.is_subset_of(got)
        assert got.is_subset_of(outer)

    def test_zero_time_returns_seed(self, grid32):
        seed = rasterize(Ball((0.0, 0.0), 0.4), grid32)
        theta = np.zeros(grid32.node_shape)
        assert sublevel_mask(theta, 0.0, seed) is seed

    def test_monotone_bitwise(self, grid32):
        rng = np.random.default_rng(7)
        seed = rasterize(Ball((0.0, 0.0), 0.3), grid32)
        theta = rng.uniform(0.0, 1.0, size=grid32.node_shape)
        times = sorted(rng.uniform(0.01, 1.0, size=6))
        masks = [sublevel_mask(theta, t, seed) for t in times]
        for a, b in zip(masks, masks[1:]):
            assert a.is_subset_of(b)
        # the seed is contained in every positive-time sublevel of a field
        # that vanishes on the seed's node hull
        theta2 = np.where(seed.node_hull, 0.0, theta)
        assert seed.is_subset_of(sublevel_mask(theta2, 1e-9, seed))


class TestHausdorff:
    def test_identical(self, grid32):
        m = rasterize(Ball((0.1, 0.2), 0.5), grid32)
        assert hausdorff_distance(m, m) == 0.0

    def test_concentric(self, grid32):
        a = rasterize(Ball((0.0, 0.0), 0.4), grid32)
        b = rasterize(Ball((0.0, 0.0), 0.7), grid32)
        assert abs(hausdorff_distance(a, b) - 0.3) <= grid32.spacing

    def test_empty_raises(self, grid32):
        m = rasterize(Ball((0.0, 0.0), 0.4), grid32)
        empty = CellMask(grid32, np.zeros(grid32.cells, dtype=bool))
        with pytest.raises(ValueError):
            hausdorff_distance(m, empty)

    @settings(max_examples=12, deadline=None)
    @given(st.integers(0, 10_000))
    def test_matches_brute_force(self, seed):
        grid = Grid(cells=(32, 32), spacing=1.0 / 16.0, origin=(-1.0, -1.0))
        rng = np.random.default_rng(seed)
        a = random_blob(grid, rng)
        b = random_blob(grid, rng)
        got = hausdorff_distance(a, b)
        want = brute_hausdorff(a.cell_center_points(), b.cell_center_points())
        assert got == pytest.approx(want, abs=1e-12)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10_000))
    def test_symmetry_and_triangle(self, seed):
        grid = Grid(cells=(32, 32), spacing=1.0 / 16.0, origin=(-1.0, -1.0))
        rng = np.random.default_rng(seed)
        a, b, c = (random_blob(grid, rng) for _ in range(3))
        dab = hausdorff_distance(a, b)
        dba = hausdorff_distance(b, a)
        assert dab == dba
        assert dab <= hausdorff_distance(a, c) + hausdorff_distance(c, b) + 1e-12


class TestMaskUtilities:
    def test_boundary_and_measure(self, grid32):
        mask = rasterize(Box((-0.5, -0.5), (0.5, 0.5)), grid32)
        assert mask.measure == pytest.approx(1.0, abs=4 * grid32.spacing)
        inner = rasterize(
            Box((-0.5 + 2 * grid32.spacing, -0.5 + 2 * grid32.spacing),
                (0.5 - 2 * grid32.spacing, 0.5 - 2 * grid32.spacing)),
            grid32,
        )
        assert not mask.boundary[inner.values].any()

    def test_docking_margin(self, grid32):
        body = rasterize(Ball((0.0, 0.0), 0.8), grid32)
        dock = rasterize(Ball((0.0, 0.0), 0.3), grid32)
        margin = mask_distance(dock, body)
        assert margin >= 0.5 - 2 * grid32.spacing

    def test_dilate(self, grid32):
        m = rasterize(Ball((0.0, 0.0), 0.3), grid32)
        grown = dilate_mask(m, 0.2)
        want = rasterize(Ball((0.0, 0.0), 0.5), grid32)
        assert m.is_subset_of(grown)
        # dilated ball matches the bigger ball up to one cell layer
        assert grown.is_subset_of(dilate_mask(want, 1.5 * grid32.spacing))
        assert want.is_subset_of(dilate_mask(grown, 1.5 * grid32.spacing))

    def test_docking_component(self, grid32):
        vals = np.zeros(grid32.cells, dtype=bool)
        vals[4:12, 4:12] = True
        vals[40:44, 40:44] = True  # island not touching the docking set
        mask = CellMask(grid32, vals)
        dockvals = np.zeros(grid32.cells, dtype=bool)
        dockvals[6:8, 6:8] = True
        dock = CellMask(grid32, dockvals)
        kept = docking_component(mask, dock)
        assert kept.count == 64
        with pytest.raises(ConfigError):
            docking_component(mask, CellMask(grid32, np.roll(dockvals, 50, axis=0)))


class TestDomainClassParams:
    def test_validation(self, grid32):
        dock = rasterize(Ball((0.0, 0.0), 0.3), grid32)
        DomainClassParams((0.0, 0.0), 0.5, 0.2).validate_against(dock)
        with pytest.raises(ConfigError):
            DomainClassParams((0.9, 0.9), 0.5, 0.2).validate_against(dock)
        with pytest.raises(ConfigError):
            DomainClassParams((0.0, 0.0), 1.5, 0.2)
