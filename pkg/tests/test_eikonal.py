import numpy as np
import pytest

from accrete.errors import ConfigError
from accrete.geometry import Ball, CellMask, Grid, dilate_mask, rasterize, sublevel_mask
from accrete.eikonal import (
    GrowthLaw,
    SpeedField,
    check_gradient_bounds,
    evaluate_speed,
    solve_eikonal,
    upwind_gradient,
)

from oracles import dijkstra_travel_time


@pytest.fixture
def grid():
    return Grid(cells=(128, 128), spacing=4.0 / 128.0, origin=(-2.0, -2.0))


@pytest.fixture
def seed(grid):
    return rasterize(Ball((0.0, 0.0), 1.0), grid)


class TestGrowthLaw:
    def test_constant(self, grid):
        law = GrowthLaw("constant", 2.0, 0.5, 3.0)
        field = evaluate_speed(law, None, grid)
        assert np.all(field.values == 2.0)

    def test_affine_zero_coeff(self, grid):
        law = GrowthLaw("affine-trace", 1.5, 0.5, 3.0, coeff=0.0)
        alpha = np.zeros(grid.node_shape + (3,))
        field = evaluate_speed(law, alpha, grid)
        assert np.all(field.values == 1.5)

    def test_affine_isotropic_alpha(self, grid):
        beta = 0.3
        law = GrowthLaw("affine-trace", 1.0, 0.5, 3.0, coeff=0.8)
        alpha = np.zeros(grid.node_shape + (3,))
        alpha[..., 0] = beta
        alpha[..., 1] = beta
        field = evaluate_speed(law, alpha, grid)
        want = np.clip(1.0 + 0.8 * 2 * beta, 0.5, 3.0)
        assert np.allclose(field.values, want)

    def test_clipping(self, grid):
        law = GrowthLaw("affine-trace", 1.0, 0.5, 1.2, coeff=10.0)
        alpha = np.ones(grid.node_shape + (3,))
        field = evaluate_speed(law, alpha, grid)
        assert np.all(field.values == 1.2)

    def test_nonfinite_alpha_rejected(self, grid):
        law = GrowthLaw("affine-trace", 1.0, 0.5, 3.0, coeff=1.0)
        alpha = np.zeros(grid.node_shape + (3,))
        alpha[3, 3, 0] = np.nan
        with pytest.raises(ValueError):
            evaluate_speed(law, alpha, grid)

    def test_bad_bounds(self):
        with pytest.raises(ConfigError):
            GrowthLaw("constant", 1.0, 1.0, 1.0)

    def test_radial(self, grid):
        law = GrowthLaw("radial", 1.0, 0.5, 3.0, coeff=0.5, center=(0.0, 0.0))
        field = evaluate_speed(law, None, grid)
        assert field.values[64, 64] == pytest.approx(1.0)
        assert field.values[0, 0] == pytest.approx(min(3.0, 1.0 + 0.5 * np.sqrt(8)))


class TestSolveEikonal:
    def test_distance_from_ball(self, grid, seed):
        speed = evaluate_speed(GrowthLaw("constant", 1.0, 0.5, 2.0), None, grid)
        theta = solve_eikonal(speed, seed)
        coords = grid.node_coords()
        exact = np.maximum(np.linalg.norm(coords, axis=-1) - 1.0, 0.0)
        assert np.abs(theta.values - exact).max() <= 2 * grid.spacing
        assert theta.residual <= 1e-10
        assert np.all(theta.values[theta.seed_nodes] == 0.0)

    def test_speed_scaling_bitwise(self, grid, seed):
        one = SpeedField(grid, np.ones(grid.node_shape), 0.5, 2.0)
        two = SpeedField(grid, np.full(grid.node_shape, 2.0), 1.0, 4.0)
        t1 = solve_eikonal(one, seed)
        t2 = solve_eikonal(two, seed)
        assert np.array_equal(t2.values, t1.values / 2.0)

    def test_seed_monotonicity(self, grid):
        speed = evaluate_speed(GrowthLaw("constant", 1.0, 0.5, 2.0), None, grid)
        small = rasterize(Ball((0.0, 0.0), 0.5), grid)
        big = rasterize(Ball((0.0, 0.0), 1.0), grid)
        t_small = solve_eikonal(speed, small)
        t_big = solve_eikonal(speed, big)
        assert np.all(t_big.values <= t_small.values + 1e-12)

    def test_empty_seed(self, grid):
        speed = evaluate_speed(GrowthLaw("constant", 1.0, 0.5, 2.0), None, grid)
        empty = CellMask(grid, np.zeros(grid.cells, dtype=bool))
        with pytest.raises(ValueError):
            solve_eikonal(speed, empty)

    def test_growth_domain_bound(self, grid):
        law = GrowthLaw("radial", 1.0, 0.8, 1.6, coeff=0.4, center=(0.0, 0.0))
        speed = evaluate_speed(law, None, grid)
        seed = rasterize(Ball((0.0, 0.0), 0.5), grid)
        theta = solve_eikonal(speed, seed)
        horizon = 0.6
        mask = sublevel_mask(theta, horizon, seed)
        bound = dilate_mask(seed, horizon * speed.gamma_max + 1.01 * grid.spacing)
        assert mask.is_subset_of(bound)

    def test_dijkstra_oracle_two_half_planes(self):
        grid = Grid(cells=(32, 32), spacing=4.0 / 32.0, origin=(-2.0, -2.0))
        seed = rasterize(Ball((0.0, 0.0), 0.3), grid)
        coords = grid.node_coords()
        vals = np.where(coords[..., 0] < 0.0, 2.0, 1.0)
        speed = SpeedField(grid, vals, 1.0, 2.0)
        theta = solve_eikonal(speed, seed)

        def speed_fn(x, y):
            return 2.0 if x < 0.0 else 1.0

        oracle = dijkstra_travel_time(grid, seed, speed_fn, refine=4)
        err = np.abs(theta.values - oracle).max()
        assert err <= 3 * grid.spacing

    def test_stability_in_data(self):
        grid = Grid(cells=(48, 48), spacing=4.0 / 48.0, origin=(-2.0, -2.0))
        seed = rasterize(Ball((0.0, 0.0), 0.5), grid)
        rng = np.random.default_rng(3)
        coords = grid.node_coords()
        # generous Lipschitz budget: longest path over slowness-squared
        path_budget = 2 * np.sqrt(2) * 4.0
        for _ in range(4):
            a = rng.uniform(0.2, 0.6, size=2)
            base = 1.0 + 0.3 * np.sin(a[0] * coords[..., 0]) * np.cos(
                a[1] * coords[..., 1]
            )
            delta = rng.uniform(0.0, 0.08)
            s1 = SpeedField(grid, np.clip(base, 0.7, 1.3), 0.7, 1.3)
            s2 = SpeedField(grid, np.clip(base + delta, 0.7, 1.4), 0.7, 1.4)
            t1 = solve_eikonal(s1, seed)
            t2 = solve_eikonal(s2, seed)
            dtheta = np.abs(t1.values - t2.values).max()
            dgamma = np.abs(s1.values - s2.values).max()
            if dgamma > 0:
                assert dtheta / dgamma <= 1.2 * path_budget / 0.7**2


class TestGradientBounds:
    def test_unit_speed(self, grid, seed):
        speed = evaluate_speed(GrowthLaw("constant", 1.0, 0.5, 2.0), None, grid)
        theta = solve_eikonal(speed, seed)
        rep = check_gradient_bounds(theta, delta=2 * grid.spacing)
        assert rep.max_violation == 0.0
        assert 1.0 - 2 * grid.spacing <= rep.grad_min
        assert rep.grad_max <= 1.0 + 2 * grid.spacing

    def test_speed_two(self, grid, seed):
        speed = SpeedField(grid, np.full(grid.node_shape, 2.0), 1.9, 2.1)
        theta = solve_eikonal(speed, seed)
        rep = check_gradient_bounds(theta, delta=2 * grid.spacing)
        assert abs(rep.grad_min - 0.5) <= 2 * grid.spacing
        assert abs(rep.grad_max - 0.5) <= 2 * grid.spacing

    def test_refinement_shrinks_truncation(self):
        # a variable-speed pair of runs: bound violations stay at scheme
        # truncation level and the inter-resolution gap halves with h
        gaps = []
        for n in (64, 128):
            grid = Grid(cells=(n, n), spacing=4.0 / n, origin=(-2.0, -2.0))
            seed = rasterize(Ball((0.0, 0.0), 0.5), grid)
            law = GrowthLaw("radial", 1.0, 0.8, 1.8, coeff=0.3, center=(0.0, 0.0))
            speed = evaluate_speed(law, None, grid)
            theta = solve_eikonal(speed, seed)
            rep = check_gradient_bounds(theta, delta=1e-9)
            assert rep.max_violation == 0.0
            gaps.append((grid, theta))
        coarse_grid, coarse = gaps[0]
        fine_grid, fine = gaps[1]
        diff = np.abs(fine.values[::2, ::2] - coarse.values).max()
        assert diff <= 2.5 * coarse_grid.spacing

    def test_upwind_gradient_matches_slowness(self, grid, seed):
        law = GrowthLaw("radial", 1.0, 0.8, 1.8, coeff=0.3, center=(0.0, 0.0))
        speed = evaluate_speed(law, None, grid)
        theta = solve_eikonal(speed, seed)
        g = upwind_gradient(theta.values, grid.spacing)
        sel = ~theta.seed_nodes
        assert np.abs(g[sel] * speed.values[sel] - 1.0).max() <= 1e-10
