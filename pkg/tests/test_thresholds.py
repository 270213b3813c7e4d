import numpy as np
import pytest

from splatlod.lod import LodBuildConfig, LodLevel, select_active, project_selection
from splatlod.raster import RasterConfig, rasterize, render_scene
from splatlod.scene import Camera, Gaussian, Scene
from splatlod.synthetic import deep_street, face_on_camera, random_scene
from splatlod.thresholds import (ThresholdSearcher, cost_surface,
                                 cost_surface_csv, default_grid, evaluate_cost,
                                 greedy_search)


@pytest.fixture(scope="module")
def mini_street():
    scene, cameras = deep_street(seed=3, n_fine=3000, n_views=6,
                                 resolution=(96, 80), focal=90.0, length=80.0)
    cfg = LodBuildConfig(importance_views=tuple(cameras), filter_scale=1.0,
                         reference_focal=90.0)
    base = LodLevel.base(scene)
    return base, cameras, cfg, ThresholdSearcher(base, cameras, cfg)


def direct_cost(searcher, base, thresholds, views, cfg):
    """Independent route: select active sets per view, project, count binned
    splats with the rasterizer, average per tile."""
    levels = [base] + [searcher.provisional_level(d) for d in thresholds]
    per_view = []
    for cam in views:
        sets = select_active(levels, cam.position)
        batch = project_selection(levels, sets, cam, cfg.raster, shade=False)
        out = rasterize(batch, cam, cfg.raster, need_image=False, record_max_weight=False)
        per_view.append(out.per_tile_count.sum() / out.per_tile_count.size)
    return float(np.mean(per_view))


class TestEvaluateCost:
    def test_no_thresholds_equals_full_representation(self, mini_street):
        base, cameras, cfg, searcher = mini_street
        ev = evaluate_cost(base, [], cameras, cfg, searcher=searcher)
        per_view = []
        for cam in cameras:
            out = render_scene(base.scene, cam, cfg.raster, need_image=False,
                               record_max_weight=False)
            per_view.append(out.per_tile_count.sum() / out.per_tile_count.size)
        assert ev.mean_gaussians_per_tile == pytest.approx(np.mean(per_view), rel=1e-12)
        assert ev.mean_gaussians_per_tile == pytest.approx(np.mean(ev.per_view_cost), rel=1e-12)

    def test_threshold_beyond_scene_extent_is_noop(self, mini_street):
        base, cameras, cfg, searcher = mini_street
        far = 1e6
        assert (searcher.evaluate([far]).mean_gaussians_per_tile
                == pytest.approx(searcher.evaluate([]).mean_gaussians_per_tile, rel=1e-12))

    def test_mid_threshold_reduces_cost(self, mini_street):
        base, cameras, cfg, searcher = mini_street
        assert (searcher.evaluate([12.0]).mean_gaussians_per_tile
                < searcher.evaluate([]).mean_gaussians_per_tile)

    def test_matches_direct_rasterizer_binning(self, mini_street):
        base, cameras, cfg, searcher = mini_street
        for thresholds in ([], [10.0], [8.0, 25.0]):
            fast = searcher.evaluate(thresholds).mean_gaussians_per_tile
            direct = direct_cost(searcher, base, thresholds, cameras, cfg)
            assert fast == pytest.approx(direct, rel=1e-12), thresholds

    def test_rejects_bad_thresholds(self, mini_street):
        base, cameras, cfg, searcher = mini_street
        with pytest.raises(ValueError, match="increasing"):
            searcher.evaluate([5.0, 5.0])
        with pytest.raises(ValueError, match="increasing"):
            searcher.evaluate([-1.0])


class TestGreedySearch:
    def test_single_level_is_grid_argmin(self, mini_street):
        base, cameras, cfg, searcher = mini_street
        grid = list(default_grid(base, cameras, 8))
        accepted, trace = greedy_search(base, cameras, cfg, grid, max_levels=1,
                                        searcher=searcher)
        costs = {g: searcher.evaluate([g]).mean_gaussians_per_tile for g in grid}
        assert accepted == [min(costs, key=costs.get)]
        assert any(t["accepted"] for t in trace)

    def test_accepted_steps_improve(self, mini_street):
        base, cameras, cfg, searcher = mini_street
        grid = list(default_grid(base, cameras, 8))
        _, trace = greedy_search(base, cameras, cfg, grid, max_levels=3, rel_tol=0.0,
                                 searcher=searcher)
        accepted_costs = [t["cost"] for t in trace if t["accepted"]]
        assert all(b < a for a, b in zip(accepted_costs, accepted_costs[1:]))

    def test_determinism(self, mini_street):
        base, cameras, cfg, searcher = mini_street
        grid = list(default_grid(base, cameras, 8))[:4]
        a, _ = greedy_search(base, cameras, cfg, grid, max_levels=2)
        b, _ = greedy_search(base, cameras, cfg, grid, max_levels=2)
        assert a == b

    def test_empty_grid_rejected(self, mini_street):
        base, cameras, cfg, _ = mini_street
        with pytest.raises(ValueError, match="empty"):
            greedy_search(base, cameras, cfg, [], max_levels=1)

    def test_subset_stability(self, mini_street):
        # Evaluating on a seeded random half of the views moves the first
        # accepted threshold by at most one grid step.
        base, cameras, cfg, searcher = mini_street
        grid = list(default_grid(base, cameras, 8))
        full_d1, _ = greedy_search(base, cameras, cfg, grid, max_levels=1,
                                   searcher=searcher)
        rng = np.random.default_rng(17)
        half = [cameras[i] for i in sorted(rng.choice(len(cameras),
                                                      len(cameras) // 2,
                                                      replace=False))]
        half_cfg = LodBuildConfig(importance_views=tuple(half),
                                  filter_scale=cfg.filter_scale,
                                  reference_focal=cfg.reference_focal)
        half_d1, _ = greedy_search(base, half, half_cfg, grid, max_levels=1)
        assert abs(grid.index(full_d1[0]) - grid.index(half_d1[0])) <= 1

    def test_early_stop_when_second_threshold_cannot_help(self):
        # Prunable fine detail at mid range, heavy un-prunable structure far:
        # the first threshold wins big, any second only inflates footprints.
        rng = np.random.default_rng(5)
        cam = face_on_camera(resolution=(64, 64), focal=60.0)
        cams = [cam]
        gaussians = []
        c0 = 0.28209479177387814
        wall_sh = np.zeros((3, 1))
        wall_sh[:, 0] = 0.2 / c0
        for z in np.linspace(8, 18, 150):
            gaussians.append(Gaussian(
                (rng.uniform(-2, 2), rng.uniform(-2, 2), z), (0.05, 0.05, 0.05),
                (1, 0, 0, 0), 0.35, wall_sh * rng.uniform(0.5, 1.5)))
        for z in np.linspace(25, 40, 25):
            gaussians.append(Gaussian(
                (rng.uniform(-3, 3), rng.uniform(-3, 3), z), (1.5, 1.5, 1.5),
                (1, 0, 0, 0), 0.95, wall_sh * 2.0))
        base = LodLevel.base(Scene.from_gaussians(gaussians, 0))
        cfg = LodBuildConfig(importance_views=(cam,), reference_focal=60.0,
                             filter_scale=2.0)
        searcher = ThresholdSearcher(base, cams, cfg)
        grid = [6.0, 12.0, 20.0, 30.0]
        accepted, _ = greedy_search(base, cams, cfg, grid, max_levels=3,
                                    searcher=searcher)
        assert len(accepted) == 1
        # Premise holds: exhaustively, no second threshold beats the first
        # by the acceptance tolerance.
        d1 = accepted[0]
        c1 = searcher.evaluate([d1]).mean_gaussians_per_tile
        for d2 in grid:
            if d2 > d1:
                c2 = searcher.evaluate([d1, d2]).mean_gaussians_per_tile
                assert (c1 - c2) / c1 < 0.02


class TestCostSurface:
    def test_diagonal_invalid_and_far_row_matches_curve(self, mini_street):
        base, cameras, cfg, searcher = mini_street
        grid = [5.0, 10.0, 20.0, 1e6]
        surface = cost_surface(base, cameras, cfg, grid, searcher=searcher)
        assert np.isnan(np.diag(surface)).all()
        assert np.isnan(surface[2, 1])  # d1 >= d2 invalid
        for i, d1 in enumerate(grid[:-1]):
            one = searcher.evaluate([d1]).mean_gaussians_per_tile
            assert surface[i, -1] == pytest.approx(one, rel=1e-12)

    def test_csv_dump(self, mini_street):
        base, cameras, cfg, searcher = mini_street
        grid = [5.0, 15.0]
        surface = cost_surface(base, cameras, cfg, grid, searcher=searcher)
        csv = cost_surface_csv(grid, surface)
        lines = csv.strip().splitlines()
        assert lines[0] == "d1,d2,cost"
        assert len(lines) == 2  # only the single valid pair
        d1, d2, cost = lines[1].split(",")
        assert float(d1) == 5.0 and float(d2) == 15.0
        assert float(cost) == pytest.approx(surface[0, 1], rel=1e-6)


def test_default_grid_is_sorted_and_positive(mini_street):
    base, cameras, _, _ = mini_street
    grid = default_grid(base, cameras, 12)
    assert grid.shape == (12,)
    assert np.all(grid > 0)
    assert np.all(np.diff(grid) > 0)
