"""Acceptance suite: one test per release criterion, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s`. The heavyweight pipeline
state (threshold search, level builds, chunk plan on the deep-street
fixture) is built once and shared; stage wall times are recorded so the
runtime budgets are asserted alongside the functional criteria.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np
import pytest

from splatlod.assets import (AssetError, asset_sha256, read_asset, write_asset)
from splatlod.blending import (blend_factor, compose_active,
                               nearest_two_chunks, render_selection,
                               stream_step)
from splatlod.chunks import (ChunkBuildConfig, build_chunk_active_sets,
                             build_chunk_plan, n_clusters)
from splatlod.cli import main
from splatlod.lod import (LodBuildConfig, LodLevel, apply_smoothing_filter,
                          build_level, mean_focal, render_lod)
from splatlod.raster import (RasterConfig, filter_opacity_factor,
                             project_scene, rasterize, render_scene)
from splatlod.scene import Camera, ChunkPlan
from splatlod.synthetic import deep_street, face_on_camera, random_scene
from splatlod.thresholds import (ThresholdSearcher, cost_surface,
                                 default_grid, greedy_search)

from .reference import brute_force_band_membership, naive_composite, psnr


def check(name: str, ok: bool, detail: str) -> None:
    print(f"\n[ACCEPTANCE] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


@dataclass
class Pipeline:
    scene: object
    cameras: list
    cfg: LodBuildConfig
    base: LodLevel
    grid: list
    accepted: list
    costs: list           # cost with 0, 1, 2, 3 thresholds
    surface: np.ndarray
    greedy2_cost: float
    levels: list          # base + two built levels
    plan: ChunkPlan
    full_tile: np.ndarray
    lod_tile: np.ndarray
    view_mse: np.ndarray
    times: dict = field(default_factory=dict)


@pytest.fixture(scope="module")
def pipe():
    times = {}
    scene, cameras = deep_street(seed=7)
    cfg = LodBuildConfig(importance_views=tuple(cameras),
                         reference_focal=mean_focal(cameras),
                         importance_subsample=3)
    base = LodLevel.base(scene)

    t0 = time.monotonic()
    searcher = ThresholdSearcher(base, cameras, cfg)
    grid = list(default_grid(base, cameras, 12))
    accepted, _ = greedy_search(base, cameras, cfg, grid, max_levels=3,
                                rel_tol=0.0, searcher=searcher)
    costs = [searcher.evaluate(accepted[:k]).mean_gaussians_per_tile
             for k in range(len(accepted) + 1)]
    times["search"] = time.monotonic() - t0

    t0 = time.monotonic()
    surface = cost_surface(base, cameras, cfg, grid, searcher=searcher)
    greedy2, _ = greedy_search(base, cameras, cfg, grid, max_levels=2,
                               rel_tol=0.0, searcher=searcher)
    greedy2_cost = searcher.evaluate(greedy2).mean_gaussians_per_tile
    times["surface"] = time.monotonic() - t0

    t0 = time.monotonic()
    lvl1, _ = build_level(base, accepted[0], cfg)
    times["build_level1"] = time.monotonic() - t0

    rc = cfg.raster
    t0 = time.monotonic()
    full_tile, lod_tile, view_mse = [], [], []
    for cam in cameras:
        full = render_scene(scene, cam, rc, record_max_weight=False)
        lod = render_lod([base, lvl1], cam, rc)
        full_tile.append(full.per_tile_count.mean())
        lod_tile.append(lod.per_tile_count.mean())
        view_mse.append(np.mean((full.image - lod.image) ** 2))
    times["compare_renders"] = time.monotonic() - t0

    lvl2, _ = build_level(base, accepted[1], cfg, level_index=2)
    levels = [base, lvl1, lvl2]
    ccfg = ChunkBuildConfig(d1=accepted[0], kmeans_seed=0, perturb_count=4,
                            perturb_seed=0, vis_threshold=cfg.gamma)
    plan, _ = build_chunk_plan(levels, cameras, ccfg, rc)

    return Pipeline(scene, cameras, cfg, base, grid, accepted, costs, surface,
                    greedy2_cost, levels, plan, np.asarray(full_tile),
                    np.asarray(lod_tile), np.asarray(view_mse), times)


def adjacent_pair_unions(plan: ChunkPlan) -> list[int]:
    order = np.argsort(plan.centers[:, 2])
    return [plan.resident_count([int(a), int(b)])
            for a, b in zip(order, order[1:])]


def test_rasterizer_oracle():
    # 20 random scenes, <= 1000 gaussians, 64x64, alpha_min = 0: tile output
    # equals the naive full-sort per-pixel compositor within 1e-5/channel.
    cam = face_on_camera()
    cfg = RasterConfig(alpha_min=0.0)
    t0 = time.monotonic()
    worst = 0.0
    for seed in range(20):
        n = 600 + (seed * 20) % 401
        scene = random_scene(seed, n, box_min=(-3, -3, -2), box_max=(3, 3, 12))
        batch = project_scene(scene, cam, cfg)
        out = rasterize(batch, cam, cfg)
        ref_img, _, _ = naive_composite(batch, cam, cfg)
        worst = max(worst, float(np.abs(out.image - ref_img).max()))
    elapsed = time.monotonic() - t0
    check("rasterizer-oracle", worst <= 1e-5 and elapsed < 10.0,
          f"max |tile - naive| = {worst:.2e}, {elapsed:.1f}s for 20 scenes")


def test_smoothing_filter_unit_checks():
    rng = np.random.default_rng(0)
    sigma = rng.uniform(0.02, 5.0, 1000)
    v = rng.uniform(0.0, 10.0, 1000)
    got = filter_opacity_factor(np.stack([sigma] * 3, axis=1), v)
    want = (sigma ** 2 / (sigma ** 2 + v)) ** 1.5
    factor_err = float(np.abs(got - want).max())

    # d -> 0: the filtered level renders identically to the base level.
    scene = random_scene(11, 2000, box_min=(-4, -4, 1), box_max=(4, 4, 30))
    cam = face_on_camera(resolution=(96, 96), focal=80.0)
    cfg = LodBuildConfig(importance_views=(cam,), reference_focal=1e12)
    filtered = apply_smoothing_filter(LodLevel.base(scene), 1e-9, cfg)
    base_img = render_scene(scene, cam, cfg.raster).image
    filt_img = render_scene(filtered.scene, cam, cfg.raster).image
    render_err = float(np.abs(base_img - filt_img).max())
    check("smoothing-filter-units", factor_err <= 1e-12 and render_err <= 1e-7,
          f"determinant factor err {factor_err:.2e} over 1000 draws, "
          f"d->0 render err {render_err:.2e}")


def test_lod_cost_reduction(pipe):
    full_m = pipe.full_tile.mean()
    lod_m = pipe.lod_tile.mean()
    reduction = (full_m - lod_m) / full_m
    agg_psnr = -10.0 * np.log10(pipe.view_mse.mean())
    per_view = (pipe.full_tile - pipe.lod_tile) / pipe.full_tile
    elapsed = pipe.times["search"] + pipe.times["build_level1"] + pipe.times["compare_renders"]
    check("lod-cost-reduction",
          reduction >= 0.40 and agg_psnr >= 32.0 and per_view.min() > 0
          and elapsed < 300.0,
          f"tile-count cut {reduction * 100:.1f}% (per-view min "
          f"{per_view.min() * 100:.1f}%), PSNR {agg_psnr:.1f} dB over "
          f"{len(pipe.cameras)} views, {elapsed:.0f}s")


def test_diminishing_returns(pipe):
    c = pipe.costs
    reductions = [c[i] - c[i + 1] for i in range(len(c) - 1)]
    ok = (len(reductions) >= 2 and all(r > 0 for r in reductions)
          and all(a > b for a, b in zip(reductions, reductions[1:])))
    check("diminishing-returns", ok,
          "marginal per-tile reductions " + " > ".join(f"{r:.1f}" for r in reductions))


def test_greedy_vs_exhaustive(pipe):
    best = float(np.nanmin(pipe.surface))
    gap = (pipe.greedy2_cost - best) / best
    elapsed = pipe.times["search"] + pipe.times["surface"]
    check("greedy-vs-exhaustive", gap <= 0.05 and elapsed < 600.0,
          f"greedy 2-level cost {pipe.greedy2_cost:.2f} vs exhaustive "
          f"{best:.2f} on a {len(pipe.grid)}-point grid (gap {gap * 100:.2f}%), "
          f"{elapsed:.0f}s")


def test_n_clusters_formula():
    rng = np.random.default_rng(123)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(1, 60))
        pos = rng.uniform(-50, 50, (n, 3))
        d1 = float(rng.uniform(0.2, 80.0))
        cams = [Camera(p, (1, 0, 0, 0), (50, 50), (32, 32), (64, 64)) for p in pos]
        centroid = pos.mean(axis=0)
        raw = int(np.ceil((4.0 / d1) * np.linalg.norm(pos - centroid, axis=1).max()))
        expected = min(max(raw, 1), n)
        if n_clusters(cams, d1) != expected:
            mismatches += 1
    check("n-clusters-formula", mismatches == 0,
          f"{100 - mismatches}/100 random camera sets match exactly")


def test_active_set_soundness(pipe):
    # Pre-filter sets reproduce the distance-band predicate exactly; the
    # shipped (visibility-filtered) sets are subsets that still satisfy it.
    prefilter = build_chunk_active_sets(pipe.levels, pipe.plan.centers,
                                        pipe.plan.radii)
    thresholds = [lv.depth_threshold for lv in pipe.levels]
    exact = True
    sound = True
    for j in range(pipe.plan.n_chunks):
        offsets = [0.0] + [float(pipe.plan.radii[j])] * (len(pipe.levels) - 1)
        for lvl, lv in enumerate(pipe.levels):
            masks = brute_force_band_membership(lv.scene.means,
                                                pipe.plan.centers[j],
                                                thresholds, offsets)
            want = np.flatnonzero(masks[lvl])
            exact &= np.array_equal(prefilter.active_sets[j][lvl], want)
            shipped = pipe.plan.active_sets[j][lvl]
            sound &= bool(np.isin(shipped, want).all())
    check("active-set-soundness", exact and sound,
          f"{pipe.plan.n_chunks} chunks x {len(pipe.levels)} levels: "
          f"band predicate reproduced exactly; filtered sets are sound subsets")


def _trajectory_window(pipe, half_width=1.0, steps=201):
    order = np.argsort(pipe.plan.centers[:, 2])
    a = int(order[len(order) // 2])
    b = int(order[len(order) // 2 + 1])
    ca, cb = pipe.plan.centers[a], pipe.plan.centers[b]
    mid = 0.5 * (ca + cb)
    axis = (cb - ca) / np.linalg.norm(cb - ca)
    lo = mid - half_width * axis
    hi = mid + half_width * axis
    positions = [lo + s * (hi - lo) for s in np.linspace(0, 1, steps)]
    return a, b, ca, cb, positions


def test_blending_continuity(pipe):
    a, b, ca, cb, positions = _trajectory_window(pipe)
    template = pipe.cameras[0]
    rc = pipe.cfg.raster

    def cam_at(pos):
        return Camera(pos, template.orientation, template.focal,
                      template.principal_point, template.resolution,
                      template.near_plane)

    blend_imgs = []
    nearest = []
    for pos in positions:
        f, o = nearest_two_chunks(pipe.plan, pos)
        t = blend_factor(pos, pipe.plan.centers[f], pipe.plan.centers[o])[1]
        sel = compose_active(pipe.plan, pipe.levels, f, o, t)
        blend_imgs.append(render_selection(pipe.levels, sel, cam_at(pos), rc).image)
        nearest.append(f)
    blend_max = max(float(np.abs(blend_imgs[i + 1] - blend_imgs[i]).max())
                    for i in range(len(positions) - 1))

    swap = next(i for i in range(len(nearest) - 1) if nearest[i + 1] != nearest[i])
    hard = []
    for i in (swap, swap + 1):
        sel = compose_active(pipe.plan, pipe.levels, nearest[i], None, 1.0)
        hard.append(render_selection(pipe.levels, sel, cam_at(positions[i]), rc).image)
    hard_delta = float(np.abs(hard[1] - hard[0]).max())

    t_at_center = blend_factor(ca, ca, cb)[0]
    t_at_mid = blend_factor(0.5 * (ca + cb), ca, cb)[0]
    endpoints_exact = (abs(t_at_center - 1.0) <= 1e-12
                       and abs(t_at_mid - 0.5) <= 1e-12)
    check("blending-continuity",
          blend_max <= 0.1 * hard_delta and endpoints_exact,
          f"max blended per-step delta {blend_max:.4f} vs hard-switch swap "
          f"delta {hard_delta:.4f} (ratio {blend_max / hard_delta:.3f}); "
          f"t(center)={t_at_center}, t(midpoint)={t_at_mid}")


def test_swap_consistency(pipe):
    # At the instant the streaming machine exchanges the secondary (the
    # camera crosses the primary-center plane), the render from the old
    # pair equals the render from the new pair.
    order = np.argsort(pipe.plan.centers[:, 2])
    a, b, c = (int(order[len(order) // 2 - 1]), int(order[len(order) // 2]),
               int(order[len(order) // 2 + 1]))
    swap_pos = pipe.plan.centers[b].copy()
    template = pipe.cameras[0]
    cam = Camera(swap_pos, template.orientation, template.focal,
                 template.principal_point, template.resolution, template.near_plane)
    t_old = blend_factor(swap_pos, pipe.plan.centers[b], pipe.plan.centers[a])[1]
    t_new = blend_factor(swap_pos, pipe.plan.centers[b], pipe.plan.centers[c])[1]
    rc = pipe.cfg.raster
    img_old = render_selection(pipe.levels,
                               compose_active(pipe.plan, pipe.levels, b, a, t_old),
                               cam, rc).image
    img_new = render_selection(pipe.levels,
                               compose_active(pipe.plan, pipe.levels, b, c, t_new),
                               cam, rc).image
    diff = float(np.abs(img_old - img_new).max())
    check("swap-consistency", diff <= 1e-6,
          f"pre/post-swap pair renders differ by {diff:.2e} per channel")


def test_residency_bound(pipe, tmp_path):
    bound = max(adjacent_pair_unions(pipe.plan))
    full_count = len(pipe.scene)

    # Dense walk along the corridor: residency of the stream state machine.
    state = None
    worst = 0
    z0 = pipe.plan.centers[:, 2].min()
    z1 = pipe.plan.centers[:, 2].max()
    for z in np.linspace(z0, z1, 240):
        state, _ = stream_step(state, pipe.plan, np.array([0.0, 0.5, z]))
        worst = max(worst, pipe.plan.resident_count(list(state.loaded_chunks)))

    # End-to-end: the bench subcommand reports the same bound.
    asset_dir = tmp_path / "asset"
    write_asset(asset_dir, pipe.levels, pipe.plan, sh_degree=pipe.scene.sh_degree,
                reference_focal=pipe.cfg.reference_focal,
                filter_scale=pipe.cfg.filter_scale, gamma=pipe.cfg.gamma)
    traj = ["time,px,py,pz,qw,qx,qy,qz"]
    for i, z in enumerate(np.linspace(z0 + 1, z1 - 1, 8)):
        traj.append(f"{i},0.0,0.5,{z},1,0,0,0")
    traj_path = tmp_path / "traj.csv"
    traj_path.write_text("\n".join(traj))
    report_path = tmp_path / "report.json"
    code = main(["bench", "--asset", str(asset_dir), "--trajectory", str(traj_path),
                 "--report", str(report_path), "--modes", "full,blend",
                 "--resolution", "160x128"])
    assert code == 0
    report = json.loads(report_path.read_text())
    bench_residents = [f["modes"]["blend"]["resident_gaussians"]
                       for f in report["frames"]]

    reduction = 1.0 - worst / full_count
    ok = (worst <= bound and worst < full_count and reduction >= 0.25
          and max(bench_residents) <= bound)
    check("residency-bound", ok,
          f"walk max resident {worst} <= adjacent-pair bound {bound}, "
          f"bench max {max(bench_residents)}, full scene {full_count} "
          f"({reduction * 100:.1f}% reduction)")


def test_asset_round_trip(pipe, tmp_path):
    kw = dict(sh_degree=pipe.scene.sh_degree,
              reference_focal=pipe.cfg.reference_focal,
              filter_scale=pipe.cfg.filter_scale, gamma=pipe.cfg.gamma,
              seeds={"kmeans": 0, "perturb": 0}, config_hash="acceptance")
    a = write_asset(tmp_path / "a", pipe.levels, pipe.plan, **kw)
    b = write_asset(tmp_path / "b", pipe.levels, pipe.plan, **kw)
    stable = asset_sha256(a) == asset_sha256(b)

    asset = read_asset(a)
    eq = len(asset.levels) == len(pipe.levels)
    for got, want in zip(asset.levels, pipe.levels):
        eq &= bool(np.allclose(got.scene.means, want.scene.means, atol=1e-4))
        eq &= np.array_equal(got.provenance, want.provenance)
    for sa, sb in zip(asset.plan.active_sets, pipe.plan.active_sets):
        for x, y in zip(sa, sb):
            eq &= np.array_equal(x, y)
    eq &= bool(np.array_equal(asset.plan.centers, pipe.plan.centers))

    # Fuzz a compact container: every mutated read either succeeds or
    # raises the structured AssetError; anything else is a crash.
    small_scene = random_scene(5, 300, sh_degree=1)
    small_levels = [LodLevel.base(small_scene)]
    small_plan = ChunkPlan(np.zeros((1, 3)), np.array([1.0]),
                           ((np.arange(300, dtype=np.int64),),))
    small = write_asset(tmp_path / "small.splatlod", small_levels, small_plan,
                        container=True, sh_degree=1, reference_focal=50.0,
                        filter_scale=1.0, gamma=0.02)
    pristine = small.read_bytes()
    rng = np.random.default_rng(7)
    crashes = 0
    rejected = 0
    target = tmp_path / "mut.splatlod"
    for case in range(1000):
        raw = bytearray(pristine)
        if case % 4 == 0:
            raw = raw[:int(rng.integers(0, len(raw)))]
        else:
            for _ in range(int(rng.integers(1, 9))):
                pos = int(rng.integers(0, len(raw)))
                raw[pos] ^= 1 << int(rng.integers(0, 8))
        target.write_bytes(bytes(raw))
        try:
            read_asset(target)
        except AssetError:
            rejected += 1
        except Exception:
            crashes += 1
    check("asset-round-trip", stable and eq and crashes == 0,
          f"sha256 stable {stable}, read-back equal {eq}, fuzz 1000 cases: "
          f"{rejected} structured rejections, {crashes} crashes")
