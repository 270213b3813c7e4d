"""Pipeline driver: build, threshold search, verification renders, benches.

Exit codes: 0 ok, 1 internal invariant violation, 2 user/input error.
Every subcommand is deterministic given --seed; --threads never changes
results, only wall time.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import assets, images
from .assets import AssetError, asset_sha256, config_digest, read_asset
from .blending import (blend_factor, compose_active, nearest_two_chunks,
                       render_selection, stream_step)
from .chunks import ChunkBuildConfig, build_chunk_plan
from .lod import LodBuildConfig, LodLevel, build_levels, mean_focal, select_active
from .raster import RasterConfig, visibility_histogram
from .scene import Camera, validate_scene
from .thresholds import (ThresholdSearcher, cost_surface, cost_surface_csv,
                         default_grid, greedy_search)

DEFAULT_HIST_EDGES = [0, 1, 2, 4, 8, 16, 32, 64, 128, 256]
REPORT_VERSION = 1


class UserInputError(Exception):
    pass


def _load_toml(path: Path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise UserInputError(f"config {path}: {e}") from e


def _flat_config(path) -> dict:
    """Flat key/value config; keys mirror the build-config field names."""
    if path is None:
        return {}
    raw = _load_toml(Path(path))
    flat = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            flat.update(value)
        else:
            flat[key] = value
    return flat


def _parse_pose(text: str):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 7:
        raise UserInputError("pose must be px,py,pz,qw,qx,qy,qz")
    return np.array(parts[:3]), np.array(parts[3:])


def _parse_resolution(text: str) -> tuple[int, int]:
    w, _, h = text.partition("x")
    try:
        return int(w), int(h)
    except ValueError:
        raise UserInputError(f"bad resolution {text!r}, expected WIDTHxHEIGHT") from None


def _camera_for(asset, position, quat, args) -> Camera:
    w, h = _parse_resolution(args.resolution)
    focal = args.focal if args.focal else asset.reference_focal
    return Camera(position, quat, (focal, focal), (w / 2, h / 2), (w, h),
                  near_plane=args.near)


def _read_trajectory(path) -> list[tuple[float, np.ndarray, np.ndarray]]:
    path = Path(path)
    if path.suffix == ".json":
        cams = assets.read_cameras_json(path)
        return [(float(i), c.position, c.orientation) for i, c in enumerate(cams)]
    rows = []
    try:
        for ln, line in enumerate(path.read_text().splitlines()):
            line = line.strip()
            if not line or line.startswith(("#", "time")):
                continue
            vals = [float(v) for v in line.split(",")]
            if len(vals) != 8:
                raise UserInputError(f"{path}:{ln + 1}: expected time,px,py,pz,qw,qx,qy,qz")
            rows.append((vals[0], np.array(vals[1:4]), np.array(vals[4:8])))
    except (OSError, ValueError) as e:
        raise UserInputError(f"trajectory {path}: {e}") from e
    if not rows:
        raise UserInputError(f"trajectory {path} is empty")
    return rows


def _raster_config(args, flat: dict) -> RasterConfig:
    return RasterConfig(
        alpha_clamp=flat.get("alpha_clamp", 0.99),
        alpha_min=flat.get("alpha_min", 1.0 / 255.0),
        t_min=flat.get("t_min", 1e-4),
        dilation2d=flat.get("dilation2d", 0.1),
        threads=getattr(args, "threads", 1) or 1)


def _lod_config(args, flat: dict, cameras) -> LodBuildConfig:
    return LodBuildConfig(
        filter_scale=getattr(args, "filter_scale", None) or flat.get("filter_scale", 1.0),
        gamma=getattr(args, "gamma", None) or flat.get("gamma", 0.02),
        prune_fractions=tuple(flat.get("prune_fractions", (0.2, 0.6, 1.0))),
        importance_views=tuple(cameras),
        reference_focal=flat.get("reference_focal", mean_focal(cameras)),
        importance_subsample=int(flat.get("importance_subsample", 4)),
        raster=_raster_config(args, flat))


def _load_inputs(args):
    scene = assets.read_splat_ply(args.scene)
    violations = validate_scene(scene)
    if violations:
        raise UserInputError(f"scene {args.scene} is malformed: " + "; ".join(violations[:5]))
    cameras = assets.read_cameras_json(args.cameras)
    if not cameras:
        raise UserInputError(f"camera file {args.cameras} holds no cameras")
    return scene, cameras


def _grid_from(args, base, cameras):
    if args.grid is not None:
        try:
            grid = [float(v) for v in args.grid.split(",") if v.strip()]
        except ValueError:
            raise UserInputError(f"bad --grid {args.grid!r}") from None
        if not grid:
            raise UserInputError("candidate grid is empty")
        if sorted(grid) != grid:
            raise UserInputError("--grid must be ascending depths")
        return grid
    return list(default_grid(base, cameras, args.grid_size))


def cmd_search_thresholds(args) -> int:
    scene, cameras = _load_inputs(args)
    flat = _flat_config(args.config)
    cfg = _lod_config(args, flat, cameras)
    base = LodLevel.base(scene)
    grid = _grid_from(args, base, cameras)
    searcher = ThresholdSearcher(base, cameras, cfg)
    accepted, trace = greedy_search(base, cameras, cfg, grid,
                                    max_levels=args.max_levels,
                                    rel_tol=args.rel_tol, searcher=searcher)
    for row in trace:
        status = "accept" if row["accepted"] else "      "
        print(f"{status}  thresholds={list(row['thresholds'])}  cost={row['cost']:.3f}")
    print("accepted:", ",".join(f"{d:.6g}" for d in accepted) if accepted else "(none)")
    if args.surface:
        surface = cost_surface(base, cameras, cfg, grid, searcher=searcher)
        Path(args.surface).write_text(cost_surface_csv(grid, surface))
        print(f"cost surface written to {args.surface}")
    return 0


def cmd_build_lod(args) -> int:
    scene, cameras = _load_inputs(args)
    flat = _flat_config(args.config)
    cfg = _lod_config(args, flat, cameras)
    base = LodLevel.base(scene)

    if args.thresholds:
        thresholds = [float(v) for v in args.thresholds.split(",")]
    else:
        grid = _grid_from(args, base, cameras)
        thresholds, _ = greedy_search(base, cameras, cfg, grid,
                                      max_levels=args.max_levels,
                                      rel_tol=args.rel_tol)
    print(f"thresholds: {thresholds}")

    levels, reports = build_levels(scene, thresholds, cfg)
    for rep in reports:
        print(json.dumps(rep))

    chunk_cfg = ChunkBuildConfig(
        d1=thresholds[0] if thresholds else float(flat.get("fallback_d1", 1e9)),
        kmeans_seed=args.seed,
        kmeans_iters=int(flat.get("kmeans_iters", 50)),
        perturb_count=int(flat.get("perturb_count", 4)),
        perturb_seed=args.seed,
        vis_threshold=float(flat.get("vis_threshold", cfg.gamma)),
        vis_filter=bool(flat.get("vis_filter", True)))
    plan, summary = build_chunk_plan(levels, cameras, chunk_cfg, cfg.raster)
    for row in summary:
        print(json.dumps(row))

    digest = config_digest({"gamma": cfg.gamma, "filter_scale": cfg.filter_scale,
                            "prune_fractions": list(cfg.prune_fractions),
                            "reference_focal": cfg.reference_focal,
                            "thresholds": thresholds, "seed": args.seed,
                            "vis_threshold": chunk_cfg.vis_threshold,
                            "perturb_count": chunk_cfg.perturb_count})
    out = assets.write_asset(
        args.out, levels, plan, sh_degree=scene.sh_degree,
        reference_focal=cfg.reference_focal, filter_scale=cfg.filter_scale,
        gamma=cfg.gamma, seeds={"kmeans": args.seed, "perturb": args.seed},
        config_hash=digest, container=args.container)
    print(f"asset written to {out} (sha256 {asset_sha256(out)[:16]})")
    return 0


def _mode_selection(asset, mode: str, position):
    levels, plan = asset.levels, asset.plan
    if mode == "full":
        sets = [np.arange(len(levels[0]), dtype=np.int64)]
        sets += [np.zeros(0, dtype=np.int64) for _ in levels[1:]]
        mods = [np.ones(len(s)) for s in sets]
        resident = len(levels[0])
        return sets, mods, resident, None
    if mode == "lod":
        sets = select_active(levels, position)
        mods = [np.ones(len(s)) for s in sets]
        resident = sum(len(lv) for lv in levels)
        return sets, mods, resident, None
    f, o = nearest_two_chunks(plan, position)
    if mode == "chunks":
        sel = compose_active(plan, levels, f, None, 1.0)
        return list(sel.sets), list(sel.modulations), plan.resident_count([f]), (f, None)
    if mode == "blend":
        if o is None:
            sel = compose_active(plan, levels, f, None, 1.0)
            return list(sel.sets), list(sel.modulations), plan.resident_count([f]), (f, None)
        _, t = blend_factor(position, plan.centers[f], plan.centers[o])
        sel = compose_active(plan, levels, f, o, t)
        return list(sel.sets), list(sel.modulations), plan.resident_count([f, o]), (f, o)
    raise UserInputError(f"unknown render mode {mode!r}")


def _render_mode(asset, mode, camera, raster_cfg, need_image=True):
    from .lod import project_selection
    from .raster import rasterize
    sets, mods, resident, pair = _mode_selection(asset, mode, camera.position)
    batch = project_selection(asset.levels, sets, camera, raster_cfg,
                              modulations=mods, shade=need_image)
    out = rasterize(batch, camera, raster_cfg, need_image=need_image)
    return out, resident, pair


def cmd_render(args) -> int:
    asset = read_asset(args.asset)
    position, quat = _parse_pose(args.pose)
    camera = _camera_for(asset, position, quat, args)
    raster_cfg = _raster_config(args, {})
    out, resident, _ = _render_mode(asset, args.mode, camera, raster_cfg)
    images.write_image(args.out, out.image)
    if args.counts:
        Path(args.counts).write_text(images.tile_counts_csv(out.per_tile_count))
    print(f"rendered {args.mode} at {args.pose} -> {args.out} "
          f"(mean per-tile {out.per_tile_count.mean():.2f}, resident {resident})")
    return 0


def cmd_bench(args) -> int:
    asset = read_asset(args.asset)
    rows = _read_trajectory(args.trajectory)
    raster_cfg = _raster_config(args, {})
    modes = args.modes.split(",")
    edges = [int(v) for v in args.histogram_bins.split(",")]

    frames = []
    events_log = []
    state = None
    for time, position, quat in rows:
        camera = _camera_for(asset, position, quat, args)
        full_out, _, _ = _render_mode(asset, "full", camera, raster_cfg)
        frame = {"time": time, "position": [float(v) for v in position], "modes": {}}
        for mode in modes:
            if mode == "full":
                out, resident, pair = full_out, len(asset.levels[0]), None
            else:
                out, resident, pair = _render_mode(asset, mode, camera, raster_cfg)
            mse = float(np.mean((out.image - full_out.image) ** 2))
            psnr = float("inf") if mse == 0 else -10.0 * np.log10(mse)
            hist = visibility_histogram(out, edges)
            frame["modes"][mode] = {
                "psnr_vs_full": psnr,
                "mean_per_tile": float(out.per_tile_count.mean()),
                "visible_gaussians": int(np.count_nonzero(out.per_gaussian_max_weight)),
                "resident_gaussians": int(resident),
                "visibility_histogram": hist.tolist(),
                "chunk_pair": list(pair) if pair else None,
            }
        if "blend" in modes:
            state, events = stream_step(state, asset.plan, position)
            for e in events:
                events_log.append({"time": time, "event": e.kind, "chunk_id": e.chunk_id})
        frames.append(frame)

    summary = {}
    for mode in modes:
        per = [f["modes"][mode] for f in frames]
        summary[mode] = {
            "psnr_vs_full_mean": float(np.mean([p["psnr_vs_full"] for p in per
                                                if np.isfinite(p["psnr_vs_full"])] or [np.inf])),
            "mean_per_tile": float(np.mean([p["mean_per_tile"] for p in per])),
            "visible_gaussians_mean": float(np.mean([p["visible_gaussians"] for p in per])),
            "resident_gaussians_mean": float(np.mean([p["resident_gaussians"] for p in per])),
            "resident_gaussians_max": int(max(p["resident_gaussians"] for p in per)),
        }
    report = {"report_version": REPORT_VERSION, "asset": str(args.asset),
              "histogram_edges": edges, "frames": frames, "summary": summary,
              "stream_events": events_log}
    Path(args.report).write_text(json.dumps(report, indent=1))

    print(f"{'mode':8s} {'PSNR':>8s} {'tile':>9s} {'#visible':>10s} {'#resident':>10s}")
    for mode in modes:
        s = summary[mode]
        print(f"{mode:8s} {s['psnr_vs_full_mean']:8.2f} {s['mean_per_tile']:9.2f} "
              f"{s['visible_gaussians_mean']:10.0f} {s['resident_gaussians_mean']:10.0f}")
    print(f"report written to {args.report}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splatlod",
                                description="LOD compiler and reference renderer "
                                            "for Gaussian splat scenes")
    sub = p.add_subparsers(dest="command", required=True)

    def common_build(sp):
        sp.add_argument("--scene", required=True, help="splat PLY file")
        sp.add_argument("--cameras", required=True, help="cameras JSON file")
        sp.add_argument("--config", help="TOML config mirroring build-config fields")
        sp.add_argument("--grid", help="explicit candidate depths, comma separated")
        sp.add_argument("--grid-size", type=int, default=16)
        sp.add_argument("--max-levels", type=int, default=4)
        sp.add_argument("--rel-tol", type=float, default=0.02)
        sp.add_argument("--gamma", type=float)
        sp.add_argument("--filter-scale", type=float)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    sp = sub.add_parser("build-lod", help="full pipeline: search, build, chunk, write")
    common_build(sp)
    sp.add_argument("--thresholds", help="skip search, use these depths (comma separated)")
    sp.add_argument("--out", required=True, help="output asset directory (or container file)")
    sp.add_argument("--container", action="store_true", help="write one container file")
    sp.set_defaults(func=cmd_build_lod)

    sp = sub.add_parser("search-thresholds", help="greedy threshold search + cost trace")
    common_build(sp)
    sp.add_argument("--surface", help="dump the 2-level cost surface CSV here")
    sp.set_defaults(func=cmd_search_thresholds)

    def common_render(sp):
        sp.add_argument("--asset", required=True)
        sp.add_argument("--resolution", default="160x128")
        sp.add_argument("--focal", type=float, default=0.0,
                        help="default: the asset's reference focal")
        sp.add_argument("--near", type=float, default=0.05)
        sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)

    sp = sub.add_parser("render", help="render one pose from a compiled asset")
    common_render(sp)
    sp.add_argument("--pose", required=True, help="px,py,pz,qw,qx,qy,qz")
    sp.add_argument("--mode", choices=["full", "lod", "chunks", "blend"], default="blend")
    sp.add_argument("--out", required=True, help="output image (.png or .ppm)")
    sp.add_argument("--counts", help="dump per-tile counts CSV here")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("bench", help="trajectory playback metrics and ablation table")
    common_render(sp)
    sp.add_argument("--trajectory", required=True, help="CSV time,px,py,pz,qw,qx,qy,qz")
    sp.add_argument("--report", required=True, help="output report JSON")
    sp.add_argument("--modes", default="full,lod,chunks,blend")
    sp.add_argument("--histogram-bins", default=",".join(map(str, DEFAULT_HIST_EDGES)))
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UserInputError, AssetError) as e:
        print(f"error [{args.command}]: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error [{args.command}]: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # internal invariant violation
        print(f"internal error [{args.command}]: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
