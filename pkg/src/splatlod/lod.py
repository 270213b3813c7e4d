"""LOD level construction: depth-aware smoothing, importance pruning,
active-set selection.

A coarser level copies every base Gaussian, adds an isotropic smoothing
variance proportional to the level's depth threshold, then runs a staged
importance prune: score with the rasterizer's max blending weight, drop
below-threshold Gaussians, repeat at increasing thresholds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .raster import RasterConfig, Splat2DBatch, project_scene, rasterize
from .scene import Camera, ImportanceScores, LodLevel, Scene
from .synthetic import random_rotations

DEFAULT_GAMMA = 0.02
DEFAULT_PRUNE_FRACTIONS = (0.2, 0.6, 1.0)


def mean_focal(cameras: Sequence[Camera]) -> float:
    """Scene reference focal: mean of the per-camera focal means."""
    if not cameras:
        raise ValueError("need at least one camera for the reference focal")
    return float(np.mean([np.mean(c.focal) for c in cameras]))


@dataclass(frozen=True)
class PerturbSpec:
    """Extra scoring views: per original view, ``count`` copies at the same
    position with orientations resampled uniformly over rotations."""

    count: int = 4
    seed: int = 0
    law: str = "uniform"

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("perturb count must be >= 0")
        if self.law != "uniform":
            raise ValueError(f"unknown perturbation law {self.law!r}")


@dataclass(frozen=True)
class LodBuildConfig:
    filter_scale: float = 1.0
    gamma: float = DEFAULT_GAMMA
    prune_fractions: tuple = DEFAULT_PRUNE_FRACTIONS
    importance_views: tuple = ()
    reference_focal: float = 0.0   # 0 means: derive from importance_views
    importance_subsample: int = 1  # score every k-th view during search proxies
    raster: RasterConfig = field(default_factory=RasterConfig)

    def __post_init__(self):
        if self.filter_scale <= 0:
            raise ValueError("filter_scale must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        fr = tuple(self.prune_fractions)
        if not fr or fr[-1] != 1.0 or any(b <= a for a, b in zip(fr, fr[1:])) or fr[0] <= 0:
            raise ValueError("prune_fractions must be strictly increasing and end at 1.0")
        if self.importance_subsample < 1:
            raise ValueError("importance_subsample must be >= 1")

    @property
    def focal(self) -> float:
        if self.reference_focal > 0:
            return self.reference_focal
        return mean_focal(list(self.importance_views))

    def scoring_views(self, subsample: bool = False) -> list[Camera]:
        views = list(self.importance_views)
        if subsample and self.importance_subsample > 1:
            views = views[::self.importance_subsample]
        return views


def apply_smoothing_filter(level0: LodLevel, depth: float, cfg: LodBuildConfig) -> LodLevel:
    """Copy the base Gaussians with filter variance s*d/f set on every one.

    Stored parameters stay untouched; the determinant opacity factor the
    filter implies is applied at projection time.
    """
    if depth <= 0:
        raise ValueError(f"smoothing depth must be > 0, got {depth}")
    variance = cfg.filter_scale * depth / cfg.focal
    scene = level0.scene.with_filter_variance(variance)
    return LodLevel(level0.level, depth, scene, level0.provenance.copy())


def score_active_selection(levels: Sequence[LodLevel], sets: Sequence[np.ndarray],
                           views: Sequence[Camera], raster_cfg: RasterConfig,
                           perturb: Optional[PerturbSpec] = None) -> list[np.ndarray]:
    """Max blending weight per selected Gaussian, rendered jointly across levels.

    Returns one score array per level, aligned with ``sets``. Perturbed views
    share positions with the originals but draw fresh orientations (seeded).
    """
    if not views:
        raise ValueError("importance scoring needs at least one view")
    all_views = list(views)
    if perturb is not None and perturb.count > 0:
        rng = np.random.default_rng(perturb.seed)
        quats = random_rotations(rng, perturb.count * len(views))
        for vi, view in enumerate(views):
            for k in range(perturb.count):
                all_views.append(view.replaced_orientation(quats[vi * perturb.count + k]))

    offsets = np.cumsum([0] + [len(s) for s in sets])
    scores = np.zeros(offsets[-1])
    for view in all_views:
        parts = [project_scene(levels[l].scene, view, raster_cfg,
                               indices=np.asarray(sets[l], dtype=np.int64), shade=False)
                 for l in range(len(levels))]
        batch = Splat2DBatch.concat(parts)
        out = rasterize(batch, view, raster_cfg, need_image=False, record_max_weight=True)
        np.maximum(scores, out.per_gaussian_max_weight, out=scores)
    return [scores[offsets[l]:offsets[l + 1]] for l in range(len(sets))]


def compute_importance(level: LodLevel, views: Sequence[Camera],
                       cfg: LodBuildConfig,
                       perturb: Optional[PerturbSpec] = None) -> ImportanceScores:
    """Per-Gaussian importance: max alpha-blend contribution over all views."""
    sets = [np.arange(len(level), dtype=np.int64)]
    scores = score_active_selection([level], sets, views, cfg.raster, perturb)[0]
    return ImportanceScores(scores, cfg.gamma)


def prune_level(level: LodLevel, scores: ImportanceScores, threshold: float) -> LodLevel:
    """Keep exactly the Gaussians scoring >= threshold, order preserved."""
    if scores.scores.shape[0] != len(level):
        raise ValueError("scores are not aligned with the level")
    keep = np.flatnonzero(scores.scores >= threshold)
    return LodLevel(level.level, level.depth_threshold,
                    level.scene.subset(keep), level.provenance[keep])


def build_level(level0: LodLevel, depth: float, cfg: LodBuildConfig,
                level_index: int = 1, *, single_round: bool = False,
                subsample_views: bool = False) -> tuple[LodLevel, dict]:
    """Filter at ``depth`` then run the staged prune schedule.

    ``single_round`` prunes once at the full threshold (the cheap proxy used
    during threshold search); the full schedule rescans importance before
    each round.
    """
    views = cfg.scoring_views(subsample=subsample_views)
    level = apply_smoothing_filter(level0, depth, cfg)
    level = LodLevel(level_index, depth, level.scene, level.provenance)
    fractions = (1.0,) if single_round else tuple(cfg.prune_fractions)
    rounds = []
    for frac in fractions:
        threshold = frac * cfg.gamma
        before = len(level)
        scores = compute_importance(level, views, cfg)
        level = prune_level(level, scores, threshold)
        rounds.append({"threshold": threshold, "before": before, "after": len(level)})
    report = {"level": level_index, "depth_threshold": depth,
              "filter_variance": cfg.filter_scale * depth / cfg.focal,
              "rounds": rounds}
    return level, report


def build_levels(base: Scene, thresholds: Sequence[float], cfg: LodBuildConfig,
                 *, single_round: bool = False,
                 subsample_views: bool = False) -> tuple[list[LodLevel], list[dict]]:
    """Base level plus one built level per threshold (ascending)."""
    ds = list(thresholds)
    if any(b <= a for a, b in zip(ds, ds[1:])) or any(d <= 0 for d in ds):
        raise ValueError(f"thresholds must be strictly increasing and > 0, got {ds}")
    levels = [LodLevel.base(base)]
    reports = [{"level": 0, "depth_threshold": 0.0, "filter_variance": 0.0,
                "rounds": [], "count": len(base)}]
    for i, d in enumerate(ds):
        lvl, rep = build_level(levels[0], d, cfg, level_index=i + 1,
                               single_round=single_round,
                               subsample_views=subsample_views)
        levels.append(lvl)
        reports.append(rep)
    return levels, reports


def _check_levels_sorted(levels: Sequence[LodLevel]) -> None:
    ds = [lv.depth_threshold for lv in levels]
    if any(b <= a for a, b in zip(ds, ds[1:])):
        raise ValueError(f"levels must have strictly increasing depth thresholds, got {ds}")


def select_active(levels: Sequence[LodLevel], query_point: np.ndarray,
                  depth_offsets: Optional[Sequence[float]] = None) -> list[np.ndarray]:
    """Index sets of Gaussians active per level around a query point.

    Level l covers the half-open distance band
    [d_l + off_l, d_{l+1} + off_{l+1}); the level-0 lower bound is pinned at
    0 and the last band extends to infinity, so the bands tile [0, inf).
    """
    _check_levels_sorted(levels)
    n = len(levels)
    offs = np.zeros(n) if depth_offsets is None else np.asarray(depth_offsets, float)
    if offs.shape[0] != n:
        raise ValueError("need one depth offset per level")
    q = np.asarray(query_point, float)
    bounds = [0.0] + [levels[l].depth_threshold + offs[l] for l in range(1, n)] + [np.inf]
    sets = []
    for l in range(n):
        dist = np.linalg.norm(levels[l].scene.means - q, axis=1)
        sets.append(np.flatnonzero((dist >= bounds[l]) & (dist < bounds[l + 1])))
    return sets


def project_selection(levels: Sequence[LodLevel], sets: Sequence[np.ndarray],
                      camera: Camera, raster_cfg: RasterConfig,
                      modulations: Optional[Sequence[np.ndarray]] = None,
                      shade: bool = True) -> Splat2DBatch:
    """Project per-level index sets into one splat batch (level-major order)."""
    parts = []
    for l in range(len(levels)):
        mod = None if modulations is None else np.asarray(modulations[l], float)
        parts.append(project_scene(levels[l].scene, camera, raster_cfg,
                                   indices=np.asarray(sets[l], dtype=np.int64),
                                   modulation=mod, shade=shade))
    return Splat2DBatch.concat(parts)


def render_lod(levels: Sequence[LodLevel], camera: Camera,
               raster_cfg: RasterConfig = RasterConfig(),
               depth_offsets: Optional[Sequence[float]] = None,
               need_image: bool = True):
    """Select active Gaussians at the camera position and rasterize them."""
    sets = select_active(levels, camera.position, depth_offsets)
    batch = project_selection(levels, sets, camera, raster_cfg, shade=need_image)
    return rasterize(batch, camera, raster_cfg, need_image=need_image)
