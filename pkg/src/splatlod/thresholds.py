"""Depth-threshold selection: tile-cost objective and greedy 1-D search.

Cost of a threshold set is the mean number of splats binned per 16x16 tile
across the evaluation views, rendered with the provisional levels (filter
plus a single prune round) those thresholds imply. Binned counts are what
the per-tile threads of a splat renderer actually process, so they proxy
render time without shading anything.

Because active bands partition distance, per-view cost decomposes into
band sums over per-level distance-sorted prefix tables; the searcher
memoizes those per (view, threshold), making the greedy scan and the
exhaustive surface cheap after the provisional builds.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .lod import LodBuildConfig, build_level
from .raster import project_scene, tile_cover_counts, TILE_SIZE
from .scene import Camera, LodLevel


@dataclass(frozen=True)
class CostEvaluation:
    thresholds: tuple
    mean_gaussians_per_tile: float
    per_view_cost: tuple
    views_used: tuple
    build_cost_proxy: int  # total Gaussians across levels (reported, not optimized)

    def __post_init__(self):
        ds = self.thresholds
        if any(b <= a for a, b in zip(ds, ds[1:])):
            raise ValueError(f"thresholds must be strictly increasing, got {ds}")


def default_grid(base: LodLevel, views: Sequence[Camera], n: int = 16) -> np.ndarray:
    """Log-spaced candidate depths between the 5th and 95th percentile of
    Gaussian-to-camera distances."""
    positions = np.stack([v.position for v in views])
    d = np.linalg.norm(base.scene.means[:, None, :] - positions[None, :, :], axis=2)
    lo, hi = np.percentile(d, [5.0, 95.0])
    lo = max(lo, 1e-3)
    return np.geomspace(lo, hi, n)


class ThresholdSearcher:
    """Memoizing cost evaluator over one base level, view set and config."""

    def __init__(self, base: LodLevel, views: Sequence[Camera], cfg: LodBuildConfig,
                 subsample_views: bool = True):
        if not views:
            raise ValueError("cost evaluation needs at least one view")
        self.base = base
        self.views = list(views)
        self.cfg = cfg
        self.subsample_views = subsample_views
        self._levels: dict[float, LodLevel] = {0.0: base}
        self._tables: dict[tuple[float, int], tuple[np.ndarray, np.ndarray]] = {}
        self._tiles_per_view = [
            (-(-v.resolution[0] // TILE_SIZE)) * (-(-v.resolution[1] // TILE_SIZE))
            for v in self.views]

    def provisional_level(self, depth: float) -> LodLevel:
        """Filter + single prune round at gamma (cheap proxy for the schedule)."""
        d = float(depth)
        if d not in self._levels:
            level, _ = build_level(self.base, d, self.cfg, single_round=True,
                                   subsample_views=self.subsample_views)
            self._levels[d] = level
        return self._levels[d]

    def _table(self, depth: float, view_idx: int):
        """Distance-sorted prefix sums of per-splat tile coverage."""
        key = (float(depth), view_idx)
        if key not in self._tables:
            level = self.provisional_level(depth)
            view = self.views[view_idx]
            batch = project_scene(level.scene, view, self.cfg.raster, shade=False)
            cover = tile_cover_counts(batch, view)
            dist = np.linalg.norm(level.scene.means[batch.source_index] - view.position, axis=1)
            order = np.argsort(dist, kind="stable")
            prefix = np.concatenate([[0], np.cumsum(cover[order])])
            self._tables[key] = (dist[order], prefix)
        return self._tables[key]

    def _band_count(self, depth: float, view_idx: int, lo: float, hi: float) -> int:
        dist, prefix = self._table(depth, view_idx)
        i0 = np.searchsorted(dist, lo, side="left")
        i1 = dist.shape[0] if hi == np.inf else np.searchsorted(dist, hi, side="left")
        return int(prefix[i1] - prefix[i0])

    def evaluate(self, thresholds: Sequence[float]) -> CostEvaluation:
        ds = [float(d) for d in thresholds]
        if any(d <= 0 for d in ds) or any(b <= a for a, b in zip(ds, ds[1:])):
            raise ValueError(f"thresholds must be strictly increasing and > 0, got {ds}")
        bounds = [0.0] + ds + [np.inf]
        depths = [0.0] + ds
        per_view = []
        for vi in range(len(self.views)):
            binned = sum(self._band_count(depths[l], vi, bounds[l], bounds[l + 1])
                         for l in range(len(depths)))
            per_view.append(binned / self._tiles_per_view[vi])
        build_proxy = sum(len(self.provisional_level(d)) for d in depths)
        return CostEvaluation(tuple(ds), float(np.mean(per_view)), tuple(per_view),
                              tuple(v.cam_id or str(i) for i, v in enumerate(self.views)),
                              build_proxy)


def evaluate_cost(base: LodLevel, thresholds: Sequence[float],
                  views: Sequence[Camera], cfg: LodBuildConfig,
                  searcher: Optional[ThresholdSearcher] = None) -> CostEvaluation:
    """Mean per-tile binned count under the given depth thresholds."""
    if searcher is None:
        searcher = ThresholdSearcher(base, views, cfg)
    return searcher.evaluate(thresholds)


def greedy_search(base: LodLevel, views: Sequence[Camera], cfg: LodBuildConfig,
                  grid: Sequence[float], max_levels: int, rel_tol: float = 0.02,
                  searcher: Optional[ThresholdSearcher] = None
                  ) -> tuple[list[float], list[dict]]:
    """Add thresholds one at a time, each minimizing cost given the previous.

    Iteration k scans the grid above the last accepted threshold; the best
    candidate is accepted while it improves the running cost by at least
    ``rel_tol`` (relative). Returns (accepted thresholds, trace rows).
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("candidate grid is empty")
    if sorted(grid) != grid:
        raise ValueError("candidate grid must be sorted ascending")
    if max_levels < 1:
        raise ValueError("max_levels must be >= 1")
    if searcher is None:
        searcher = ThresholdSearcher(base, views, cfg)

    accepted: list[float] = []
    current = searcher.evaluate(accepted).mean_gaussians_per_tile
    trace: list[dict] = [{"thresholds": (), "cost": current, "accepted": True}]
    while len(accepted) < max_levels:
        floor = accepted[-1] if accepted else 0.0
        candidates = [g for g in grid if g > floor]
        if not candidates:
            break
        best_d, best_cost = None, np.inf
        for g in candidates:
            cost = searcher.evaluate(accepted + [g]).mean_gaussians_per_tile
            trace.append({"thresholds": tuple(accepted + [g]), "cost": cost,
                          "accepted": False})
            if cost < best_cost:
                best_d, best_cost = g, cost
        improvement = (current - best_cost) / current if current > 0 else 0.0
        if best_cost >= current or improvement < rel_tol:
            break
        accepted.append(best_d)
        current = best_cost
        trace.append({"thresholds": tuple(accepted), "cost": best_cost,
                      "accepted": True})
    return accepted, trace


def cost_surface(base: LodLevel, views: Sequence[Camera], cfg: LodBuildConfig,
                 grid: Sequence[float],
                 searcher: Optional[ThresholdSearcher] = None) -> np.ndarray:
    """Cost at every (d1, d2) grid pair with d1 < d2; NaN marks invalid pairs."""
    grid = [float(g) for g in grid]
    if searcher is None:
        searcher = ThresholdSearcher(base, views, cfg)
    n = len(grid)
    surface = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(n):
            if grid[i] < grid[j]:
                surface[i, j] = searcher.evaluate([grid[i], grid[j]]).mean_gaussians_per_tile
    return surface


def cost_surface_csv(grid: Sequence[float], surface: np.ndarray) -> str:
    """CSV dump (d1,d2,cost) of a cost surface, NaN pairs skipped."""
    lines = ["d1,d2,cost"]
    for i, d1 in enumerate(grid):
        for j, d2 in enumerate(grid):
            if np.isfinite(surface[i, j]):
                lines.append(f"{d1:.9g},{d2:.9g},{surface[i, j]:.9g}")
    return "\n".join(lines) + "\n"
