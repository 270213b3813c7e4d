"""Chunk planning: K-means over training-camera positions, radius-offset
active sets, and per-chunk visibility filtering.

A chunk's active sets cover the whole scene (not just its spatial cell):
nearby bands come from fine levels, far bands from coarse ones, with every
band boundary pushed out by the chunk radius so any camera inside the chunk
still sees sufficient detail.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .lod import PerturbSpec, score_active_selection, select_active
from .raster import RasterConfig
from .scene import Camera, ChunkPlan, LodLevel

DEFAULT_VIS_THRESHOLD = 0.02


@dataclass(frozen=True)
class ChunkBuildConfig:
    d1: float                      # first LOD depth threshold, drives cluster count
    kmeans_seed: int = 0
    kmeans_iters: int = 50
    perturb_count: int = 4
    perturb_seed: int = 0
    perturb_law: str = "uniform"
    vis_threshold: float = DEFAULT_VIS_THRESHOLD
    vis_filter: bool = True

    def __post_init__(self):
        if self.d1 <= 0:
            raise ValueError("d1 must be > 0")
        if self.perturb_count < 0:
            raise ValueError("perturb_count must be >= 0")


def n_clusters(cameras: Sequence[Camera], d1: float) -> int:
    """ceil((4 / d1) * max distance to the mean camera), clamped to [1, N]."""
    if not cameras:
        raise ValueError("need at least one camera")
    if d1 <= 0:
        raise ValueError("d1 must be > 0")
    positions = np.stack([c.position for c in cameras])
    centroid = positions.mean(axis=0)
    max_dist = float(np.linalg.norm(positions - centroid, axis=1).max())
    raw = int(np.ceil((4.0 / d1) * max_dist))
    return int(np.clip(raw, 1, len(cameras)))


def kmeans_positions(positions: np.ndarray, k: int, seed: int,
                     iters: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations with k-means++ seeding; deterministic for a fixed seed.

    Empty clusters are re-seeded from the point farthest from its assigned
    center. Converges when assignments stop changing or ``iters`` is hit.
    """
    pts = np.asarray(positions, dtype=np.float64)
    n = pts.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds the number of positions ({n})")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)

    centers = np.empty((k, 3))
    centers[0] = pts[rng.integers(n)]
    d2 = np.sum((pts - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = pts[rng.integers(n)]
        else:
            centers[j] = pts[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((pts - centers[j]) ** 2, axis=1))

    def assign_to(cs):
        return np.argmin(np.linalg.norm(pts[:, None, :] - cs[None, :, :], axis=2), axis=1)

    assignment = assign_to(centers)
    for _ in range(iters):
        for j in range(k):
            members = pts[assignment == j]
            if members.shape[0] == 0:
                dist_own = np.linalg.norm(pts - centers[assignment], axis=1)
                centers[j] = pts[np.argmax(dist_own)]
            else:
                centers[j] = members.mean(axis=0)
        new_assignment = assign_to(centers)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
    return centers, assignment


def chunk_radii(centers: np.ndarray, camera_positions: np.ndarray) -> np.ndarray:
    """Per chunk, the distance to the next closest chunk center.

    A single-chunk plan has no neighbor; its radius falls back to the
    farthest camera-to-center distance.
    """
    cs = np.asarray(centers, dtype=np.float64)
    k = cs.shape[0]
    if k == 1:
        r = float(np.linalg.norm(np.asarray(camera_positions, float) - cs[0], axis=1).max())
        if r <= 0:
            r = 1.0  # all cameras on the center; any positive radius works
        return np.array([r])
    d = np.linalg.norm(cs[:, None, :] - cs[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    radii = d.min(axis=1)
    if not np.all(radii > 0):
        raise ValueError("duplicate chunk centers produce zero radii")
    return radii


def build_chunk_active_sets(levels: Sequence[LodLevel], centers: np.ndarray,
                            radii: np.ndarray,
                            camera_assignment: Optional[np.ndarray] = None) -> ChunkPlan:
    """Active sets per chunk: the distance-band selection at the chunk center
    with every boundary above level 0 offset by the chunk radius."""
    centers = np.asarray(centers, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    sets = []
    for j in range(centers.shape[0]):
        offsets = [0.0] + [float(radii[j])] * (len(levels) - 1)
        sets.append(tuple(select_active(levels, centers[j], offsets)))
    assignment = (np.zeros(0, dtype=np.int64) if camera_assignment is None
                  else np.asarray(camera_assignment, dtype=np.int64))
    return ChunkPlan(centers, radii, tuple(sets), assignment)


def visibility_filter_chunk(plan: ChunkPlan, chunk_id: int,
                            levels: Sequence[LodLevel],
                            cameras_in_chunk: Sequence[Camera],
                            cfg: ChunkBuildConfig,
                            raster_cfg: RasterConfig = RasterConfig()) -> tuple:
    """Importance-prune one chunk's active sets under its own cameras plus
    orientation-perturbed copies; returns the reduced per-level sets."""
    sets = plan.active_sets[chunk_id]
    if not cameras_in_chunk:
        warnings.warn(f"chunk {chunk_id} has no assigned cameras; skipping "
                      "visibility filtering", stacklevel=2)
        return sets
    perturb = PerturbSpec(count=cfg.perturb_count,
                          seed=cfg.perturb_seed + chunk_id,
                          law=cfg.perturb_law)
    scores = score_active_selection(levels, sets, list(cameras_in_chunk),
                                    raster_cfg, perturb)
    return tuple(np.asarray(s)[sc >= cfg.vis_threshold]
                 for s, sc in zip(sets, scores))


def build_chunk_plan(levels: Sequence[LodLevel], cameras: Sequence[Camera],
                     cfg: ChunkBuildConfig,
                     raster_cfg: RasterConfig = RasterConfig()
                     ) -> tuple[ChunkPlan, list[dict]]:
    """Full chunking stage: cluster cameras, compute radius-offset active
    sets, then visibility-filter each chunk. Returns the plan plus one
    summary row per chunk."""
    positions = np.stack([c.position for c in cameras])
    k = n_clusters(cameras, cfg.d1)
    centers, assignment = kmeans_positions(positions, k, cfg.kmeans_seed, cfg.kmeans_iters)
    radii = chunk_radii(centers, positions)
    plan = build_chunk_active_sets(levels, centers, radii, assignment)

    summary = []
    if cfg.vis_filter:
        filtered = []
        for j in range(plan.n_chunks):
            cams_j = [cameras[i] for i in np.flatnonzero(assignment == j)]
            before = [len(s) for s in plan.active_sets[j]]
            new_sets = visibility_filter_chunk(plan, j, levels, cams_j, cfg, raster_cfg)
            filtered.append(new_sets)
            summary.append({"chunk": j, "center": centers[j].tolist(),
                            "radius": float(radii[j]), "cameras": len(cams_j),
                            "set_sizes_before": before,
                            "set_sizes_after": [len(s) for s in new_sets]})
        plan = ChunkPlan(centers, radii, tuple(filtered), assignment)
    else:
        for j in range(plan.n_chunks):
            sizes = [len(s) for s in plan.active_sets[j]]
            summary.append({"chunk": j, "center": centers[j].tolist(),
                            "radius": float(radii[j]),
                            "cameras": int(np.sum(assignment == j)),
                            "set_sizes_before": sizes, "set_sizes_after": sizes})
    return plan, summary
