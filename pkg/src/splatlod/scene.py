"""Core domain types shared by every pipeline stage.

Gaussian primitives are stored struct-of-arrays inside a ``Scene`` so the
rasterizer and the builders can stay vectorized; a lightweight ``Gaussian``
dataclass view exists for single-primitive construction and inspection.
Covariance is kept factored (scale + rotation) with the isotropic smoothing
term stored separately per Gaussian, so the base level stays lossless and
the additive filter structure is explicit.

All types are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

QUAT_NORM_TOL = 1e-6


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix for unit quaternion(s) in (w, x, y, z) order.

    Accepts shape (4,) or (N, 4); returns (3, 3) or (N, 3, 3).
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m[0] if single else m


def sh_term_count(degree: int) -> int:
    return (degree + 1) ** 2


@dataclass(frozen=True)
class Gaussian:
    """One splat primitive.

    ``filter_variance`` is the isotropic 3D smoothing term added to the
    covariance (0 for the base level); the opacity rescale it implies is
    applied at projection time, never baked into ``opacity``.
    """

    mean: np.ndarray            # (3,) world units
    scale: np.ndarray           # (3,) positive standard deviations
    rotation: np.ndarray        # (4,) unit quaternion, (w, x, y, z)
    opacity: float              # in [0, 1]
    sh_coeffs: np.ndarray       # (3, (degree+1)**2)
    filter_variance: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "sh_coeffs", np.asarray(self.sh_coeffs, dtype=np.float64))


def effective_covariance(g: Gaussian) -> np.ndarray:
    """R diag(scale^2) R^T + filter_variance * I, symmetric positive definite."""
    r = quat_to_matrix(g.rotation)
    cov = (r * np.square(g.scale)[None, :]) @ r.T
    cov = cov + g.filter_variance * np.eye(3)
    return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; ``orientation`` rotates world vectors into camera space.

    A world point p maps to camera space as R(orientation) @ (p - position).
    """

    position: np.ndarray        # (3,) world units
    orientation: np.ndarray     # (4,) unit quaternion (w, x, y, z), world-to-camera
    focal: np.ndarray           # (2,) pixels, (fx, fy)
    principal_point: np.ndarray  # (2,) pixels, (cx, cy)
    resolution: tuple[int, int]  # (width, height), pixels
    near_plane: float = 0.01
    cam_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "orientation", np.asarray(self.orientation, dtype=np.float64))
        object.__setattr__(self, "focal", np.asarray(self.focal, dtype=np.float64))
        object.__setattr__(self, "principal_point", np.asarray(self.principal_point, dtype=np.float64))
        object.__setattr__(self, "resolution", (int(self.resolution[0]), int(self.resolution[1])))
        if not np.all(self.focal > 0):
            raise ValueError(f"camera {self.cam_id!r}: focal must be positive, got {self.focal}")
        if self.resolution[0] <= 0 or self.resolution[1] <= 0:
            raise ValueError(f"camera {self.cam_id!r}: resolution must be positive, got {self.resolution}")
        if self.near_plane <= 0:
            raise ValueError(f"camera {self.cam_id!r}: near_plane must be positive, got {self.near_plane}")
        n = float(np.linalg.norm(self.orientation))
        if abs(n - 1.0) > 1e-3:
            raise ValueError(f"camera {self.cam_id!r}: orientation quaternion norm {n} is not 1")
        object.__setattr__(self, "orientation", self.orientation / n)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.position) @ self.rotation_matrix.T

    def replaced_orientation(self, quat: np.ndarray) -> "Camera":
        return Camera(self.position, quat, self.focal, self.principal_point,
                      self.resolution, self.near_plane, self.cam_id)


@dataclass(frozen=True)
class Scene:
    """An ordered, index-addressable set of Gaussians (struct-of-arrays).

    List order is stable: every downstream active set is an index set into
    these arrays.
    """

    means: np.ndarray            # (N, 3)
    scales: np.ndarray           # (N, 3)
    rotations: np.ndarray        # (N, 4), ideally unit (w, x, y, z)
    opacities: np.ndarray        # (N,)
    sh_coeffs: np.ndarray        # (N, 3, terms)
    filter_variance: np.ndarray  # (N,)
    sh_degree: int
    up_axis_hint: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "means", np.ascontiguousarray(self.means, dtype=np.float64))
        object.__setattr__(self, "scales", np.ascontiguousarray(self.scales, dtype=np.float64))
        object.__setattr__(self, "rotations", np.ascontiguousarray(self.rotations, dtype=np.float64))
        object.__setattr__(self, "opacities", np.ascontiguousarray(self.opacities, dtype=np.float64))
        object.__setattr__(self, "sh_coeffs", np.ascontiguousarray(self.sh_coeffs, dtype=np.float64))
        object.__setattr__(self, "filter_variance", np.ascontiguousarray(self.filter_variance, dtype=np.float64))
        n = self.means.shape[0]
        terms = sh_term_count(self.sh_degree)
        if self.sh_coeffs.shape != (n, 3, terms):
            raise ValueError(
                f"sh_coeffs shape {self.sh_coeffs.shape} does not match "
                f"{n} gaussians at degree {self.sh_degree} (expected {(n, 3, terms)})")
        for name in ("scales", "rotations", "opacities", "filter_variance"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} length {getattr(self, name).shape[0]} != {n} gaussians")

    def __len__(self) -> int:
        return self.means.shape[0]

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(self.means[i], self.scales[i], self.rotations[i],
                        float(self.opacities[i]), self.sh_coeffs[i],
                        float(self.filter_variance[i]))

    def subset(self, indices: np.ndarray) -> "Scene":
        idx = np.asarray(indices, dtype=np.int64)
        return Scene(self.means[idx], self.scales[idx], self.rotations[idx],
                     self.opacities[idx], self.sh_coeffs[idx],
                     self.filter_variance[idx], self.sh_degree, self.up_axis_hint)

    def with_filter_variance(self, variance: float) -> "Scene":
        fv = np.full(len(self), float(variance))
        return Scene(self.means, self.scales, self.rotations, self.opacities,
                     self.sh_coeffs, fv, self.sh_degree, self.up_axis_hint)

    @staticmethod
    def from_gaussians(gaussians: Sequence[Gaussian], sh_degree: int,
                       up_axis_hint: Optional[np.ndarray] = None) -> "Scene":
        if len(gaussians) == 0:
            return Scene.empty(sh_degree)
        return Scene(
            np.stack([g.mean for g in gaussians]),
            np.stack([g.scale for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.array([g.opacity for g in gaussians], dtype=np.float64),
            np.stack([g.sh_coeffs for g in gaussians]),
            np.array([g.filter_variance for g in gaussians], dtype=np.float64),
            sh_degree, up_axis_hint)

    @staticmethod
    def empty(sh_degree: int) -> "Scene":
        terms = sh_term_count(sh_degree)
        return Scene(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 4)),
                     np.zeros(0), np.zeros((0, 3, terms)), np.zeros(0), sh_degree)


@dataclass(frozen=True)
class LodLevel:
    """One detail level: a depth threshold plus the Gaussians valid beyond it.

    Level 0 has ``depth_threshold`` 0 and aliases the base scene; coarser
    levels own filtered copies. ``provenance[i]`` is the level-0 index of
    Gaussian i's ancestor.
    """

    level: int
    depth_threshold: float
    scene: Scene
    provenance: np.ndarray  # (N,) int64 indices into level 0

    def __post_init__(self):
        object.__setattr__(self, "provenance", np.ascontiguousarray(self.provenance, dtype=np.int64))
        if self.level < 0:
            raise ValueError(f"level must be >= 0, got {self.level}")
        if self.depth_threshold < 0:
            raise ValueError(f"depth_threshold must be >= 0, got {self.depth_threshold}")
        if self.provenance.shape[0] != len(self.scene):
            raise ValueError("provenance length does not match scene size")

    def __len__(self) -> int:
        return len(self.scene)

    @staticmethod
    def base(scene: Scene) -> "LodLevel":
        return LodLevel(0, 0.0, scene, np.arange(len(scene), dtype=np.int64))


@dataclass(frozen=True)
class ChunkPlan:
    """Camera-cluster chunks with precomputed per-level active index sets.

    ``active_sets[j][l]`` is a sorted, duplicate-free int64 index array into
    level l's Gaussian list, valid when rendering from inside chunk j.
    """

    centers: np.ndarray   # (K, 3)
    radii: np.ndarray     # (K,)
    active_sets: tuple    # K-tuple of L-tuples of int64 arrays
    source_camera_assignment: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        object.__setattr__(self, "centers", np.ascontiguousarray(self.centers, dtype=np.float64))
        object.__setattr__(self, "radii", np.ascontiguousarray(self.radii, dtype=np.float64))
        object.__setattr__(self, "active_sets",
                           tuple(tuple(np.ascontiguousarray(s, dtype=np.int64) for s in per_chunk)
                                 for per_chunk in self.active_sets))
        object.__setattr__(self, "source_camera_assignment",
                           np.ascontiguousarray(self.source_camera_assignment, dtype=np.int64))
        k = self.centers.shape[0]
        if k < 1:
            raise ValueError("a chunk plan needs at least one chunk")
        if self.radii.shape[0] != k or len(self.active_sets) != k:
            raise ValueError("centers, radii and active_sets must have equal length")
        if not np.all(self.radii >= 0):
            raise ValueError("chunk radii must be non-negative")

    @property
    def n_chunks(self) -> int:
        return self.centers.shape[0]

    @property
    def n_levels(self) -> int:
        return len(self.active_sets[0])

    def resident_count(self, chunk_ids: Sequence[int]) -> int:
        """Unique Gaussians loaded for the given chunks (memory proxy)."""
        total = 0
        for lvl in range(self.n_levels):
            sets = [self.active_sets[j][lvl] for j in chunk_ids]
            total += np.union1d(*sets).size if len(sets) > 1 else sets[0].size
        return total


@dataclass(frozen=True)
class ImportanceScores:
    """Per-Gaussian max alpha-blend contribution over all scored views."""

    scores: np.ndarray      # (N,) in [0, 1]
    threshold_base: float   # prune threshold scale, > 0

    def __post_init__(self):
        object.__setattr__(self, "scores", np.ascontiguousarray(self.scores, dtype=np.float64))
        if self.threshold_base <= 0:
            raise ValueError(f"threshold_base must be > 0, got {self.threshold_base}")


def validate_scene(scene: Scene) -> list[str]:
    """Check every per-Gaussian invariant; returns one report per violation.

    Returns an empty list iff the scene is well-formed. Reports name the
    offending gaussian index and invariant rather than raising, so callers
    can aggregate.
    """
    reports: list[str] = []
    finite = (np.isfinite(scene.means).all(axis=1)
              & np.isfinite(scene.scales).all(axis=1)
              & np.isfinite(scene.rotations).all(axis=1)
              & np.isfinite(scene.opacities)
              & np.isfinite(scene.sh_coeffs).all(axis=(1, 2))
              & np.isfinite(scene.filter_variance))
    for i in np.flatnonzero(~finite):
        reports.append(f"gaussian {i}: non-finite field")
    bad_scale = ~np.all(scene.scales > 0, axis=1)
    for i in np.flatnonzero(bad_scale & finite):
        reports.append(f"gaussian {i}: scale components must be > 0, got {scene.scales[i]}")
    norms = np.linalg.norm(scene.rotations, axis=1)
    bad_rot = np.abs(norms - 1.0) > QUAT_NORM_TOL
    for i in np.flatnonzero(bad_rot & finite):
        reports.append(f"gaussian {i}: rotation norm {norms[i]:.6g} violates unit-quaternion invariant")
    bad_op = (scene.opacities < 0) | (scene.opacities > 1)
    for i in np.flatnonzero(bad_op & finite):
        reports.append(f"gaussian {i}: opacity {scene.opacities[i]:.6g} outside [0, 1]")
    bad_fv = scene.filter_variance < 0
    for i in np.flatnonzero(bad_fv & finite):
        reports.append(f"gaussian {i}: filter_variance {scene.filter_variance[i]:.6g} must be >= 0")
    return reports
