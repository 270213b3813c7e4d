"""Seeded synthetic scenes and camera rigs for tests, benches and demos.

``deep_street`` is the standard desk-scale fixture: a 200-unit corridor
whose walls and ground carry a coarse structural layer plus a dense layer
of fine low-contribution detail, so distance-based smoothing and pruning
have something real to remove. Cameras sit exactly on the corridor axis
(collinear by construction) looking down the corridor.
"""

from __future__ import annotations

import numpy as np

from .scene import Camera, Scene, sh_term_count


def random_rotations(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform random unit quaternions (w, x, y, z), Shoemake's method."""
    u1, u2, u3 = rng.random(n), rng.random(n), rng.random(n)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    return np.stack([a * np.sin(2 * np.pi * u2), a * np.cos(2 * np.pi * u2),
                     b * np.sin(2 * np.pi * u3), b * np.cos(2 * np.pi * u3)], axis=1)


def yaw_quaternion(angle_rad: float) -> np.ndarray:
    """Rotation about the world y axis as (w, x, y, z)."""
    return np.array([np.cos(angle_rad / 2), 0.0, np.sin(angle_rad / 2), 0.0])


def random_scene(seed: int, n: int, sh_degree: int = 1,
                 box_min=(-3.0, -3.0, 2.0), box_max=(3.0, 3.0, 12.0)) -> Scene:
    """Random well-formed scene inside a box (for oracle and property tests)."""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(box_min, float), np.asarray(box_max, float)
    means = rng.uniform(lo, hi, size=(n, 3))
    scales = np.exp(rng.uniform(np.log(0.05), np.log(0.6), size=(n, 3)))
    rotations = random_rotations(rng, n)
    opacities = rng.uniform(0.05, 0.95, size=n)
    terms = sh_term_count(sh_degree)
    sh = rng.normal(0.0, 0.35, size=(n, 3, terms))
    sh[:, :, 1:] *= 0.2
    return Scene(means, scales, rotations, opacities, sh, np.zeros(n), sh_degree)


def face_on_camera(distance: float = 8.0, resolution=(64, 64),
                   focal: float = 50.0) -> Camera:
    """Camera at the origin looking down +z; box scenes sit in front of it."""
    w, h = resolution
    return Camera(position=(0.0, 0.0, 0.0), orientation=(1.0, 0.0, 0.0, 0.0),
                  focal=(focal, focal), principal_point=(w / 2, h / 2),
                  resolution=resolution, near_plane=0.05)


def _surface_splats(rng, points, normal, tangent_scale, normal_ratio,
                    base_color, color_jitter, opacity_range):
    n = points.shape[0]
    nrm = np.asarray(normal, float)
    nrm = nrm / np.linalg.norm(nrm)
    # Quaternion rotating local +z onto the surface normal.
    zaxis = np.array([0.0, 0.0, 1.0])
    axis = np.cross(zaxis, nrm)
    s = np.linalg.norm(axis)
    if s < 1e-12:
        quat = np.array([1.0, 0.0, 0.0, 0.0]) if nrm[2] > 0 else np.array([0.0, 1.0, 0.0, 0.0])
    else:
        angle = np.arctan2(s, float(zaxis @ nrm))
        axis = axis / s
        quat = np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])
    # Log-uniform tangent sizes so smoothing at increasing depth swallows
    # successively coarser detail instead of all of it at once.
    t = np.exp(rng.uniform(np.log(tangent_scale[0]), np.log(tangent_scale[1]), size=n))
    scales = np.column_stack([t * rng.uniform(0.7, 1.3, n),
                              t * rng.uniform(0.7, 1.3, n),
                              t * normal_ratio])
    colors = np.clip(base_color[None, :] + rng.normal(0, color_jitter, size=(n, 3)), 0.02, 1.5)
    opac = rng.uniform(*opacity_range, size=n)
    quats = np.tile(quat, (n, 1))
    return points, scales, quats, opac, colors


def deep_street(seed: int = 7, n_fine: int = 18000, n_views: int = 50,
                resolution=(160, 128), focal: float = 130.0,
                length: float = 200.0) -> tuple[Scene, list[Camera]]:
    """Corridor fixture: coarse structure + fine redundant detail + cameras.

    Fine splats sit on the structural surfaces with nearly the local base
    color, so pruning them beyond the smoothing distance barely changes the
    image while cutting tile cost.
    """
    rng = np.random.default_rng(seed)
    half_w, ground_y, wall_top = 6.0, -2.0, 6.0
    parts = []

    def region_color(z):
        t = np.asarray(z) / length
        return np.stack([0.35 + 0.3 * np.sin(6.0 * t), 0.35 + 0.25 * np.cos(9.0 * t),
                         0.40 + 0.2 * np.sin(4.0 * t + 1.0)], axis=-1).clip(0.05, 0.95)

    # Structural layer: ground strip plus two walls on jittered grids.
    def grid(n_z, n_lat):
        z = np.linspace(1.0, length, n_z)
        lat = np.linspace(0.0, 1.0, n_lat)
        zz, ll = np.meshgrid(z, lat, indexing="ij")
        return zz.reshape(-1), ll.reshape(-1)

    zz, ll = grid(220, 9)
    pts = np.column_stack([-half_w + 2 * half_w * ll, np.full(zz.shape, ground_y), zz])
    pts += rng.normal(0, 0.18, pts.shape)
    parts.append((_surface_splats(rng, pts, (0, 1, 0), (0.7, 1.1), 0.25,
                                  np.array([0.38, 0.36, 0.35]), 0.06, (0.85, 0.98)), zz))
    for side in (-1.0, 1.0):
        zz, ll = grid(220, 6)
        pts = np.column_stack([np.full(zz.shape, side * half_w),
                               ground_y + (wall_top - ground_y) * ll, zz])
        pts += rng.normal(0, 0.18, pts.shape)
        sp = _surface_splats(rng, pts, (-side, 0, 0), (0.7, 1.1), 0.25,
                             np.array([0.45, 0.42, 0.4]), 0.0, (0.85, 0.98))
        sp[4][:] = region_color(zz) + rng.normal(0, 0.05, (zz.shape[0], 3))
        parts.append((sp, zz))

    # Fine detail layer: multi-scale clutter lining both sides of the street
    # (fixtures, vegetation, signage). Sizes are log-uniform over a wide
    # range so each deeper smoothing level swallows one more scale octave;
    # colors track the local structural color so pruning stays cheap.
    n_each = n_fine // 3
    for band in range(3):
        z = length * rng.random(n_each) ** 0.8
        if band == 0:
            pts = np.column_stack([rng.uniform(-5.0, 5.0, n_each),
                                   rng.uniform(ground_y + 0.05, ground_y + 0.9, n_each), z])
            base = np.tile(np.array([0.38, 0.36, 0.35]), (n_each, 1))
        else:
            side = -1.0 if band == 1 else 1.0
            pts = np.column_stack([side * rng.uniform(3.2, half_w - 0.2, n_each),
                                   rng.uniform(ground_y + 0.1, 4.5, n_each), z])
            base = region_color(z)
        sizes = np.exp(rng.uniform(np.log(0.04), np.log(0.8), n_each))
        scales = sizes[:, None] * rng.uniform(0.6, 1.4, (n_each, 3))
        sp = (pts, scales, random_rotations(rng, n_each),
              rng.uniform(0.5, 0.95, n_each),
              np.clip(base + rng.normal(0, 0.07, base.shape), 0.02, 1.2))
        parts.append((sp, z))

    # Street furniture: clustered blobs along the sides, clear of the
    # camera tube on the corridor axis.
    n_blobs = 40
    side_x = rng.uniform(2.0, 4.5, n_blobs) * rng.choice([-1.0, 1.0], n_blobs)
    centers = np.column_stack([side_x,
                               rng.uniform(-1.5, 1.0, n_blobs),
                               rng.uniform(4, length - 5, n_blobs)])
    for c in centers:
        m = 25
        pts = c[None, :] + rng.normal(0, 0.5, (m, 3))
        sp = (pts,
              np.exp(rng.uniform(np.log(0.08), np.log(0.3), (m, 3))),
              random_rotations(rng, m),
              rng.uniform(0.5, 0.95, m),
              np.clip(rng.uniform(0.1, 0.9, 3)[None, :] + rng.normal(0, 0.08, (m, 3)), 0.02, 1.2))
        parts.append((sp, pts[:, 2]))

    means = np.concatenate([p[0][0] for p in parts])
    scales = np.concatenate([p[0][1] for p in parts])
    quats = np.concatenate([p[0][2] for p in parts])
    opac = np.concatenate([p[0][3] for p in parts])
    colors = np.concatenate([p[0][4] for p in parts])

    n = means.shape[0]
    sh = np.zeros((n, 3, sh_term_count(1)))
    sh[:, :, 0] = (colors - 0.5) / 0.28209479177387814
    sh[:, :, 1:] = rng.normal(0, 0.02, (n, 3, 3))
    scene = Scene(means, scales, quats, np.clip(opac, 0.0, 1.0), sh, np.zeros(n), 1)

    # Camera rig: positions exactly on the corridor axis (collinear), with
    # alternating orientations. Even cameras look down the corridor (deep
    # views drive the LOD cost); odd ones yaw hard toward the walls so
    # mid-scale side detail is seen head-on somewhere and survives scoring.
    w, h = resolution
    cameras = []
    zs = np.linspace(2.0, 0.7 * length, n_views)
    for i, z in enumerate(zs):
        if i % 2 == 0:
            yaw = 0.12 * np.sin(0.9 * i)
        else:
            side = 1.0 if (i // 2) % 2 == 0 else -1.0
            yaw = side * (0.55 + 0.45 * ((i * 37) % 17) / 17.0)
        cameras.append(Camera(
            position=(0.0, 0.5, float(z)), orientation=yaw_quaternion(float(yaw)),
            focal=(focal, focal), principal_point=(w / 2, h / 2),
            resolution=resolution, near_plane=0.05, cam_id=f"cam{i:03d}"))
    return scene, cameras


def straight_trajectory(start: np.ndarray, end: np.ndarray, steps: int,
                        template: Camera) -> list[Camera]:
    """Cameras evenly spaced on a segment, sharing the template's intrinsics."""
    out = []
    for i, t in enumerate(np.linspace(0.0, 1.0, steps)):
        pos = (1 - t) * np.asarray(start, float) + t * np.asarray(end, float)
        out.append(Camera(pos, template.orientation, template.focal,
                          template.principal_point, template.resolution,
                          template.near_plane, cam_id=f"traj{i:04d}"))
    return out
