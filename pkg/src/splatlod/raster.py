"""CPU tile-based forward rasterizer for Gaussian splats.

Splats are projected with the EWA construction (perspective Jacobian at the
mean), binned to every overlapping 16x16 tile, globally depth-sorted, and
alpha-composited front to back. Besides the image, the rasterizer reports
the cost signals the LOD pipeline optimizes: per-tile binned counts,
per-pixel visible counts, and per-Gaussian max blending weights (the
importance oracle).

Splat support is finite: alpha is zero outside the 3-sigma ellipse. Binning
covers the ellipse's axis-aligned bounding box, so tiled and untiled
compositing of the same splat list agree exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .scene import Camera, Gaussian, Scene, quat_to_matrix, sh_term_count

TILE_SIZE = 16
SUPPORT_SIGMA = 3.0
SUPPORT_Q = SUPPORT_SIGMA ** 2 * 2.0 * 0.5  # quadratic-form cutoff, q <= 9

# Real spherical-harmonic basis constants, bands 0..3.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)


@dataclass(frozen=True)
class RasterConfig:
    """Rasterizer knobs, recorded in render metadata.

    ``dilation2d`` is the 2D anti-alias filter variance in px^2 (opacity is
    compensated by the determinant ratio); 0 reproduces plain splatting.
    """

    alpha_clamp: float = 0.99
    alpha_min: float = 1.0 / 255.0
    t_min: float = 1e-4
    dilation2d: float = 0.1
    threads: int = 1

    def metadata(self) -> dict:
        return {"alpha_clamp": self.alpha_clamp, "alpha_min": self.alpha_min,
                "t_min": self.t_min, "dilation2d": self.dilation2d,
                "tile_size": TILE_SIZE, "support_sigma": SUPPORT_SIGMA}


@dataclass(frozen=True)
class Splat2D:
    """One projected splat: 2D mean/covariance plus shading inputs."""

    mean2d: np.ndarray       # (2,) pixels
    cov2d: np.ndarray        # (2, 2) pixels^2, after 2D dilation
    depth: float             # camera-space z
    opacity_eff: float       # opacity x filter factor x dilation factor x modulation
    color: np.ndarray        # (3,) linear RGB, >= 0
    source_index: int


@dataclass(frozen=True)
class Splat2DBatch:
    """Projected splats for one camera, culled entries removed.

    ``source_index`` maps each surviving splat back to its position in the
    input list (length ``n_inputs``); per-Gaussian outputs are reported for
    every input, with zeros for culled ones.
    """

    n_inputs: int
    source_index: np.ndarray  # (M,)
    mean2d: np.ndarray        # (M, 2)
    cov2d: np.ndarray         # (M, 2, 2)
    conic: np.ndarray         # (M, 3) packed inverse covariance (A, B, C)
    extent: np.ndarray        # (M, 2) 3-sigma AABB half widths, pixels
    depth: np.ndarray         # (M,)
    opacity_eff: np.ndarray   # (M,)
    color: np.ndarray         # (M, 3)

    def __len__(self) -> int:
        return self.source_index.shape[0]

    def splat(self, i: int) -> Splat2D:
        return Splat2D(self.mean2d[i], self.cov2d[i], float(self.depth[i]),
                       float(self.opacity_eff[i]), self.color[i],
                       int(self.source_index[i]))

    @staticmethod
    def concat(parts: Sequence["Splat2DBatch"]) -> "Splat2DBatch":
        """Concatenate batches; source indices shift by each part's n_inputs."""
        if not parts:
            return _empty_batch(0)
        offset = 0
        srcs = []
        for p in parts:
            srcs.append(p.source_index + offset)
            offset += p.n_inputs
        return Splat2DBatch(
            offset, np.concatenate(srcs),
            np.concatenate([p.mean2d for p in parts]),
            np.concatenate([p.cov2d for p in parts]),
            np.concatenate([p.conic for p in parts]),
            np.concatenate([p.extent for p in parts]),
            np.concatenate([p.depth for p in parts]),
            np.concatenate([p.opacity_eff for p in parts]),
            np.concatenate([p.color for p in parts]))


@dataclass(frozen=True)
class TileRenderOutput:
    """Rendered image plus the cost counters used throughout the pipeline."""

    image: Optional[np.ndarray]          # (H, W, 3) linear RGB in [0, 1]
    per_tile_count: np.ndarray           # (tiles_y, tiles_x) splats binned per tile
    per_pixel_visible: np.ndarray        # (H, W) splats with alpha >= alpha_min
    per_gaussian_max_weight: Optional[np.ndarray]  # (n_inputs,) max T*alpha
    metadata: dict


def _empty_batch(n_inputs: int) -> Splat2DBatch:
    z = np.zeros
    return Splat2DBatch(n_inputs, z(0, dtype=np.int64), z((0, 2)), z((0, 2, 2)),
                        z((0, 3)), z((0, 2)), z(0), z(0), z((0, 3)))


def eval_sh(coeffs: np.ndarray, directions: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate view-dependent color: 0.5 + sum_k basis_k(dir) coeff_k, clamped >= 0.

    coeffs: (..., 3, (degree+1)^2); directions: (..., 3) unit vectors.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    if not 0 <= degree <= 3:
        raise ValueError(f"sh degree must be in 0..3, got {degree}")
    terms = sh_term_count(degree)
    if coeffs.shape[-1] != terms:
        raise ValueError(f"expected {terms} sh terms for degree {degree}, got {coeffs.shape[-1]}")
    out = SH_C0 * coeffs[..., 0]
    if degree >= 1:
        xs, ys, zs = directions[..., 0], directions[..., 1], directions[..., 2]
        out = (out
               - SH_C1 * ys[..., None] * coeffs[..., 1]
               + SH_C1 * zs[..., None] * coeffs[..., 2]
               - SH_C1 * xs[..., None] * coeffs[..., 3])
        if degree >= 2:
            xx, yy, zz = xs * xs, ys * ys, zs * zs
            xy, yz, xz = xs * ys, ys * zs, xs * zs
            out = (out
                   + SH_C2[0] * xy[..., None] * coeffs[..., 4]
                   + SH_C2[1] * yz[..., None] * coeffs[..., 5]
                   + SH_C2[2] * (2 * zz - xx - yy)[..., None] * coeffs[..., 6]
                   + SH_C2[3] * xz[..., None] * coeffs[..., 7]
                   + SH_C2[4] * (xx - yy)[..., None] * coeffs[..., 8])
        if degree >= 3:
            out = (out
                   + SH_C3[0] * (ys * (3 * xx - yy))[..., None] * coeffs[..., 9]
                   + SH_C3[1] * (xy * zs)[..., None] * coeffs[..., 10]
                   + SH_C3[2] * (ys * (4 * zz - xx - yy))[..., None] * coeffs[..., 11]
                   + SH_C3[3] * (zs * (2 * zz - 3 * xx - 3 * yy))[..., None] * coeffs[..., 12]
                   + SH_C3[4] * (xs * (4 * zz - xx - yy))[..., None] * coeffs[..., 13]
                   + SH_C3[5] * (zs * (xx - yy))[..., None] * coeffs[..., 14]
                   + SH_C3[6] * (xs * (xx - 3 * yy))[..., None] * coeffs[..., 15])
    return np.maximum(out + 0.5, 0.0)


def filter_opacity_factor(scales: np.ndarray, filter_variance: np.ndarray) -> np.ndarray:
    """Determinant opacity rescale sqrt(|Sigma| / |Sigma + v I|).

    Sigma = R diag(scale^2) R^T shares eigenvectors with Sigma + v I, so the
    ratio reduces to prod_i scale_i^2 / (scale_i^2 + v).
    """
    s2 = np.square(np.asarray(scales, dtype=np.float64))
    v = np.asarray(filter_variance, dtype=np.float64)
    ratio = s2 / (s2 + v[..., None])
    return np.sqrt(np.prod(ratio, axis=-1))


def project_scene(scene: Scene, camera: Camera, cfg: RasterConfig = RasterConfig(),
                  indices: Optional[np.ndarray] = None,
                  modulation: Optional[np.ndarray] = None,
                  shade: bool = True) -> Splat2DBatch:
    """Project (a subset of) a scene's Gaussians into camera screen space.

    ``indices`` selects the input list (default: whole scene); ``modulation``
    multiplies opacity per input (runtime blend factor). Culled Gaussians
    (behind the near plane or with 3-sigma footprint off screen) are dropped.
    """
    if indices is None:
        idx = np.arange(len(scene), dtype=np.int64)
    else:
        idx = np.asarray(indices, dtype=np.int64)
    n_inputs = idx.shape[0]
    if n_inputs == 0:
        return _empty_batch(0)
    if modulation is not None and modulation.shape[0] != n_inputs:
        raise ValueError("modulation length must match the input list")

    means = scene.means[idx]
    w2c = camera.rotation_matrix
    cam_pts = (means - camera.position) @ w2c.T
    z = cam_pts[:, 2]
    in_front = z > camera.near_plane
    if not in_front.any():
        return _empty_batch(n_inputs)

    sel = np.flatnonzero(in_front)
    cam_pts = cam_pts[sel]
    z = z[sel]
    x, y = cam_pts[:, 0], cam_pts[:, 1]
    fx, fy = camera.focal
    cx, cy = camera.principal_point
    mean2d = np.stack([fx * x / z + cx, fy * y / z + cy], axis=1)

    # World-space covariance rotated to camera space, then EWA Jacobian.
    sub = idx[sel]
    rot = quat_to_matrix(scene.rotations[sub])
    s2 = np.square(scene.scales[sub])
    cov_world = np.einsum("nij,nj,nkj->nik", rot, s2, rot)
    fv = scene.filter_variance[sub]
    cov_world[:, 0, 0] += fv
    cov_world[:, 1, 1] += fv
    cov_world[:, 2, 2] += fv
    cov_cam = np.einsum("ij,njk,lk->nil", w2c, cov_world, w2c)

    # The Jacobian is a linearization at the mean; for points far outside
    # the frustum it wildly overestimates footprints, so its evaluation
    # point is clamped to 1.3x the field of view (the projected mean is not).
    w, h = camera.resolution
    lim_x = 1.3 * 0.5 * w / fx
    lim_y = 1.3 * 0.5 * h / fy
    jx = np.clip(x / z, -lim_x, lim_x) * z
    jy = np.clip(y / z, -lim_y, lim_y) * z
    inv_z = 1.0 / z
    j = np.zeros((z.shape[0], 2, 3))
    j[:, 0, 0] = fx * inv_z
    j[:, 0, 2] = -fx * jx * inv_z * inv_z
    j[:, 1, 1] = fy * inv_z
    j[:, 1, 2] = -fy * jy * inv_z * inv_z
    cov2d = np.einsum("nij,njk,nlk->nil", j, cov_cam, j)

    det_raw = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    det_raw = np.maximum(det_raw, 0.0)
    cov2d[:, 0, 0] += cfg.dilation2d
    cov2d[:, 1, 1] += cfg.dilation2d
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]

    opacity = scene.opacities[sub] * filter_opacity_factor(scene.scales[sub], fv)
    if cfg.dilation2d > 0:
        opacity = opacity * np.sqrt(det_raw / det)
    if modulation is not None:
        opacity = opacity * modulation[sel]

    # AABB of the 3-sigma ellipse; cull splats that miss the viewport or are
    # degenerate (possible only with dilation2d = 0).
    ok = det > 1e-12
    ext = SUPPORT_SIGMA * np.sqrt(np.maximum(
        np.stack([cov2d[:, 0, 0], cov2d[:, 1, 1]], axis=1), 0.0))
    ok &= (mean2d[:, 0] + ext[:, 0] > 0) & (mean2d[:, 0] - ext[:, 0] < w)
    ok &= (mean2d[:, 1] + ext[:, 1] > 0) & (mean2d[:, 1] - ext[:, 1] < h)
    if not ok.all():
        keep = np.flatnonzero(ok)
        sel, sub = sel[keep], sub[keep]
        mean2d, cov2d, det, ext = mean2d[keep], cov2d[keep], det[keep], ext[keep]
        z, opacity = z[keep], opacity[keep]
    if sel.shape[0] == 0:
        return _empty_batch(n_inputs)

    inv_det = 1.0 / det
    conic = np.stack([cov2d[:, 1, 1] * inv_det,
                      -cov2d[:, 0, 1] * inv_det,
                      cov2d[:, 0, 0] * inv_det], axis=1)

    if shade:
        dirs = scene.means[sub] - camera.position
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        color = eval_sh(scene.sh_coeffs[sub], dirs, scene.sh_degree)
    else:
        color = np.zeros((sel.shape[0], 3))

    return Splat2DBatch(n_inputs, sel.astype(np.int64), mean2d, cov2d, conic,
                        ext, z, opacity, color)


def project_gaussian(g: Gaussian, camera: Camera,
                     cfg: RasterConfig = RasterConfig()) -> Optional[Splat2D]:
    """Project a single Gaussian; returns None when culled."""
    degree = int(np.sqrt(g.sh_coeffs.shape[-1])) - 1
    scene = Scene.from_gaussians([g], degree)
    batch = project_scene(scene, camera, cfg)
    return batch.splat(0) if len(batch) else None


def _tile_ranges(batch: Splat2DBatch, tiles_x: int, tiles_y: int):
    """Inclusive tile index ranges overlapped by each splat's 3-sigma AABB."""
    x0 = np.floor((batch.mean2d[:, 0] - batch.extent[:, 0]) / TILE_SIZE).astype(np.int64)
    x1 = np.floor((batch.mean2d[:, 0] + batch.extent[:, 0]) / TILE_SIZE).astype(np.int64)
    y0 = np.floor((batch.mean2d[:, 1] - batch.extent[:, 1]) / TILE_SIZE).astype(np.int64)
    y1 = np.floor((batch.mean2d[:, 1] + batch.extent[:, 1]) / TILE_SIZE).astype(np.int64)
    np.clip(x0, 0, tiles_x - 1, out=x0)
    np.clip(x1, 0, tiles_x - 1, out=x1)
    np.clip(y0, 0, tiles_y - 1, out=y0)
    np.clip(y1, 0, tiles_y - 1, out=y1)
    return x0, x1, y0, y1


def tile_cover_counts(batch: Splat2DBatch, camera: Camera) -> np.ndarray:
    """Number of tiles each surviving splat is binned to (cost proxy input)."""
    w, h = camera.resolution
    tiles_x = -(-w // TILE_SIZE)
    tiles_y = -(-h // TILE_SIZE)
    if len(batch) == 0:
        return np.zeros(0, dtype=np.int64)
    x0, x1, y0, y1 = _tile_ranges(batch, tiles_x, tiles_y)
    return (x1 - x0 + 1) * (y1 - y0 + 1)


def _composite_tile(tile_x: int, tile_y: int, members: np.ndarray,
                    mean2d, conic, alpha_src, colors, camera: Camera,
                    cfg: RasterConfig, need_image: bool, need_max: bool):
    """Composite one tile; ``members`` are sorted splat rows, front to back."""
    w, h = camera.resolution
    px0, py0 = tile_x * TILE_SIZE, tile_y * TILE_SIZE
    px1, py1 = min(px0 + TILE_SIZE, w), min(py0 + TILE_SIZE, h)
    xs = np.arange(px0, px1, dtype=np.float64) + 0.5
    ys = np.arange(py0, py1, dtype=np.float64) + 0.5
    pw, ph = xs.shape[0], ys.shape[0]
    n_px = pw * ph
    pgx = np.broadcast_to(xs[None, :], (ph, pw)).reshape(-1)
    pgy = np.broadcast_to(ys[:, None], (ph, pw)).reshape(-1)

    trans = np.ones(n_px)
    img = np.zeros((n_px, 3)) if need_image else None
    visible = np.zeros(n_px, dtype=np.int64)
    maxw = np.zeros(members.shape[0]) if need_max else None

    block = 1024
    for b0 in range(0, members.shape[0], block):
        rows = members[b0:b0 + block]
        m = mean2d[rows]
        cn = conic[rows]
        dx = pgx[:, None] - m[None, :, 0]
        dy = pgy[:, None] - m[None, :, 1]
        q = cn[None, :, 0] * dx * dx + 2.0 * cn[None, :, 1] * dx * dy + cn[None, :, 2] * dy * dy
        alpha = alpha_src[rows][None, :] * np.exp(-0.5 * np.maximum(q, 0.0))
        np.minimum(alpha, cfg.alpha_clamp, out=alpha)
        skipped = (alpha < cfg.alpha_min) | (q > SUPPORT_Q)
        a = np.where(skipped, 0.0, alpha)

        after = np.cumprod(1.0 - a, axis=1) * trans[:, None]
        before = np.empty_like(after)
        before[:, 0] = trans
        before[:, 1:] = after[:, :-1]
        proc = before >= cfg.t_min
        weight = np.where(proc, before * a, 0.0)

        if need_image:
            img += weight @ colors[rows]
        visible += (proc & ~skipped).sum(axis=1)
        if need_max:
            maxw[b0:b0 + rows.shape[0]] = weight.max(axis=0) if n_px else 0.0
        trans = after[:, -1]
        if not (trans >= cfg.t_min).any():
            break

    return (px0, py0, px1, py1,
            img.reshape(ph, pw, 3) if need_image else None,
            visible.reshape(ph, pw), maxw)


def rasterize(batch: Splat2DBatch, camera: Camera,
              cfg: RasterConfig = RasterConfig(), *, need_image: bool = True,
              record_max_weight: bool = True) -> TileRenderOutput:
    """Tile-binned front-to-back alpha compositing of projected splats.

    Splats are depth-sorted once globally (ties broken by source index), so
    each pixel composites its terms in a fixed order regardless of tile
    processing order or thread count.
    """
    w, h = camera.resolution
    tiles_x = -(-w // TILE_SIZE)
    tiles_y = -(-h // TILE_SIZE)
    image = np.zeros((h, w, 3)) if need_image else None
    visible = np.zeros((h, w), dtype=np.int64)
    tile_counts = np.zeros((tiles_y, tiles_x), dtype=np.int64)
    maxw = np.zeros(batch.n_inputs) if record_max_weight else None
    meta = cfg.metadata()

    if len(batch) == 0:
        return TileRenderOutput(image, tile_counts, visible, maxw, meta)

    order = np.lexsort((batch.source_index, batch.depth))
    mean2d = batch.mean2d[order]
    conic = batch.conic[order]
    alpha_src = batch.opacity_eff[order]
    colors = batch.color[order]
    src = batch.source_index[order]

    sb = replace(batch, mean2d=mean2d, extent=batch.extent[order])
    x0, x1, y0, y1 = _tile_ranges(sb, tiles_x, tiles_y)
    nx = x1 - x0 + 1
    counts = nx * (y1 - y0 + 1)
    total = int(counts.sum())
    splat_ids = np.repeat(np.arange(order.shape[0]), counts)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local = np.arange(total) - offsets[splat_ids]
    tx = x0[splat_ids] + local % nx[splat_ids]
    ty = y0[splat_ids] + local // nx[splat_ids]
    tile_ids = ty * tiles_x + tx
    tile_counts += np.bincount(tile_ids, minlength=tiles_x * tiles_y).reshape(tiles_y, tiles_x)

    by_tile = np.argsort(tile_ids, kind="stable")
    sorted_tiles = tile_ids[by_tile]
    sorted_members = splat_ids[by_tile]
    uniq, starts = np.unique(sorted_tiles, return_index=True)
    ends = np.append(starts[1:], sorted_tiles.shape[0])

    def run(ti: int):
        t = int(uniq[ti])
        members = sorted_members[starts[ti]:ends[ti]]
        return _composite_tile(t % tiles_x, t // tiles_x, members, mean2d,
                               conic, alpha_src, colors, camera, cfg,
                               need_image, record_max_weight), members

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(run, range(uniq.shape[0])))
    else:
        results = [run(ti) for ti in range(uniq.shape[0])]

    for (px0, py0, px1, py1, img_t, vis_t, maxw_t), members in results:
        if need_image:
            image[py0:py1, px0:px1] += img_t
        visible[py0:py1, px0:px1] += vis_t
        if record_max_weight and members.shape[0]:
            np.maximum.at(maxw, src[members], maxw_t)

    if need_image:
        np.clip(image, 0.0, 1.0, out=image)
    return TileRenderOutput(image, tile_counts, visible, maxw, meta)


def render_scene(scene: Scene, camera: Camera, cfg: RasterConfig = RasterConfig(),
                 indices: Optional[np.ndarray] = None,
                 modulation: Optional[np.ndarray] = None,
                 need_image: bool = True,
                 record_max_weight: bool = True) -> TileRenderOutput:
    """Project then rasterize in one call."""
    batch = project_scene(scene, camera, cfg, indices=indices,
                          modulation=modulation, shade=need_image)
    return rasterize(batch, camera, cfg, need_image=need_image,
                     record_max_weight=record_max_weight)


def visibility_histogram(out: TileRenderOutput, bin_edges: np.ndarray) -> np.ndarray:
    """Histogram of per-pixel visible-Gaussian counts.

    Bins are half-open [e_i, e_{i+1}) except the last, which absorbs
    everything >= e_{n-1}; values below the first edge land in the first
    bin. Totals therefore always equal the pixel count.
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.shape[0] < 2:
        raise ValueError("need at least two bin edges")
    if not np.all(np.diff(edges) > 0):
        raise ValueError(f"bin edges must be strictly increasing, got {edges}")
    vals = out.per_pixel_visible.reshape(-1)
    which = np.searchsorted(edges, vals, side="right") - 1
    np.clip(which, 0, edges.shape[0] - 2, out=which)
    return np.bincount(which, minlength=edges.shape[0] - 1)
