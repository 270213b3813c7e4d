"""Independent reference implementations used as test oracles.

The naive compositor here deliberately shares no machinery with the tile
rasterizer: no binning, no tiles, no blocked transmittance tricks. Every
splat is considered at every pixel, sorted once, and composited with the
plain front-to-back recurrence.
"""

import numpy as np

from splatlod.raster import SUPPORT_Q, RasterConfig, Splat2DBatch
from splatlod.scene import Camera


def naive_composite(batch: Splat2DBatch, camera: Camera, cfg: RasterConfig):
    """Full-sort per-pixel compositor. Returns (image, visible, max_weight)."""
    w, h = camera.resolution
    image = np.zeros((h, w, 3))
    visible = np.zeros((h, w), dtype=np.int64)
    maxw = np.zeros(batch.n_inputs)
    if len(batch) == 0:
        return image, visible, maxw

    order = np.lexsort((batch.source_index, batch.depth))
    px = np.arange(w) + 0.5
    py = np.arange(h) + 0.5
    gx, gy = np.meshgrid(px, py)
    gx, gy = gx.reshape(-1), gy.reshape(-1)

    trans = np.ones(h * w)
    img = np.zeros((h * w, 3))
    vis = np.zeros(h * w, dtype=np.int64)
    for k in order:
        a_, b_, c_ = batch.conic[k]
        dx = gx - batch.mean2d[k, 0]
        dy = gy - batch.mean2d[k, 1]
        q = a_ * dx * dx + 2 * b_ * dx * dy + c_ * dy * dy
        alpha = batch.opacity_eff[k] * np.exp(-0.5 * np.maximum(q, 0.0))
        alpha = np.minimum(alpha, cfg.alpha_clamp)
        touched = (q <= SUPPORT_Q) & (alpha >= cfg.alpha_min)
        live = trans >= cfg.t_min
        act = touched & live
        weight = np.where(act, trans * alpha, 0.0)
        img += weight[:, None] * batch.color[k][None, :]
        vis += act
        maxw[batch.source_index[k]] = max(maxw[batch.source_index[k]], weight.max(initial=0.0))
        trans = np.where(act, trans * (1.0 - alpha), trans)

    image = np.clip(img.reshape(h, w, 3), 0.0, 1.0)
    visible = vis.reshape(h, w)
    return image, visible, maxw


def brute_force_band_membership(positions: np.ndarray, query: np.ndarray,
                                thresholds: list[float], offsets: list[float]):
    """Direct evaluation of the distance-band predicate, one bool mask per level.

    Level l is active for distance r when (d_l + off_l) <= r < (d_{l+1} + off_{l+1}),
    with the level-0 lower bound pinned at 0 and the last upper bound infinite.
    """
    d = np.linalg.norm(np.asarray(positions, float) - np.asarray(query, float), axis=1)
    n_levels = len(thresholds)
    masks = []
    for lvl in range(n_levels):
        lo = 0.0 if lvl == 0 else thresholds[lvl] + offsets[lvl]
        if lvl + 1 < n_levels:
            hi = thresholds[lvl + 1] + offsets[lvl + 1]
            masks.append((d >= lo) & (d < hi))
        else:
            masks.append(d >= lo)
    return masks


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    if mse == 0:
        return float("inf")
    return -10.0 * np.log10(mse)
