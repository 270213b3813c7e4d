"""Image and counter dumps: sRGB-encoded PNG/PPM plus CSV counts."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    """Standard sRGB transfer curve, linear [0,1] to encoded [0,1]."""
    x = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def to_uint8(linear: np.ndarray) -> np.ndarray:
    return np.round(srgb_encode(linear) * 255.0).astype(np.uint8)


def write_image(path, linear_rgb: np.ndarray) -> None:
    """8-bit image dump; format chosen by suffix (.png via Pillow, .ppm raw)."""
    path = Path(path)
    data = to_uint8(linear_rgb)
    if path.suffix.lower() == ".ppm":
        h, w = data.shape[:2]
        path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + data.tobytes())
    else:
        from PIL import Image
        Image.fromarray(data, mode="RGB").save(path)


def read_image(path) -> np.ndarray:
    """Read an 8-bit image back to encoded floats in [0, 1]."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        raw = path.read_bytes()
        parts = raw.split(b"\n", 3)
        w, h = map(int, parts[1].split())
        data = np.frombuffer(parts[3], dtype=np.uint8, count=w * h * 3)
        return data.reshape(h, w, 3).astype(np.float64) / 255.0
    from PIL import Image
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def tile_counts_csv(per_tile_count: np.ndarray) -> str:
    lines = ["tile_x,tile_y,count"]
    ty, tx = per_tile_count.shape
    for y in range(ty):
        for x in range(tx):
            lines.append(f"{x},{y},{int(per_tile_count[y, x])}")
    return "\n".join(lines) + "\n"
