"""Scene ingest and the chunked LOD asset format.

Splat scenes arrive as the ecosystem-standard binary PLY (logit opacity,
log scales, channel-major SH rest coefficients). Compiled assets are a JSON
manifest plus one data section holding per-level Gaussian blobs (float32
records), per-level provenance (uint32) and per-chunk per-level index sets
(sorted uint32). The data section is byte-identical for identical inputs;
the manifest carries offsets so a viewer can range-fetch individual blobs.

Two layouts share the same bytes: a directory (manifest.json + data.bin)
and a single container file (magic + version + manifest + data).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .scene import Camera, ChunkPlan, LodLevel, Scene, sh_term_count

FORMAT_VERSION = 1
CONTAINER_MAGIC = b"SPLATLOD"
TOOL_VERSION = "0.1.0"

_PLY_REQUIRED = ("x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                 "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3")
_PLY_TYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
              "uchar": "u1", "uint8": "u1", "int": "<i4", "int32": "<i4",
              "uint": "<u4", "uint32": "<u4", "short": "<i2", "ushort": "<u2"}


class AssetError(Exception):
    """Structured load/store failure; readers never raise anything else."""


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p, bound=16.0):
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-12, 1 - 1e-12)
    return np.clip(np.log(p / (1 - p)), -bound, bound)


def read_splat_ply(path) -> Scene:
    """Parse a binary-little-endian splat PLY into a Scene.

    Stored opacity is a logit (sigmoid applied), scales are logs (exp
    applied), rotations are normalized. The SH degree is inferred from the
    f_rest property count; scenes without f_rest are degree 0.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise AssetError(f"cannot read {path}: {e}") from e

    header_end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or header_end < 0:
        raise AssetError(f"{path}: not a PLY file")
    try:
        header = raw[:header_end].decode("ascii")
    except UnicodeDecodeError as e:
        raise AssetError(f"{path}: undecodable PLY header") from e

    n_vertices = None
    properties: list[tuple[str, str]] = []
    in_vertex = False
    for line in header.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise AssetError(f"{path}: unsupported PLY format {parts[1]!r} "
                                 "(need binary_little_endian)")
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                n_vertices = int(parts[2])
        elif parts[0] == "property" and in_vertex:
            if parts[1] not in _PLY_TYPES:
                raise AssetError(f"{path}: unsupported property type {parts[1]!r}")
            properties.append((parts[2], _PLY_TYPES[parts[1]]))
    if n_vertices is None:
        raise AssetError(f"{path}: no vertex element")
    names = [n for n, _ in properties]
    for req in _PLY_REQUIRED:
        if req not in names:
            raise AssetError(f"{path}: missing required property {req!r}")

    dtype = np.dtype(properties)
    body = raw[header_end + len(b"end_header\n"):]
    if len(body) < n_vertices * dtype.itemsize:
        raise AssetError(f"{path}: truncated body, expected {n_vertices} vertices")
    data = np.frombuffer(body[:n_vertices * dtype.itemsize], dtype=dtype)

    rest_names = sorted((n for n in names if n.startswith("f_rest_")),
                        key=lambda s: int(s.split("_")[-1]))
    n_rest = len(rest_names)
    degree = 0
    while 3 * (sh_term_count(degree) - 1) < n_rest and degree < 3:
        degree += 1
    if 3 * (sh_term_count(degree) - 1) != n_rest:
        raise AssetError(f"{path}: f_rest count {n_rest} matches no SH degree in 0..3")

    def col(name):
        return np.asarray(data[name], dtype=np.float64)

    means = np.stack([col("x"), col("y"), col("z")], axis=1)
    scales = np.exp(np.stack([col(f"scale_{i}") for i in range(3)], axis=1))
    quats = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)
    opac = _sigmoid(col("opacity"))

    terms = sh_term_count(degree)
    sh = np.zeros((n_vertices, 3, terms))
    for c in range(3):
        sh[:, c, 0] = col(f"f_dc_{c}")
    if n_rest:
        rest = np.stack([col(n) for n in rest_names], axis=1)
        sh[:, :, 1:] = rest.reshape(n_vertices, 3, terms - 1)

    for name, arr in (("position", means), ("scale", scales), ("rotation", quats),
                      ("opacity", opac), ("sh", sh.reshape(n_vertices, -1))):
        bad = ~np.isfinite(arr).all(axis=tuple(range(1, arr.ndim)))
        if bad.any():
            raise AssetError(f"{path}: non-finite {name} at element {int(np.flatnonzero(bad)[0])}")
    norms = np.linalg.norm(quats, axis=1)
    if np.any(norms <= 0):
        raise AssetError(f"{path}: zero quaternion at element {int(np.argmin(norms))}")
    quats = quats / norms[:, None]
    return Scene(means, scales, quats, opac, sh, np.zeros(n_vertices), degree)


def write_splat_ply(path, scene: Scene) -> None:
    """Write a Scene using the standard splat PLY attribute layout."""
    n = len(scene)
    terms = sh_term_count(scene.sh_degree)
    n_rest = 3 * (terms - 1)
    names = (["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
             + [f"f_rest_{i}" for i in range(n_rest)]
             + ["opacity", "scale_0", "scale_1", "scale_2",
                "rot_0", "rot_1", "rot_2", "rot_3"])
    dtype = np.dtype([(name, "<f4") for name in names])
    rec = np.zeros(n, dtype=dtype)
    for i, ax in enumerate("xyz"):
        rec[ax] = scene.means[:, i]
    for c in range(3):
        rec[f"f_dc_{c}"] = scene.sh_coeffs[:, c, 0]
    if n_rest:
        rest = scene.sh_coeffs[:, :, 1:].reshape(n, n_rest)
        for i in range(n_rest):
            rec[f"f_rest_{i}"] = rest[:, i]
    rec["opacity"] = _logit(scene.opacities)
    for i in range(3):
        rec[f"scale_{i}"] = np.log(scene.scales[:, i])
    for i in range(4):
        rec[f"rot_{i}"] = scene.rotations[:, i]

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")
    Path(path).write_bytes("\n".join(header).encode("ascii") + b"\n" + rec.tobytes())


def read_cameras_json(path) -> list[Camera]:
    """Parse the documented camera schema: an array of records with id,
    position[3], quaternion[4] (w,x,y,z, world-to-camera), fx, fy, cx, cy,
    width, height and optional near."""
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as e:
        raise AssetError(f"cannot parse {path}: {e}") from e
    if not isinstance(records, list):
        raise AssetError(f"{path}: expected a JSON array of cameras")
    cameras = []
    for i, rec in enumerate(records):
        cam_id = str(rec.get("id", i)) if isinstance(rec, dict) else str(i)
        if not isinstance(rec, dict):
            raise AssetError(f"camera {cam_id}: record must be an object")

        def need(key, length=None):
            if key not in rec:
                raise AssetError(f"camera {cam_id}: missing field {key!r}")
            v = rec[key]
            if length is not None:
                if not isinstance(v, (list, tuple)) or len(v) != length:
                    raise AssetError(f"camera {cam_id}: field {key!r} must have length {length}")
            return v

        pos = need("position", 3)
        quat = need("quaternion", 4)
        fx, fy = need("fx"), need("fy")
        cx, cy = need("cx"), need("cy")
        w, h = need("width"), need("height")
        try:
            cameras.append(Camera(
                position=np.asarray(pos, float), orientation=np.asarray(quat, float),
                focal=(float(fx), float(fy)), principal_point=(float(cx), float(cy)),
                resolution=(int(w), int(h)),
                near_plane=float(rec.get("near", 0.01)), cam_id=cam_id))
        except (ValueError, TypeError) as e:
            raise AssetError(f"camera {cam_id}: {e}") from e
    return cameras


def write_cameras_json(path, cameras: Sequence[Camera]) -> None:
    records = []
    for i, c in enumerate(cameras):
        records.append({
            "id": c.cam_id or str(i), "position": list(map(float, c.position)),
            "quaternion": list(map(float, c.orientation)),
            "fx": float(c.focal[0]), "fy": float(c.focal[1]),
            "cx": float(c.principal_point[0]), "cy": float(c.principal_point[1]),
            "width": c.resolution[0], "height": c.resolution[1],
            "near": float(c.near_plane)})
    Path(path).write_text(json.dumps(records, indent=1, sort_keys=True))


@dataclass(frozen=True)
class Asset:
    """A compiled scene: LOD levels, chunk plan, and build parameters."""

    levels: list
    plan: ChunkPlan
    sh_degree: int
    reference_focal: float
    filter_scale: float
    gamma: float
    manifest: dict = field(repr=False, default_factory=dict)


def _record_size(sh_degree: int) -> int:
    return 4 * (12 + 3 * sh_term_count(sh_degree))


def _level_blob(scene: Scene) -> bytes:
    n = len(scene)
    terms = sh_term_count(scene.sh_degree)
    out = np.empty((n, 12 + 3 * terms), dtype="<f4")
    out[:, 0:3] = scene.means
    out[:, 3:6] = scene.scales
    out[:, 6:10] = scene.rotations
    out[:, 10] = scene.opacities
    out[:, 11] = scene.filter_variance
    out[:, 12:] = scene.sh_coeffs.reshape(n, -1)
    return out.tobytes()


def _parse_level_blob(blob: bytes, count: int, sh_degree: int) -> Scene:
    terms = sh_term_count(sh_degree)
    width = 12 + 3 * terms
    arr = np.frombuffer(blob, dtype="<f4")
    if arr.size != count * width:
        raise AssetError(f"level blob holds {arr.size} floats, expected {count * width}")
    with np.errstate(invalid="ignore"):
        arr = arr.reshape(count, width).astype(np.float64)
    if not np.isfinite(arr).all():
        raise AssetError("level blob contains non-finite values")
    scales = arr[:, 3:6]
    if not np.all(scales > 0):
        raise AssetError("level blob contains non-positive scales")
    opac = arr[:, 10]
    if np.any(opac < 0) or np.any(opac > 1):
        raise AssetError("level blob contains out-of-range opacity")
    fv = arr[:, 11]
    if np.any(fv < 0):
        raise AssetError("level blob contains negative filter variance")
    quats = arr[:, 6:10]
    norms = np.linalg.norm(quats, axis=1)
    if np.any(np.abs(norms - 1) > 1e-3):
        raise AssetError("level blob contains non-unit rotations")
    quats = quats / norms[:, None]
    return Scene(arr[:, 0:3], scales, quats, opac,
                 arr[:, 12:].reshape(count, 3, terms), fv, sh_degree)


def build_manifest_and_data(levels: Sequence[LodLevel], plan: ChunkPlan,
                            sh_degree: int, reference_focal: float,
                            filter_scale: float, gamma: float,
                            seeds: Optional[dict] = None,
                            config_hash: str = "") -> tuple[dict, bytes]:
    """Lay out all blobs in one data section and describe them in a manifest."""
    data = bytearray()
    level_rows = []
    for lv in levels:
        blob = _level_blob(lv.scene)
        prov = np.asarray(lv.provenance, dtype="<u4").tobytes()
        level_rows.append({
            "level": lv.level, "depth_threshold": float(lv.depth_threshold),
            "gaussian_count": len(lv), "offset": len(data), "length": len(blob),
            "provenance_offset": len(data) + len(blob), "provenance_length": len(prov)})
        data += blob + prov

    chunk_rows = []
    n_cams = plan.source_camera_assignment.shape[0]
    for j in range(plan.n_chunks):
        sets_rows = []
        for lvl in range(plan.n_levels):
            idx = np.asarray(plan.active_sets[j][lvl], dtype="<u4")
            blob = idx.tobytes()
            sets_rows.append({"offset": len(data), "length": len(blob),
                              "count": int(idx.size)})
            data += blob
        chunk_rows.append({
            "center": [float(v) for v in plan.centers[j]],
            "radius": float(plan.radii[j]),
            "camera_count": int(np.sum(plan.source_camera_assignment == j)) if n_cams else 0,
            "index_sets": sets_rows})

    manifest = {
        "format_version": FORMAT_VERSION,
        "sh_degree": sh_degree,
        "reference_focal": float(reference_focal),
        "filter_scale": float(filter_scale),
        "gamma": float(gamma),
        "index_encoding": "raw-u32",
        "levels": level_rows,
        "chunks": chunk_rows,
        "camera_assignment": [int(v) for v in plan.source_camera_assignment],
        "build": {"seeds": seeds or {}, "config_hash": config_hash,
                  "tool_version": TOOL_VERSION},
    }
    return manifest, bytes(data)


def manifest_bytes(manifest: dict) -> bytes:
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_asset(path, levels: Sequence[LodLevel], plan: ChunkPlan, *,
                sh_degree: int, reference_focal: float, filter_scale: float,
                gamma: float, seeds: Optional[dict] = None,
                config_hash: str = "", container: bool = False) -> Path:
    """Write a compiled asset as a directory (default) or a container file."""
    manifest, data = build_manifest_and_data(levels, plan, sh_degree,
                                             reference_focal, filter_scale,
                                             gamma, seeds, config_hash)
    mbytes = manifest_bytes(manifest)
    path = Path(path)
    if container:
        header = CONTAINER_MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(mbytes))
        path.write_bytes(header + mbytes + data)
    else:
        path.mkdir(parents=True, exist_ok=True)
        (path / "manifest.json").write_bytes(mbytes)
        (path / "data.bin").write_bytes(data)
    return path


def _validate_ranges(manifest: dict, data_len: int) -> None:
    ranges = []
    for row in manifest["levels"]:
        ranges.append((row["offset"], row["length"]))
        ranges.append((row["provenance_offset"], row["provenance_length"]))
    for chunk in manifest["chunks"]:
        for s in chunk["index_sets"]:
            ranges.append((s["offset"], s["length"]))
    for off, length in ranges:
        if off < 0 or length < 0 or off + length > data_len:
            raise AssetError(f"blob range [{off}, {off + length}) exceeds data "
                             f"section of {data_len} bytes")
    for (o1, l1), (o2, l2) in zip(sorted(ranges), sorted(ranges)[1:]):
        if o1 + l1 > o2:
            raise AssetError(f"overlapping blob ranges at offset {o2}")


def read_asset(path) -> Asset:
    """Load a directory or container asset, validating every invariant.

    Raises AssetError for anything malformed: version mismatch, truncated or
    overlapping blobs, count mismatches, unsorted index sets, broken values.
    """
    path = Path(path)
    try:
        if path.is_dir():
            mbytes = (path / "manifest.json").read_bytes()
            data = (path / "data.bin").read_bytes()
        else:
            raw = path.read_bytes()
            if len(raw) < len(CONTAINER_MAGIC) + 12:
                raise AssetError(f"{path}: container too short")
            if raw[:len(CONTAINER_MAGIC)] != CONTAINER_MAGIC:
                raise AssetError(f"{path}: bad container magic")
            version, mlen = struct.unpack_from("<IQ", raw, len(CONTAINER_MAGIC))
            if version != FORMAT_VERSION:
                raise AssetError(f"{path}: unsupported container version {version}")
            start = len(CONTAINER_MAGIC) + 12
            if start + mlen > len(raw):
                raise AssetError(f"{path}: truncated manifest")
            mbytes = raw[start:start + mlen]
            data = raw[start + mlen:]
    except OSError as e:
        raise AssetError(f"cannot read asset at {path}: {e}") from e

    try:
        manifest = json.loads(mbytes.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise AssetError(f"{path}: manifest is not valid JSON: {e}") from e

    try:
        if manifest["format_version"] != FORMAT_VERSION:
            raise AssetError(f"unsupported format_version {manifest['format_version']}")
        sh_degree = int(manifest["sh_degree"])
        if not 0 <= sh_degree <= 3:
            raise AssetError(f"sh_degree {sh_degree} out of range")
        _validate_ranges(manifest, len(data))

        rec = _record_size(sh_degree)
        levels = []
        for row in manifest["levels"]:
            count = int(row["gaussian_count"])
            if count * rec != row["length"]:
                raise AssetError(f"level {row['level']}: count {count} disagrees "
                                 f"with blob length {row['length']}")
            if count * 4 != row["provenance_length"]:
                raise AssetError(f"level {row['level']}: provenance length mismatch")
            scene = _parse_level_blob(data[row["offset"]:row["offset"] + row["length"]],
                                      count, sh_degree)
            prov = np.frombuffer(
                data[row["provenance_offset"]:row["provenance_offset"] + row["provenance_length"]],
                dtype="<u4").astype(np.int64)
            levels.append(LodLevel(int(row["level"]), float(row["depth_threshold"]),
                                   scene, prov))
        if not levels:
            raise AssetError("asset has no levels")
        n0 = len(levels[0])
        for lv in levels:
            if lv.provenance.size and (lv.provenance.min() < 0 or lv.provenance.max() >= n0):
                raise AssetError(f"level {lv.level}: provenance index out of range")

        chunks_sets, centers, radii = [], [], []
        for j, chunk in enumerate(manifest["chunks"]):
            if len(chunk["index_sets"]) != len(levels):
                raise AssetError(f"chunk {j}: expected {len(levels)} index sets")
            per_level = []
            for lvl, srow in enumerate(chunk["index_sets"]):
                if srow["count"] * 4 != srow["length"]:
                    raise AssetError(f"chunk {j} level {lvl}: count disagrees with length")
                idx = np.frombuffer(data[srow["offset"]:srow["offset"] + srow["length"]],
                                    dtype="<u4").astype(np.int64)
                if idx.size and (np.any(np.diff(idx) <= 0)):
                    raise AssetError(f"chunk {j} level {lvl}: index set not strictly sorted")
                if idx.size and idx[-1] >= len(levels[lvl]):
                    raise AssetError(f"chunk {j} level {lvl}: index out of range")
                per_level.append(idx)
            chunks_sets.append(tuple(per_level))
            centers.append(chunk["center"])
            radii.append(chunk["radius"])
        if not chunks_sets:
            raise AssetError("asset has no chunks")

        assignment = np.asarray(manifest.get("camera_assignment", []), dtype=np.int64)
        if assignment.size and (assignment.min() < 0 or assignment.max() >= len(chunks_sets)):
            raise AssetError("camera assignment references unknown chunk")
        plan = ChunkPlan(np.asarray(centers, float), np.asarray(radii, float),
                         tuple(chunks_sets), assignment)
        return Asset(levels, plan, sh_degree,
                     float(manifest["reference_focal"]),
                     float(manifest["filter_scale"]), float(manifest["gamma"]),
                     manifest)
    except AssetError:
        raise
    except (KeyError, TypeError, ValueError, IndexError, struct.error) as e:
        raise AssetError(f"{path}: malformed asset: {e}") from e


def asset_sha256(path) -> str:
    """Digest over the asset bytes (manifest + data, layout-independent)."""
    path = Path(path)
    h = hashlib.sha256()
    if path.is_dir():
        h.update((path / "manifest.json").read_bytes())
        h.update((path / "data.bin").read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def config_digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True,
                                     separators=(",", ":")).encode()).hexdigest()
