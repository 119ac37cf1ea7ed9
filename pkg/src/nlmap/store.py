"""On-disk formats: map files, frame JSON-lines, heatmap CSV/PGM.

Map file layout (all integers little-endian)::

    b"NLM" + version byte (b"1")
    uint32   manifest length L
    L bytes  UTF-8 JSON manifest (scene_id, schema, per-element metadata,
             payload size and SHA-256)
    payload  float32 embeddings, element-major: for each element, each
             schema channel's vector in schema order
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .core import EmbeddingVector
from .errors import IntegrityError, SchemaError, VersionError
from .scene import FORMAT_VERSION, ChannelSchema, Frame, HeatGrid, Intrinsics, Pose, RegionProposal, SceneRepresentation

log = logging.getLogger(__name__)

MAGIC = b"NLM"
VERSION_BYTE = str(FORMAT_VERSION).encode("ascii")


def _payload(scene: SceneRepresentation) -> bytes:
    n = len(scene)
    if n == 0:
        return b""
    mats = [scene.embeddings[pid] for pid in scene.schema.ids]
    return np.concatenate(mats, axis=1).astype("<f4", copy=False).tobytes()


def dump_map(scene: SceneRepresentation) -> bytes:
    payload = _payload(scene)
    manifest = {
        "format": "nlmap",
        "version": FORMAT_VERSION,
        "scene_id": scene.scene_id,
        "schema": [[pid, dim] for pid, dim in scene.schema.channels],
        "count": len(scene),
        "element_ids": [int(e) for e in scene.element_ids],
        "frame_ids": list(scene.frame_ids),
        "positions": scene.positions.tolist(),
        "radii": scene.radii.tolist(),
        "build_info": scene.build_info,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return MAGIC + VERSION_BYTE + struct.pack("<I", len(head)) + head + payload


def save_map(scene: SceneRepresentation, path) -> None:
    data = dump_map(scene)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def parse_map(data: bytes) -> SceneRepresentation:
    if len(data) < 8 or data[:3] != MAGIC:
        raise IntegrityError("not a map file (bad magic)")
    if data[3:4] != VERSION_BYTE:
        raise VersionError(f"unsupported map version byte {data[3:4]!r}, expected {VERSION_BYTE!r}")
    (hlen,) = struct.unpack("<I", data[4:8])
    if 8 + hlen > len(data):
        raise IntegrityError("truncated manifest")
    try:
        manifest = json.loads(data[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"corrupt manifest: {exc}") from None
    if manifest.get("version") != FORMAT_VERSION:
        raise VersionError(f"unsupported manifest version {manifest.get('version')!r}")
    payload = data[8 + hlen :]
    if len(payload) != manifest["payload_bytes"]:
        raise IntegrityError(f"payload is {len(payload)} bytes, manifest says {manifest['payload_bytes']}")
    if hashlib.sha256(payload).hexdigest() != manifest["payload_sha256"]:
        raise IntegrityError("payload checksum mismatch")
    schema = ChannelSchema(tuple(tuple(c) for c in manifest["schema"]))
    n = manifest["count"]
    width = sum(d for _, d in schema.channels)
    flat = np.frombuffer(payload, dtype="<f4")
    if flat.size != n * width:
        raise IntegrityError("payload size does not match schema")
    block = flat.reshape(n, width) if n else np.zeros((0, width), dtype=np.float32)
    embeddings, off = {}, 0
    for pid, dim in schema.channels:
        embeddings[pid] = block[:, off : off + dim]
        off += dim
    return SceneRepresentation(
        manifest["scene_id"],
        schema,
        embeddings,
        np.asarray(manifest["positions"], dtype=np.float64).reshape(n, 3),
        np.asarray(manifest["radii"], dtype=np.float64),
        manifest["frame_ids"],
        element_ids=manifest["element_ids"],
        build_info=manifest.get("build_info"),
        version=manifest["version"],
    )


def load_map(path) -> SceneRepresentation:
    return parse_map(Path(path).read_bytes())


# ---------------------------------------------------------------- frames


def frame_to_dict(frame: Frame) -> dict:
    k = frame.intrinsics
    return {
        "frame_id": frame.frame_id,
        "pose": {"rotation": [list(r) for r in frame.camera_pose.rotation], "translation": list(frame.camera_pose.translation)},
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy, "width": k.width, "height": k.height},
        "rois": [
            {
                "bbox": list(roi.bbox),
                "depth_patch": list(roi.depth_patch),
                "objectness": roi.objectness,
                "channels": {pid: vec.values.tolist() for pid, vec in roi.channels.items()},
            }
            for roi in frame.rois
        ],
    }


def _vector(values, pid: str) -> EmbeddingVector:
    arr = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if abs(norm - 1.0) > 1e-6:
        log.warning("channel %s vector has norm %.6f; normalizing", pid, norm)
    return EmbeddingVector(arr, pid, normalize=True)


def frame_from_dict(d: dict) -> Frame:
    rois = []
    for r in d.get("rois", []):
        depth = [float("nan") if v is None else v for v in r["depth_patch"]]
        rois.append(
            RegionProposal(
                bbox=tuple(r["bbox"]),
                depth_patch=tuple(depth),
                channels={pid: _vector(v, pid) for pid, v in r["channels"].items()},
                objectness=float(r.get("objectness", 1.0)),
            )
        )
    pose = d["pose"]
    return Frame(str(d["frame_id"]), Pose(pose["rotation"], pose["translation"]), Intrinsics(**d["intrinsics"]), tuple(rois))


def _clean(v):
    # JSON has no NaN; invalid depth samples are written as null
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, list):
        return [_clean(x) for x in v]
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    return v


def write_frames(frames: Iterable[Frame], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for frame in frames:
            fh.write(json.dumps(_clean(frame_to_dict(frame)), separators=(",", ":"), allow_nan=False))
            fh.write("\n")
            n += 1
    return n


def iter_frames(path) -> Iterator[Frame]:
    """Yield frames from a JSON-lines file; errors name the 1-based line."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield frame_from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"line {lineno}: {type(exc).__name__}: {exc}") from None


def read_frames(path) -> list[Frame]:
    return list(iter_frames(path))


def infer_schema(frames: Iterable[Frame]) -> ChannelSchema | None:
    for f in frames:
        for roi in f.rois:
            return ChannelSchema(tuple((pid, vec.dimension) for pid, vec in sorted(roi.channels.items())))
    return None


# ---------------------------------------------------------------- heatmaps


def write_heatmap_csv(grid: HeatGrid, path) -> None:
    """Row-major, row 0 is the lowest y band; empty cells are ``NA``."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in grid.values:
            fh.write(",".join("NA" if math.isnan(v) else repr(float(v)) for v in row))
            fh.write("\n")


def heatmap_to_pgm(grid: HeatGrid) -> bytes:
    vals = grid.values
    filled = ~np.isnan(vals)
    lo = float(vals[filled].min()) if filled.any() else 0.0
    hi = float(vals[filled].max()) if filled.any() else 0.0
    span = hi - lo
    img = np.zeros(vals.shape, dtype=np.uint8)
    if filled.any():
        scaled = (vals[filled] - lo) / span * 255.0 if span > 0 else np.full(int(filled.sum()), 255.0)
        img[filled] = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    ny, nx = vals.shape
    header = f"P5\n# min={lo!r} max={hi!r}\n{nx} {ny}\n255\n".encode("ascii")
    return header + img.tobytes()


def write_heatmap_pgm(grid: HeatGrid, path) -> None:
    Path(path).write_bytes(heatmap_to_pgm(grid))
