"""Readers and writers for scenes, labels, motions and cached distance grids.

Every writer is deterministic so that write -> read -> write reproduces the
same bytes. Floats are written with repr(), which round-trips exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .body import NUM_JOINTS
from .geometry import SdfGrid, TriangleMesh
from .motion import MotionSequence

logger = logging.getLogger(__name__)

MOTION_FORMAT = "sceneplace-motion"
MOTION_VERSION = 1
SDF_MAGIC = b"PSDF"
SDF_VERSION = 1
_SDF_HEADER = struct.Struct("<4sI3I3dd")
CACHE_ENV = "SCENEPLACE_CACHE_DIR"


class FormatError(ValueError):
    pass


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def atomic_write(path, data) -> None:
    """Write bytes or text to a temp file beside `path`, then rename over it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else bytes(data)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def dump_json(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True, allow_nan=False) + "\n"


# --- OBJ ---------------------------------------------------------------------------------

def parse_obj(text: str, name: str = "<obj>") -> TriangleMesh:
    """Vertices and faces of a Wavefront OBJ; polygons are fan-triangulated."""
    verts, faces = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        try:
            if tag == "v":
                if len(parts) < 4:
                    raise FormatError("vertex needs 3 coordinates")
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                if len(parts) < 4:
                    raise FormatError("face needs at least 3 vertices")
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/", 1)[0])
                    i = i - 1 if i > 0 else len(verts) + i
                    if not 0 <= i < len(verts):
                        raise FormatError(f"face index {tok} refers to a missing vertex")
                    idx.append(i)
                faces.extend([idx[0], idx[j], idx[j + 1]] for j in range(1, len(idx) - 1))
        except ValueError as exc:
            raise FormatError(f"{name}:{lineno}: {exc}") from None
    if not verts:
        raise FormatError(f"{name}: no vertices")
    try:
        return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from None


def format_obj(vertices, triangles) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in np.asarray(vertices, float).tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(triangles).tolist()]
    return "\n".join(lines) + "\n"


def read_obj(path) -> TriangleMesh:
    return parse_obj(Path(path).read_text(), str(path))


def write_obj(path, mesh: TriangleMesh) -> None:
    atomic_write(path, format_obj(mesh.vertices, mesh.triangles))


# --- labels ------------------------------------------------------------------------------

def read_labels(path, vertex_count: int | None = None) -> np.ndarray:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    labels = doc.get("labels") if isinstance(doc, dict) else doc
    if not isinstance(labels, list) or not all(isinstance(x, int) and x >= 0 for x in labels):
        raise FormatError(f"{path}: expected an array of non-negative integers")
    if vertex_count is not None and len(labels) != vertex_count:
        raise FormatError(f"{path}: {len(labels)} labels for {vertex_count} vertices")
    return np.array(labels, dtype=np.int64)


def write_labels(path, labels) -> None:
    atomic_write(path, json.dumps([int(x) for x in labels]) + "\n")


def load_scene(mesh_path, labels_path=None) -> TriangleMesh:
    """OBJ mesh plus an optional index-aligned label sidecar."""
    mesh = read_obj(mesh_path)
    if labels_path is None:
        return mesh
    labels = read_labels(labels_path, len(mesh.vertices))
    return TriangleMesh(mesh.vertices, mesh.triangles, labels)


# --- motion ------------------------------------------------------------------------------

def motion_to_doc(motion: MotionSequence) -> dict:
    regular = np.allclose(motion.timestamps, np.arange(len(motion)) / motion.fps,
                          rtol=0, atol=1e-12)
    frames = []
    for i in range(len(motion)):
        fr = {"t": motion.translations[i].tolist(), "p": motion.poses[i].tolist()}
        if not regular:
            fr["time"] = float(motion.timestamps[i])
        frames.append(fr)
    return {"format": MOTION_FORMAT, "version": MOTION_VERSION, "fps": motion.fps,
            "label": motion.label, "frames": frames}


def motion_from_doc(doc, name: str = "<motion>") -> MotionSequence:
    if not isinstance(doc, dict) or "frames" not in doc or "fps" not in doc:
        raise FormatError(f"{name}: expected an object with 'fps' and 'frames'")
    if doc.get("version", MOTION_VERSION) != MOTION_VERSION:
        raise FormatError(f"{name}: unsupported version {doc['version']!r}")
    fps = doc["fps"]
    if not isinstance(fps, (int, float)) or not fps > 0:
        raise FormatError(f"{name}: fps must be positive, got {fps!r}")
    frames = doc["frames"]
    if not isinstance(frames, list) or len(frames) < 2:
        raise FormatError(f"{name}: need at least 2 frames")
    poses, trans, times = [], [], []
    for i, fr in enumerate(frames):
        try:
            p = np.array(fr["p"], dtype=np.float64)
            t = np.array(fr["t"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{name}: frame {i}: malformed ({exc})") from None
        if p.shape != (NUM_JOINTS, 3):
            raise FormatError(f"{name}: frame {i}: expected {NUM_JOINTS} joint rotations, "
                              f"got {p.shape[0] if p.ndim else 0}")
        if t.shape != (3,):
            raise FormatError(f"{name}: frame {i}: translation must have 3 values")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(t))):
            raise FormatError(f"{name}: frame {i}: non-finite value")
        poses.append(p)
        trans.append(t)
        if "time" in fr:
            times.append(float(fr["time"]))
    if times and len(times) != len(frames):
        raise FormatError(f"{name}: 'time' must be given for every frame or none")
    try:
        return MotionSequence(float(fps), np.stack(poses), np.stack(trans),
                              np.array(times) if times else None, str(doc.get("label", "")))
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from None


def load_motion(path) -> MotionSequence:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return motion_from_doc(doc, str(path))


def write_motion(path, motion: MotionSequence) -> None:
    atomic_write(path, json.dumps(motion_to_doc(motion), separators=(",", ":")) + "\n")


# --- SDF cache ---------------------------------------------------------------------------

def sdf_to_bytes(grid: SdfGrid) -> bytes:
    nx, ny, nz = (int(d) for d in grid.dims)
    head = _SDF_HEADER.pack(SDF_MAGIC, SDF_VERSION, nx, ny, nz,
                            *(float(o) for o in grid.origin), float(grid.cell_size))
    return head + np.ascontiguousarray(grid.values, dtype="<f4").tobytes()


def sdf_from_bytes(raw: bytes, name: str = "<sdf>") -> SdfGrid:
    if len(raw) < _SDF_HEADER.size:
        raise FormatError(f"{name}: truncated header")
    magic, version, nx, ny, nz, ox, oy, oz, cell = _SDF_HEADER.unpack_from(raw)
    if magic != SDF_MAGIC:
        raise FormatError(f"{name}: bad magic {magic!r}")
    if version != SDF_VERSION:
        raise FormatError(f"{name}: unsupported version {version}")
    count = nx * ny * nz
    if len(raw) != _SDF_HEADER.size + 4 * count:
        raise FormatError(f"{name}: expected {count} values")
    values = np.frombuffer(raw, "<f4", count, _SDF_HEADER.size).reshape(nz, ny, nx)
    return SdfGrid(np.array([ox, oy, oz]), cell, (nx, ny, nz), values.astype(np.float32))


def read_sdf(path) -> SdfGrid:
    return sdf_from_bytes(Path(path).read_bytes(), str(path))


def write_sdf(path, grid: SdfGrid) -> None:
    atomic_write(path, sdf_to_bytes(grid))


def cache_dir() -> Path | None:
    root = os.environ.get(CACHE_ENV)
    return Path(root) if root else None


def cached_grid(key: str, build):
    """Return build() memoised on disk under $SCENEPLACE_CACHE_DIR/<key>.psdf."""
    root = cache_dir()
    if root is None:
        return build()
    path = root / f"{key}.psdf"
    if path.exists():
        try:
            return read_sdf(path)
        except FormatError as exc:
            logger.warning("ignoring unreadable cache entry %s: %s", path, exc)
    grid = build()
    write_sdf(path, grid)
    return grid
