"""Per-vertex contact probabilities and semantic targets for each frame."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .body import BodyModel
from .motion import MotionSequence

NONE_CLASS = 255

DEFAULT_PALETTE = {
    0: "floor", 1: "wall", 2: "chair", 3: "table", 4: "bed", 5: "sofa",
    6: "cabinet", 7: "object", NONE_CLASS: "none",
}
FLOOR, WALL, CHAIR, TABLE = 0, 1, 2, 3

FEATURE_MAGIC = b"PFTR"


class FeatureError(ValueError):
    pass


class SemanticPalette(dict):
    """class id -> name; id 255 is always 'none'."""

    def __init__(self, entries=None):
        super().__init__(DEFAULT_PALETTE if entries is None else entries)
        self[NONE_CLASS] = "none"
        names = [v for k, v in self.items() if k != NONE_CLASS]
        if "none" in names:
            raise ValueError("'none' is reserved for class 255")

    def id_of(self, name: str) -> int:
        for k, v in self.items():
            if v == name:
                return k
        raise KeyError(name)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    contact: np.ndarray  # (F, N) float32 in [0, 1]
    semantic: np.ndarray  # (F, N) uint16 class ids

    def __post_init__(self):
        c = np.ascontiguousarray(self.contact, dtype=np.float32)
        s = np.ascontiguousarray(self.semantic, dtype=np.uint16)
        if c.ndim != 2 or c.shape != s.shape:
            raise FeatureError(f"contact {c.shape} and semantic {s.shape} must be equal (F, N)")
        bad = np.argwhere(~((c >= 0) & (c <= 1)))
        if len(bad):
            f, v = bad[0]
            raise FeatureError(f"contact probability {c[f, v]!r} out of [0, 1] at frame {f}, vertex {v}")
        object.__setattr__(self, "contact", c)
        object.__setattr__(self, "semantic", s)

    @property
    def num_frames(self) -> int:
        return self.contact.shape[0]

    @property
    def num_vertices(self) -> int:
        return self.contact.shape[1]

    def take(self, indices) -> "FeatureMap":
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureMap(self.contact[idx], self.semantic[idx])

    @classmethod
    def zeros(cls, frames: int, vertices: int) -> "FeatureMap":
        return cls(np.zeros((frames, vertices), np.float32),
                   np.full((frames, vertices), NONE_CLASS, np.uint16))


def validate_features(features: FeatureMap, frames=None, vertices=None, palette=None) -> FeatureMap:
    if frames is not None and features.num_frames != frames:
        raise FeatureError(f"feature map has {features.num_frames} frames, motion has {frames}")
    if vertices is not None and features.num_vertices != vertices:
        raise FeatureError(
            f"feature map has {features.num_vertices} vertices, template has {vertices}")
    palette = SemanticPalette() if palette is None else palette
    known = np.array(sorted(palette), dtype=np.int64)
    unknown = np.argwhere(~np.isin(features.semantic, known))
    if len(unknown):
        f, v = unknown[0]
        raise FeatureError(f"unknown class id {int(features.semantic[f, v])} at frame {f}, vertex {v}")
    return features


def write_features(path, features: FeatureMap) -> None:
    path = Path(path)
    if path.suffix == ".json":
        doc = {
            "format": "sceneplace-features",
            "frames": features.num_frames,
            "vertices": features.num_vertices,
            "contact": [[float(x) for x in row] for row in features.contact],
            "semantic": features.semantic.astype(int).tolist(),
        }
        path.write_text(json.dumps(doc, separators=(",", ":")) + "\n")
        return
    header = FEATURE_MAGIC + struct.pack("<II", features.num_frames, features.num_vertices)
    path.write_bytes(header + features.contact.astype("<f4").tobytes()
                     + features.semantic.astype("<u2").tobytes())


def read_features(path) -> FeatureMap:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        f, n = doc["frames"], doc["vertices"]
        contact = np.asarray(doc["contact"], dtype=np.float64)
        semantic = np.asarray(doc["semantic"], dtype=np.int64)
        if contact.shape != (f, n) or semantic.shape != (f, n):
            raise FeatureError(f"{path}: arrays do not match declared shape ({f}, {n})")
        if semantic.min(initial=0) < 0 or semantic.max(initial=0) > 0xFFFF:
            raise FeatureError(f"{path}: class ids must fit in uint16")
        bad = np.argwhere(~((contact >= 0) & (contact <= 1)))
        if len(bad):
            fi, vi = bad[0]
            raise FeatureError(
                f"contact probability {contact[fi, vi]!r} out of [0, 1] at frame {fi}, vertex {vi}")
        return FeatureMap(contact, semantic)
    raw = path.read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise FeatureError(f"{path}: bad magic {raw[:4]!r}")
    f, n = struct.unpack("<II", raw[4:12])
    size = f * n
    if len(raw) != 12 + 6 * size:
        raise FeatureError(f"{path}: expected {12 + 6 * size} bytes, found {len(raw)}")
    contact = np.frombuffer(raw, "<f4", size, 12).reshape(f, n)
    semantic = np.frombuffer(raw, "<u2", size, 12 + 4 * size).reshape(f, n)
    return FeatureMap(contact, semantic)


def load_features(path, frames=None, vertices=None, palette=None) -> FeatureMap:
    """Read a precomputed feature file and check it against the motion/template."""
    return validate_features(read_features(path), frames, vertices, palette)


@dataclass(frozen=True)
class HeuristicParams:
    sigma: float = 0.05
    velocity_threshold: float = 0.05
    seat_band: tuple[float, float] = (0.3, 0.55)
    table_band: tuple[float, float] = (0.6, 1.1)
    reach: float = 0.4  # min horizontal palm distance from the pelvis for a table contact
    window: float = 0.1
    min_labeled_contact: float = 0.05
    min_contact: float = 1e-3  # below this a vertex is treated as free


def vertex_speeds(vertices, timestamps, window: float) -> np.ndarray:
    """Per-vertex speed, maxed over a +-window neighbourhood of frames."""
    ts = np.asarray(timestamps, float)
    grad = np.gradient(vertices, ts, axis=0)
    speed = np.linalg.norm(grad, axis=-1)
    lo = np.searchsorted(ts, ts - window - 1e-9, side="left")
    hi = np.searchsorted(ts, ts + window + 1e-9, side="right")
    out = np.empty_like(speed)
    for i in range(len(ts)):
        out[i] = speed[lo[i]:hi[i]].max(axis=0)
    return out


def estimate_features_heuristic(motion: MotionSequence, body: BodyModel,
                                params: HeuristicParams | None = None) -> FeatureMap:
    """Geometric stand-in for a learned contact model.

    Contact decays exponentially with height above the support the vertex
    would rest on and with speed above a threshold. Supports are the floor
    (lowest vertex of the clip) plus per-frame seat and table planes found
    under static seat regions and under static palms held away from the body.
    """
    p = params or HeuristicParams()
    verts = body.vertices(motion.poses, motion.translations)
    floor = verts[..., 1].min()
    height = verts[..., 1] - floor
    speed = vertex_speeds(verts, motion.timestamps, p.window)
    still = np.exp(-np.maximum(0.0, speed - p.velocity_threshold) / p.velocity_threshold)

    frames, n = height.shape
    rel = height.copy()
    sem = np.full((frames, n), NONE_CLASS, dtype=np.uint16)
    tpl = body.template
    sem[:, tpl.region("foot")] = FLOOR

    pelvis = body.pose(motion.poses, motion.translations)[1].positions[:, 0]

    def plane_under(region, band, label, reach=0.0):
        if len(region) == 0:
            return
        h = height[:, region]
        low = np.argmin(h, axis=1)
        rows = np.arange(frames)
        level = h[rows, low]
        offset = verts[rows, region[low]] - pelvis
        ok = (level >= band[0]) & (level <= band[1]) & (still[rows, region[low]] > 0.5) \
            & (np.hypot(offset[:, 0], offset[:, 2]) >= reach)
        for f in np.flatnonzero(ok):
            rel[f, region] = np.maximum(0.0, height[f, region] - level[f])
            sem[f, region] = label

    plane_under(tpl.region("seat"), p.seat_band, CHAIR)
    palm = tpl.region("palm")
    for hand in ("part:left_hand", "part:right_hand"):
        plane_under(np.intersect1d(palm, tpl.region(hand)), p.table_band, TABLE, p.reach)

    contact = np.exp(-np.maximum(rel, 0.0) / p.sigma) * still
    # a far vertex with a tiny probability still pulls toward the nearest surface,
    # and the pull is unopposed along flat directions of the placement energy
    contact[contact < p.min_contact] = 0.0
    sem[contact < p.min_labeled_contact] = NONE_CLASS
    return FeatureMap(np.clip(contact, 0.0, 1.0), sem)
