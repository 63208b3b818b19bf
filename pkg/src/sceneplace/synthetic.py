"""Procedural labeled box rooms and short scripted motion clips for testing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .body import NUM_JOINTS, BodyModel
from .geometry import TriangleMesh
from .interaction import DEFAULT_PALETTE, SemanticPalette
from .motion import MotionSequence

WALL_HEIGHT = 2.4
WALL_THICKNESS = 0.1
FLOOR_THICKNESS = 0.1
FREE_SPACE_CELL = 0.1

# unit cube corners and outward-facing triangles
_CUBE_V = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float) - 0.5
_CUBE_T = np.array([
    [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
    [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
])


@dataclass(frozen=True)
class Primitive:
    """Box (size = full extents) or vertical cylinder (size = (diameter, height, diameter))."""

    kind: str
    center: tuple  # x, y, z of the volume centre
    size: tuple
    label: str
    yaw: float = 0.0
    segments: int = 16

    def __post_init__(self):
        if self.kind not in ("box", "cylinder"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if len(self.size) != 3 or min(self.size) <= 0:
            raise ValueError("primitive size must be three positive extents")

    def footprint(self) -> np.ndarray:
        """Horizontal corners (4, 2) of the rotated bounding rectangle."""
        hx, hz = self.size[0] / 2, self.size[2] / 2
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        local = np.array([[-hx, -hz], [hx, -hz], [hx, hz], [-hx, hz]])
        rot = np.array([[c, s], [-s, c]])
        return local @ rot.T + np.array([self.center[0], self.center[2]])

    def mesh_arrays(self):
        if self.kind == "box":
            v, t = _CUBE_V * np.asarray(self.size, float), _CUBE_T
        else:
            v, t = _cylinder(self.segments)
            v = v * np.asarray(self.size, float)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
        return v @ rot.T + np.asarray(self.center, float), t


def _cylinder(n):
    a = 2 * math.pi * np.arange(n) / n
    ring = np.column_stack([0.5 * np.cos(a), np.zeros(n), 0.5 * np.sin(a)])
    v = np.vstack([ring - [0, 0.5, 0], ring + [0, 0.5, 0], [[0, -0.5, 0], [0, 0.5, 0]]])
    tris = []
    for i in range(n):
        j = (i + 1) % n
        tris += [[i, n + i, j], [j, n + i, n + j], [2 * n, i, j], [2 * n + 1, n + j, n + i]]
    return v, np.array(tris)


@dataclass(frozen=True)
class SyntheticSceneSpec:
    width: float = 4.0  # x extent of the floor, m
    depth: float = 4.0  # z extent
    wall_height: float = WALL_HEIGHT
    furniture: tuple = ()
    name: str = "room"

    def __post_init__(self):
        if self.width <= 0 or self.depth <= 0 or self.wall_height <= 0:
            raise ValueError("room extents must be positive")
        names = set(DEFAULT_PALETTE.values()) - {"none"}
        for p in self.furniture:
            if p.label not in names:
                raise ValueError(f"label {p.label!r} is not in the palette")
            fp = p.footprint()
            if (fp[:, 0].min() < -1e-9 or fp[:, 0].max() > self.width + 1e-9
                    or fp[:, 1].min() < -1e-9 or fp[:, 1].max() > self.depth + 1e-9):
                raise ValueError(f"{p.label} primitive at {p.center} leaves the room")
            if p.center[1] - p.size[1] / 2 < -1e-9:
                raise ValueError(f"{p.label} primitive at {p.center} goes below the floor")


@dataclass(frozen=True, eq=False)
class SceneTruth:
    floor_height: float
    bounds: np.ndarray  # (2, 3) interior of the room
    surfaces: list  # [{"label", "height", "center", "size"}] horizontal tops of furniture
    free_space: np.ndarray  # (nz, nx) bool, True where the floor is unobstructed
    free_space_cell: float = FREE_SPACE_CELL

    def surfaces_of(self, label: str) -> list:
        return [s for s in self.surfaces if s["label"] == label]

    def to_dict(self) -> dict:
        return {
            "floor_height": self.floor_height,
            "bounds": self.bounds.tolist(),
            "surfaces": self.surfaces,
            "free_space_cell": self.free_space_cell,
            "free_space": self.free_space.astype(int).tolist(),
        }


def _overlaps(a: Primitive, b: Primitive, gap: float = 0.0) -> bool:
    fa, fb = a.footprint(), b.footprint()
    return not (fa[:, 0].max() + gap <= fb[:, 0].min() or fb[:, 0].max() + gap <= fa[:, 0].min()
                or fa[:, 1].max() + gap <= fb[:, 1].min()
                or fb[:, 1].max() + gap <= fa[:, 1].min())


def generate_synthetic_scene(spec: SyntheticSceneSpec, palette: SemanticPalette | None = None,
                             reject_overlaps: bool = False):
    """Labeled room mesh (floor slab, four walls, furniture) and its ground truth."""
    palette = palette or SemanticPalette()
    if reject_overlaps:
        f = spec.furniture
        for i in range(len(f)):
            for j in range(i + 1, len(f)):
                if _overlaps(f[i], f[j]):
                    raise ValueError(f"primitives {i} and {j} overlap")
    w, d, h, t = spec.width, spec.depth, spec.wall_height, WALL_THICKNESS
    shell = [
        Primitive("box", (w / 2, -FLOOR_THICKNESS / 2, d / 2),
                  (w + 2 * t, FLOOR_THICKNESS, d + 2 * t), "floor"),
        Primitive("box", (-t / 2, h / 2, d / 2), (t, h, d + 2 * t), "wall"),
        Primitive("box", (w + t / 2, h / 2, d / 2), (t, h, d + 2 * t), "wall"),
        Primitive("box", (w / 2, h / 2, -t / 2), (w, h, t), "wall"),
        Primitive("box", (w / 2, h / 2, d + t / 2), (w, h, t), "wall"),
    ]
    verts, tris, labels = [], [], []
    offset = 0
    for p in shell + list(spec.furniture):
        v, tr = p.mesh_arrays()
        verts.append(v)
        tris.append(tr + offset)
        labels.append(np.full(len(v), palette.id_of(p.label)))
        offset += len(v)
    mesh = TriangleMesh(np.vstack(verts), np.vstack(tris), np.concatenate(labels))

    nx, nz = int(math.ceil(w / FREE_SPACE_CELL)), int(math.ceil(d / FREE_SPACE_CELL))
    cx = (np.arange(nx) + 0.5) * FREE_SPACE_CELL
    cz = (np.arange(nz) + 0.5) * FREE_SPACE_CELL
    free = np.ones((nz, nx), dtype=bool)
    surfaces = []
    for p in spec.furniture:
        fp = p.footprint()
        inside = ((cx[None, :] >= fp[:, 0].min()) & (cx[None, :] <= fp[:, 0].max())
                  & (cz[:, None] >= fp[:, 1].min()) & (cz[:, None] <= fp[:, 1].max()))
        free &= ~inside
        surfaces.append({
            "label": p.label,
            "height": float(p.center[1] + p.size[1] / 2),
            "center": [float(p.center[0]), float(p.center[2])],
            "size": [float(p.size[0]), float(p.size[2])],
            "yaw": float(p.yaw),
        })
    bounds = np.array([[0.0, 0.0, 0.0], [w, h, d]])
    return mesh, SceneTruth(0.0, bounds, surfaces, free)


# --- furniture --------------------------------------------------------------------------

def chair(x, z, yaw, seat_height=0.45, size=0.45, label="chair") -> list:
    """Seat block plus a backrest on the seat's local -z side."""
    c, s = math.cos(yaw), math.sin(yaw)
    back_off = -(size / 2 - 0.03) * np.array([s, c])
    return [
        Primitive("box", (x, seat_height / 2, z), (size, seat_height, size), label, yaw),
        Primitive("box", (x + back_off[0], seat_height + 0.225, z + back_off[1]),
                  (size, 0.45, 0.06), label, yaw),
    ]


def table(x, z, yaw, height=0.75, width=1.0, depth=0.7, label="table") -> list:
    return [Primitive("box", (x, height / 2, z), (width, height, depth), label, yaw)]


def random_scene_spec(rng: np.random.Generator, name: str = "room") -> SyntheticSceneSpec:
    """A 4-5 m room with one to three pieces of furniture placed without overlap."""
    width = float(rng.uniform(4.0, 5.0))
    depth = float(rng.uniform(4.0, 5.0))
    pieces = []
    wanted = ["chair", "table", "chair", "cabinet", "sofa"]
    count = int(rng.integers(1, 4))
    for kind in wanted[:count]:
        for _ in range(50):
            yaw = float(rng.integers(0, 4)) * math.pi / 2
            x = float(rng.uniform(0.6, width - 0.6))
            z = float(rng.uniform(0.6, depth - 0.6))
            if kind == "chair":
                cand = chair(x, z, yaw, seat_height=float(rng.uniform(0.38, 0.44)))
            elif kind == "table":
                cand = table(x, z, yaw, height=float(rng.uniform(0.70, 0.80)))
            elif kind == "cabinet":
                cand = [Primitive("box", (x, 0.9, z), (0.6, 1.8, 0.4), "cabinet", yaw)]
            else:
                cand = chair(x, z, yaw, seat_height=0.42, size=0.9, label="sofa")
            try:
                SyntheticSceneSpec(width, depth, furniture=tuple(cand))
            except ValueError:
                continue
            if any(_overlaps(a, b, gap=0.3) for a in cand for b in pieces):
                continue
            pieces.extend(cand)
            break
    return SyntheticSceneSpec(width, depth, furniture=tuple(pieces), name=name)


def scene_suite(count: int = 20, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return [random_scene_spec(rng, name=f"room_{i:02d}") for i in range(count)]


# --- motions ----------------------------------------------------------------------------

MOTION_KINDS = ("stand", "walk", "sit", "reach", "jump")
J = {n: i for i, n in enumerate((
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
))}


@dataclass(frozen=True)
class SyntheticMotionSpec:
    kind: str
    fps: float = 30.0
    duration: float | None = None
    drift: float = 0.0  # amplitude of slow vertical root wander, m
    seed: int = 0
    label: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MOTION_KINDS:
            raise ValueError(f"unknown motion kind {self.kind!r}; expected one of {MOTION_KINDS}")
        if not self.fps > 0 or self.drift < 0:
            raise ValueError("fps must be positive and drift non-negative")


_DEFAULT_DURATION = {"stand": 1.0, "walk": 1.2, "sit": 1.5, "reach": 1.2, "jump": 1.0}


def _smooth(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3 - 2 * u)


def _arms_down(p, amount=1.0):
    p[:, J["left_shoulder"], 2] = -1.4 * amount
    p[:, J["right_shoulder"], 2] = 1.4 * amount


def _script(kind: str, t: np.ndarray):
    """Poses (F, 24, 3) and extra root height (F,) for a kind."""
    f = len(t)
    p = np.zeros((f, NUM_JOINTS, 3))
    lift = np.zeros(f)
    _arms_down(p)
    if kind == "stand":
        sway = 0.05 * np.sin(2 * math.pi * 0.7 * t)
        p[:, J["spine1"], 2] = sway
        p[:, J["left_shoulder"], 0] = 0.15 * np.sin(2 * math.pi * 0.5 * t)
    elif kind == "walk":
        phase = 2 * math.pi * 0.9 * t
        swing = 0.4 * np.sin(phase)
        lift_l = 1.4 * np.maximum(0, np.cos(phase))
        lift_r = 1.4 * np.maximum(0, -np.cos(phase))
        # the swinging leg folds at hip and knee so its foot clears the floor
        p[:, J["left_hip"], 0] = -swing - 0.7 * lift_l
        p[:, J["right_hip"], 0] = swing - 0.7 * lift_r
        p[:, J["left_knee"], 0] = lift_l
        p[:, J["right_knee"], 0] = lift_r
        for side in ("left", "right"):  # keep the feet level
            p[:, J[f"{side}_ankle"], 0] = -(p[:, J[f"{side}_hip"], 0] + p[:, J[f"{side}_knee"], 0])
        p[:, J["left_shoulder"], 1] = 0.3 * np.sin(phase)
        p[:, J["right_shoulder"], 1] = 0.3 * np.sin(phase)
    elif kind == "sit":
        u = _smooth((t - 0.2) / 0.8)
        p[:, J["left_hip"], 0] = p[:, J["right_hip"], 0] = -math.pi / 2 * u
        p[:, J["left_knee"], 0] = p[:, J["right_knee"], 0] = math.pi / 2 * u
        p[:, J["spine1"], 0] = -0.25 * u * (1 - u) * 4
        for side in ("left", "right"):
            p[:, J[f"{side}_ankle"], 0] = -(p[:, J[f"{side}_hip"], 0] + p[:, J[f"{side}_knee"], 0])
    elif kind == "reach":
        u = _smooth((t - 0.2) / 0.5)
        p[:, J["right_shoulder"], 2] = 1.4 * (1 - u) + 0.9 * u
        p[:, J["right_shoulder"], 1] = 1.45 * u
        p[:, J["right_elbow"], 1] = -0.2 * u
        p[:, J["spine1"], 0] = 0.45 * u
        p[:, J["right_wrist"], 2] = 0.35 * u
    elif kind == "jump":
        crouch = _smooth(t / 0.3) * (1 - _smooth((t - 0.3) / 0.1)) \
            + _smooth((t - 0.7) / 0.1) * (1 - _smooth((t - 0.8) / 0.2))
        p[:, J["left_hip"], 0] = p[:, J["right_hip"], 0] = -0.6 * crouch
        p[:, J["left_knee"], 0] = p[:, J["right_knee"], 0] = 1.1 * crouch
        p[:, J["left_ankle"], 0] = p[:, J["right_ankle"], 0] = -0.5 * crouch
        air = (t > 0.35) & (t < 0.75)
        tau = (t - 0.35) / 0.4
        lift = np.where(air, 4 * 0.2 * tau * (1 - tau), 0.0)
    return p, lift


def _planted_path(body: BodyModel, poses, stepping: bool) -> np.ndarray:
    """Root (x, z) keeping the feet fixed: the backward-moving ankle when stepping, else both."""
    joints = body.pose(poses, np.zeros((len(poses), 3)))[1].positions
    ankles = joints[:, [J["left_ankle"], J["right_ankle"]]][..., [0, 2]]
    if stepping:
        dz = np.diff(ankles[..., 1], axis=0)
        foot = np.argmin(dz, axis=1)
        rows = np.arange(len(dz))
        step = ankles[rows + 1, foot] - ankles[rows, foot]
        return np.vstack([np.zeros(2), np.cumsum(-step, axis=0)])
    mid = ankles.mean(axis=1)
    return mid[0] - mid


def synthetic_motion(spec: SyntheticMotionSpec, body: BodyModel | None = None) -> MotionSequence:
    """Scripted clip whose supporting vertices rest on y = 0 unless airborne or drifting."""
    body = body or BodyModel.default()
    duration = spec.duration or _DEFAULT_DURATION[spec.kind]
    n = max(2, int(round(duration * spec.fps)) + 1)
    t = np.arange(n) / spec.fps
    poses, lift = _script(spec.kind, t)
    trans = np.zeros((n, 3))
    trans[:, [0, 2]] = _planted_path(body, poses, stepping=spec.kind == "walk")
    low = body.vertices(poses, trans)[..., 1].min(axis=1)
    trans[:, 1] = -low + lift
    if spec.drift > 0:
        rng = np.random.default_rng(spec.seed)
        freq = rng.uniform(0.2, 0.5, size=2)
        phase = rng.uniform(0, 2 * math.pi, size=2)
        wave = np.sin(2 * math.pi * freq[0] * t + phase[0]) + np.sin(2 * math.pi * freq[1] * t
                                                                   + phase[1])
        wave = (wave - wave.min()) / max(np.ptp(wave), 1e-12)
        trans[:, 1] += spec.drift * wave
    return MotionSequence(spec.fps, poses, trans, label=spec.label or spec.kind)


def motion_suite(fps: float = 30.0, drift: float = 0.0, seed: int = 0,
                 body: BodyModel | None = None) -> list:
    body = body or BodyModel.default()
    return [synthetic_motion(SyntheticMotionSpec(k, fps=fps, drift=drift, seed=seed + i), body)
            for i, k in enumerate(MOTION_KINDS)]

