"""24-joint skinned body: forward kinematics, linear blend skinning, pose derivatives.

Coordinates are metres with +y up; the rest pose is a T-pose standing on y = 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels

NUM_JOINTS = 24
SMALL_ANGLE = 1e-6

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
)
PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

REST_JOINTS = np.array([
    [0.00, 0.92, 0.00], [0.09, 0.84, 0.00], [-0.09, 0.84, 0.00], [0.00, 1.03, 0.00],
    [0.10, 0.48, 0.00], [-0.10, 0.48, 0.00], [0.00, 1.16, 0.00], [0.10, 0.08, 0.00],
    [-0.10, 0.08, 0.00], [0.00, 1.22, 0.00], [0.10, 0.03, 0.12], [-0.10, 0.03, 0.12],
    [0.00, 1.45, 0.00], [0.07, 1.38, 0.00], [-0.07, 1.38, 0.00], [0.00, 1.55, 0.00],
    [0.18, 1.40, 0.00], [-0.18, 1.40, 0.00], [0.44, 1.40, 0.00], [-0.44, 1.40, 0.00],
    [0.68, 1.40, 0.00], [-0.68, 1.40, 0.00], [0.76, 1.40, 0.00], [-0.76, 1.40, 0.00],
])


@dataclass(frozen=True, eq=False)
class Skeleton:
    parents: np.ndarray
    offsets: np.ndarray  # offsets[0] is the root's rest position

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        offsets = np.asarray(self.offsets, dtype=np.float64).reshape(-1, 3)
        if len(parents) != NUM_JOINTS or len(offsets) != NUM_JOINTS:
            raise ValueError(f"skeleton must have {NUM_JOINTS} joints")
        if parents[0] != -1 or any(not 0 <= parents[j] < j for j in range(1, NUM_JOINTS)):
            raise ValueError("parents must form a tree rooted at joint 0 in topological order")
        if not np.all(np.isfinite(offsets)):
            raise ValueError("joint offsets must be finite")
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def from_rest_joints(cls, joints, parents=PARENTS) -> "Skeleton":
        joints = np.asarray(joints, float)
        offsets = joints.copy()
        for j in range(1, NUM_JOINTS):
            offsets[j] = joints[j] - joints[parents[j]]
        return cls(np.asarray(parents), offsets)

    @property
    def rest_joints(self) -> np.ndarray:
        out = np.zeros((NUM_JOINTS, 3))
        out[0] = self.offsets[0]
        for j in range(1, NUM_JOINTS):
            out[j] = out[self.parents[j]] + self.offsets[j]
        return out

    def children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in range(NUM_JOINTS)]
        for j in range(1, NUM_JOINTS):
            kids[self.parents[j]].append(j)
        return kids


def wrap_axis_angle(aa) -> np.ndarray:
    """Map rotation vectors with angle > pi onto the equivalent angle in [0, pi]."""
    aa = np.asarray(aa, dtype=np.float64)
    ang = np.linalg.norm(aa, axis=-1, keepdims=True)
    over = ang > np.pi
    if not np.any(over):
        return aa
    turns = np.floor((ang + np.pi) / (2 * np.pi))
    new = ang - 2 * np.pi * turns
    scale = np.where(over, new / np.where(ang > 0, ang, 1.0), 1.0)
    return aa * scale


@dataclass(frozen=True, eq=False)
class BodyPose:
    translation: np.ndarray
    rotations: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r = np.asarray(self.rotations, dtype=np.float64).reshape(NUM_JOINTS, 3)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(r))):
            raise ValueError("pose values must be finite")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotations", wrap_axis_angle(r))

    @classmethod
    def identity(cls) -> "BodyPose":
        return cls(np.zeros(3), np.zeros((NUM_JOINTS, 3)))


def skew(v) -> np.ndarray:
    v = np.asarray(v, float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _series(theta):
    """sin(t)/t, (1-cos t)/t^2, (t - sin t)/t^3 with Taylor expansions near zero."""
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    t2 = theta * theta
    a = np.where(small, 1 - t2 / 6, np.sin(t) / t)
    b = np.where(small, 0.5 - t2 / 24, (1 - np.cos(t)) / (t * t))
    c = np.where(small, 1 / 6 - t2 / 120, (t - np.sin(t)) / (t * t * t))
    return a, b, c


def rodrigues(aa) -> np.ndarray:
    aa = np.asarray(aa, float)
    theta = np.linalg.norm(aa, axis=-1)
    a, b, _ = _series(theta)
    k = skew(aa)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def left_jacobian(aa) -> np.ndarray:
    """J with d/de exp(aa + e) = skew(J e) exp(aa) at e = 0."""
    aa = np.asarray(aa, float)
    theta = np.linalg.norm(aa, axis=-1)
    _, b, c = _series(theta)
    k = skew(aa)
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + b[..., None, None] * k + c[..., None, None] * (k @ k)


@dataclass(frozen=True, eq=False)
class JointTransforms:
    """World rotation and position of every joint, batched over frames."""

    rotations: np.ndarray  # (F, 24, 3, 3)
    positions: np.ndarray  # (F, 24, 3)
    rest_joints: np.ndarray  # (24, 3)

    def apply(self, joint: int, points) -> np.ndarray:
        """Map rest-space points through joint `joint`'s skinning transform."""
        p = np.asarray(points, float) - self.rest_joints[joint]
        return np.einsum("fab,nb->fna", self.rotations[:, joint], p) + self.positions[:, None, joint]


def forward_kinematics(skeleton: Skeleton, rotations, translation) -> JointTransforms:
    """Compose local joint rotations parent to child.

    `rotations` is (F, 24, 3) or (24, 3) axis-angle, `translation` (F, 3) or (3,).
    The root is rotated about its rest position, then shifted by the translation.
    """
    rot = np.asarray(rotations, float).reshape(-1, NUM_JOINTS, 3)
    trans = np.asarray(translation, float).reshape(-1, 3)
    local = rodrigues(rot)
    frames = rot.shape[0]
    world_r = np.empty((frames, NUM_JOINTS, 3, 3))
    world_p = np.empty((frames, NUM_JOINTS, 3))
    world_r[:, 0] = local[:, 0]
    world_p[:, 0] = skeleton.offsets[0] + trans
    for j in range(1, NUM_JOINTS):
        p = skeleton.parents[j]
        world_r[:, j] = world_r[:, p] @ local[:, j]
        world_p[:, j] = world_p[:, p] + world_r[:, p] @ skeleton.offsets[j]
    return JointTransforms(world_r, world_p, skeleton.rest_joints)


@dataclass(frozen=True, eq=False)
class SkinnedTemplate:
    rest_vertices: np.ndarray
    weights: np.ndarray  # (N, 24) dense, at most 4 non-zero per row
    triangles: np.ndarray
    regions: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.rest_vertices, float).reshape(-1, 3)
        w = np.asarray(self.weights, float).reshape(len(v), NUM_JOINTS)
        t = np.asarray(self.triangles, np.int64).reshape(-1, 3)
        if np.any(w < 0):
            raise ValueError("skinning weights must be non-negative")
        if np.any(np.abs(w.sum(axis=1) - 1) > 1e-6):
            raise ValueError("skinning weight rows must sum to 1")
        if np.any((w > 0).sum(axis=1) > 4):
            raise ValueError("at most 4 joint influences per vertex")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("template triangle index out of range")
        regions = {k: np.asarray(idx, np.int64) for k, idx in self.regions.items()}
        object.__setattr__(self, "rest_vertices", v)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "regions", regions)
        order = np.argsort(-w, axis=1, kind="stable")[:, :4]
        object.__setattr__(self, "_idx", order)
        object.__setattr__(self, "_w", np.take_along_axis(w, order, axis=1))

    @property
    def num_vertices(self) -> int:
        return len(self.rest_vertices)

    def region(self, name: str) -> np.ndarray:
        return self.regions.get(name, np.zeros(0, np.int64))


def skin_vertices(template: SkinnedTemplate, transforms: JointTransforms) -> np.ndarray:
    """Linear blend skinning; returns (F, N, 3)."""
    return _kernels.blend_skin(transforms.rotations, transforms.positions,
                               template.rest_vertices, transforms.rest_joints,
                               template._idx, template._w)


def _subtree_sum(values, parents):
    """values (..., 24, 3) -> per joint sum over its subtree."""
    out = values.copy()
    for j in range(NUM_JOINTS - 1, 0, -1):
        out[..., parents[j], :] += out[..., j, :]
    return out


def skin_vjp(template: SkinnedTemplate, skeleton: Skeleton, rotations,
             transforms: JointTransforms, grad_vertices) -> tuple[np.ndarray, np.ndarray]:
    """Pull a per-vertex gradient (F, N, 3) back to (rotation (F, 24, 3), translation (F, 3)).

    Rotating joint k sweeps its subtree about the joint's world position,
    so each joint collects the torque of the vertex gradients it moves.
    """
    rot = np.asarray(rotations, float).reshape(-1, NUM_JOINTS, 3)
    g = np.asarray(grad_vertices, float)
    m, n = _kernels.skin_moments(transforms.rotations, transforms.positions,
                                 template.rest_vertices, transforms.rest_joints,
                                 template._idx, template._w, np.ascontiguousarray(g))
    msub = _subtree_sum(m, skeleton.parents)
    nsub = _subtree_sum(n, skeleton.parents)
    torque = msub - np.cross(transforms.positions, nsub)
    parent_r = np.empty_like(transforms.rotations)
    parent_r[:, 0] = np.eye(3)
    parent_r[:, 1:] = transforms.rotations[:, skeleton.parents[1:]]
    jl = left_jacobian(rot)
    local_torque = np.einsum("fjba,fjb->fja", parent_r, torque)
    grad_rot = np.einsum("fjba,fjb->fja", jl, local_torque)
    grad_trans = g.sum(axis=1)
    return grad_rot, grad_trans


def pose_jacobian(template: SkinnedTemplate, skeleton: Skeleton, pose: BodyPose,
                  vertex_ids=None) -> np.ndarray:
    """d(posed vertex)/d(pose parameter), shape (V, 3, 75).

    Columns are the 24x3 rotation coordinates (joint-major) followed by the
    root translation. Only the requested vertices are evaluated.
    """
    ids = np.arange(template.num_vertices) if vertex_ids is None else np.asarray(vertex_ids)
    tf = forward_kinematics(skeleton, pose.rotations, pose.translation)
    w = template.weights[ids]
    rest = template.rest_vertices[ids]
    rj = tf.rotations[0]
    oj = tf.positions[0]
    # per-joint rigid image of each vertex, weighted
    images = np.einsum("jab,vjb->vja", rj, rest[:, None, :] - tf.rest_joints[None]) + oj[None]
    u = w[:, :, None] * images
    p_sub = _subtree_sum(u, skeleton.parents)
    s_sub = _subtree_sum(np.repeat(w[:, :, None], 3, axis=2), skeleton.parents)[:, :, 0]
    parent_r = np.concatenate([np.eye(3)[None], rj[skeleton.parents[1:]]], axis=0)
    omega = parent_r @ left_jacobian(pose.rotations)  # (24, 3, 3): column c is the axis
    lever = p_sub - s_sub[:, :, None] * oj[None]  # (V, 24, 3)
    jac = np.zeros((len(ids), 3, 3 * NUM_JOINTS + 3))
    for c in range(3):
        col = np.cross(omega[None, :, :, c], lever)  # (V, 24, 3)
        jac[:, :, c:3 * NUM_JOINTS:3] = col.transpose(0, 2, 1)
    jac[:, :, 3 * NUM_JOINTS:] = np.eye(3)
    return jac


class BodyModel:
    """Skeleton plus template, with batched posing helpers."""

    def __init__(self, skeleton: Skeleton, template: SkinnedTemplate):
        self.skeleton = skeleton
        self.template = template

    @classmethod
    def default(cls) -> "BodyModel":
        return cls(Skeleton.from_rest_joints(REST_JOINTS), build_default_template())

    @property
    def num_vertices(self) -> int:
        return self.template.num_vertices

    def pose(self, rotations, translations) -> tuple[np.ndarray, JointTransforms]:
        tf = forward_kinematics(self.skeleton, rotations, translations)
        return skin_vertices(self.template, tf), tf

    def vertices(self, rotations, translations) -> np.ndarray:
        return self.pose(rotations, translations)[0]

    def vjp(self, rotations, transforms, grad_vertices):
        return skin_vjp(self.template, self.skeleton, rotations, transforms, grad_vertices)


# --- bundled template ------------------------------------------------------------------

def _frame(axis, hint):
    axis = axis / np.linalg.norm(axis)
    e1 = hint - np.dot(hint, axis) * axis
    if np.linalg.norm(e1) < 1e-8:
        e1 = np.cross(axis, [1.0, 0.0, 0.0])
    e1 /= np.linalg.norm(e1)
    return axis, e1, np.cross(axis, e1)


def _tube(a, b, radii, sides, knots, *, hint=(0.0, 0.0, 1.0), scale=(1.0, 1.0),
          cap_a=False, cap_b=False, profile=None):
    """Ring-stacked tube between points a and b.

    `radii` gives per-ring radius; `knots` is [(s, joint), ...] along the
    axis and skinning weights interpolate linearly between knots.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    axis, e1, e2 = _frame(b - a, np.asarray(hint, float))
    rings = len(radii)
    s_ring = np.linspace(0, 1, rings) if profile is None else np.asarray(profile)
    verts, svals = [], []
    phis = 2 * np.pi * np.arange(sides) / sides
    for s, r in zip(s_ring, radii):
        c = a + s * (b - a)
        for phi in phis:
            verts.append(c + r * (scale[0] * np.cos(phi) * e1 + scale[1] * np.sin(phi) * e2))
            svals.append(s)
    tris = []
    for i in range(rings - 1):
        for k in range(sides):
            p0, p1 = i * sides + k, i * sides + (k + 1) % sides
            q0, q1 = p0 + sides, p1 + sides
            tris += [(p0, q0, p1), (p1, q0, q1)]
    if cap_a:
        pole = len(verts)
        verts.append(a - axis * 0.5 * radii[0] * (0 if profile is not None else 1))
        svals.append(0.0)
        tris += [(pole, k, (k + 1) % sides)[::-1] for k in range(sides)]
    if cap_b:
        pole = len(verts)
        verts.append(b + axis * 0.5 * radii[-1] * (0 if profile is not None else 1))
        svals.append(1.0)
        base = (rings - 1) * sides
        tris += [(pole, base + k, base + (k + 1) % sides) for k in range(sides)]
    svals = np.array(svals)
    w = np.zeros((len(verts), NUM_JOINTS))
    ks = np.array([k[0] for k in knots])
    for vi, s in enumerate(svals):
        if s <= ks[0]:
            w[vi, knots[0][1]] += 1
        elif s >= ks[-1]:
            w[vi, knots[-1][1]] += 1
        else:
            i = int(np.searchsorted(ks, s, side="right")) - 1
            t = (s - ks[i]) / (ks[i + 1] - ks[i])
            w[vi, knots[i][1]] += 1 - t
            w[vi, knots[i + 1][1]] += t
    return np.array(verts), np.array(tris), w, svals


def build_default_template() -> SkinnedTemplate:
    """Low-poly 655-vertex body assembled from skinned tubes."""
    parts = []

    def add(name, *args, **kwargs):
        v, t, w, s = _tube(*args, **kwargs)
        parts.append((name, v, t, w, s))

    J = REST_JOINTS
    add("pelvis", [0, 0.80, 0], [0, 1.00, 0], [0.12, 0.13, 0.13], 12,
        [(0, 0), (0.7, 0), (1, 3)], scale=(1.0, 0.75), cap_a=True)
    add("torso", [0, 1.00, 0], [0, 1.45, 0], [0.13, 0.14, 0.15, 0.15, 0.14, 0.10], 12,
        [(0, 3), (0.36, 6), (0.49, 9), (0.85, 9), (1, 12)], scale=(1.0, 0.7))
    add("neck", J[12], J[15], [0.05, 0.05], 6, [(0, 12), (0.6, 12), (1, 15)])
    head_s = np.linspace(0.1, 0.9, 6)
    add("head", [0, 1.54, 0], [0, 1.76, 0], 0.11 * np.sin(np.pi * head_s), 8,
        [(0, 15), (1, 15)], cap_a=True, cap_b=True, profile=head_s)
    for side, (hip, knee, ankle, foot, collar, sh, el, wr, hd) in (
        ("left", (1, 4, 7, 10, 13, 16, 18, 20, 22)),
        ("right", (2, 5, 8, 11, 14, 17, 19, 21, 23)),
    ):
        add(f"{side}_thigh", J[hip], J[knee], np.linspace(0.075, 0.055, 6), 10,
            [(0, hip), (0.85, hip), (1, knee)])
        add(f"{side}_shin", J[knee], J[ankle], np.linspace(0.05, 0.04, 6), 10,
            [(0, knee), (0.85, knee), (1, ankle)])
        # one vertex per ring points straight down so the sole is a thin ridge
        add(f"{side}_foot", [J[ankle][0], 0.035, -0.06], [J[ankle][0], 0.035, 0.18],
            [0.035, 0.035, 0.035], 7, [(0, ankle), (0.5, ankle), (1, foot)],
            hint=(0.0, -1.0, 0.0), cap_a=True, cap_b=True)
        add(f"{side}_collar", J[collar], J[sh], [0.05, 0.05], 8, [(0, collar), (1, sh)])
        add(f"{side}_upperarm", J[sh], J[el], np.linspace(0.045, 0.04, 4), 8,
            [(0, sh), (0.85, sh), (1, el)])
        add(f"{side}_forearm", J[el], J[wr], np.linspace(0.04, 0.033, 4), 8,
            [(0, el), (0.85, el), (1, wr)])
        tip = J[hd] + np.sign(J[hd][0]) * np.array([0.08, 0.0, 0.0])
        add(f"{side}_hand", J[wr], tip, [0.035, 0.04, 0.03], 6,
            [(0, wr), (0.3, wr), (0.6, hd), (1, hd)], hint=(0.0, -1.0, 0.0),
            scale=(0.5, 1.0), cap_b=True)

    verts, tris, weights, names = [], [], [], []
    offset = 0
    part_index = {}
    for name, v, t, w, s in parts:
        verts.append(v)
        tris.append(t + offset)
        weights.append(w)
        part_index[name] = np.arange(offset, offset + len(v))
        offset += len(v)
    verts = np.vstack(verts)
    tris = np.vstack(tris)
    weights = np.vstack(weights)

    def part(*names):
        return np.concatenate([part_index[n] for n in names])

    feet = part("left_foot", "right_foot")
    hands = part("left_hand", "right_hand")
    pelvis = part_index["pelvis"]
    thighs = part("left_thigh", "right_thigh")
    seat = np.concatenate([
        pelvis[(verts[pelvis, 2] < 0) & (verts[pelvis, 1] < 0.9)],
        thighs[(verts[thighs, 2] < -0.02) & (verts[thighs, 1] > 0.6)],
    ])
    regions = {
        "foot": feet,
        "sole": feet[verts[feet, 1] <= 0.005],
        "hand": hands,
        "palm": hands[verts[hands, 1] < 1.40 - 1e-6],
        "seat": np.sort(seat),
        "head": part_index["head"],
    }
    regions.update({f"part:{k}": v for k, v in part_index.items()})
    return SkinnedTemplate(verts, weights, tris, regions)


def save_template(path, skeleton: Skeleton, template: SkinnedTemplate) -> None:
    idx, w = template._idx, template._w
    doc = {
        "format": "sceneplace-template",
        "version": 1,
        "parents": skeleton.parents.tolist(),
        "joints": skeleton.rest_joints.tolist(),
        "vertices": template.rest_vertices.tolist(),
        "triangles": template.triangles.tolist(),
        "weights": {"index": idx.tolist(), "value": w.tolist()},
        "regions": {k: v.tolist() for k, v in template.regions.items()},
    }
    Path(path).write_text(json.dumps(doc))


def load_template(path) -> BodyModel:
    """Load a skeleton + skinned template written by :func:`save_template`."""
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "sceneplace-template":
        raise ValueError(f"{path}: not a template file")
    skeleton = Skeleton.from_rest_joints(doc["joints"], doc["parents"])
    verts = np.asarray(doc["vertices"], float)
    dense = np.zeros((len(verts), NUM_JOINTS))
    idx = np.asarray(doc["weights"]["index"], np.int64)
    val = np.asarray(doc["weights"]["value"], float)
    np.put_along_axis(dense, idx, val, axis=1)
    template = SkinnedTemplate(verts, dense, doc["triangles"], doc.get("regions", {}))
    return BodyModel(skeleton, template)
