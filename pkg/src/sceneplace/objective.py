"""Scene-fit and motion-fidelity losses with analytic gradients.

Frames are weighted by the normalised frame weights k throughout. Every
loss returns per-frame values plus the gradient with respect to its direct
inputs; the two objectives chain these through the rigid placement and the
skinned body.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .body import NUM_JOINTS, BodyModel
from .geometry import ClassDistanceFields, SdfGrid
from .interaction import NONE_CLASS, FeatureMap
from .motion import FrameWeights, MotionSequence

logger = logging.getLogger(__name__)

POSE_DIM = 3 * NUM_JOINTS
FRAME_DIM = POSE_DIM + 3
AFFORD_SMOOTHING = 1e-3


def wrap_angle(theta: float) -> float:
    """theta mapped into [0, 2 pi); tiny negatives land on 0, not on 2 pi."""
    t = float(theta) % (2 * math.pi)
    return 0.0 if t >= 2 * math.pi else t


def soft_abs(x, delta: float = AFFORD_SMOOTHING):
    """sqrt(x^2 + delta^2) - delta and its derivative; exact |x| when delta is 0.

    Zero at the surface and within delta of |x| everywhere, but differentiable,
    so a vertex resting on the surface does not stall the line search.
    """
    x = np.asarray(x, float)
    if delta <= 0:
        return np.abs(x), np.sign(x)
    r = np.sqrt(x * x + delta * delta)
    return r - delta, x / r


@dataclass(frozen=True)
class LossWeights:
    lambda_mot: float = 10.0
    lambda_tau: float = 0.1
    lambda_pen: float = 100.0
    lambda_sem: float = 1.0
    lambda_pose: float = 1.0  # 0 switches the pose term off
    afford_smoothing: float = AFFORD_SMOOTHING  # m; 0 gives the exact |d|

    def __post_init__(self):
        for name in ("lambda_mot", "lambda_tau", "lambda_pen", "lambda_sem", "lambda_pose",
                     "afford_smoothing"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True, eq=False)
class SceneFields:
    """Distance fields of one scene plus the (2, 3) box placements may use."""

    sdf: SdfGrid
    classes: ClassDistanceFields | None = None
    bounds: np.ndarray | None = None

    @property
    def extent(self) -> np.ndarray:
        if self.bounds is None:
            return np.stack([self.sdf.origin, self.sdf.upper])
        return np.asarray(self.bounds, float).reshape(2, 3)


@dataclass(frozen=True)
class PlacementParams:
    """Translation tau (3,) and yaw theta about +y, wrapped to [0, 2 pi)."""

    tau: tuple
    theta: float

    def __post_init__(self):
        tau = tuple(float(x) for x in np.asarray(self.tau, float).reshape(-1))
        if len(tau) == 2:
            tau = (tau[0], 0.0, tau[1])
        if len(tau) != 3 or not all(math.isfinite(x) for x in tau):
            raise ValueError("tau must be 2 or 3 finite values")
        if not math.isfinite(self.theta):
            raise ValueError("theta must be finite")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def vector(self) -> np.ndarray:
        return np.array([*self.tau, self.theta])

    @classmethod
    def from_vector(cls, x) -> "PlacementParams":
        return cls(tuple(x[:3]), float(x[3]))


def yaw_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def yaw_matrix_derivative(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def place_vertices(vertices, pivot, tau, theta) -> np.ndarray:
    """World position R(theta) (v - pivot) + tau."""
    return (np.asarray(vertices) - pivot) @ yaw_matrix(theta).T + np.asarray(tau, float)


# --- losses ------------------------------------------------------------------------------

def _as_batch(vertices, contact, semantic):
    v = np.asarray(vertices, float)
    single = v.ndim == 2
    v = v.reshape((-1,) + v.shape[-2:])
    c = np.asarray(contact, float).reshape(v.shape[:2])
    s = np.asarray(semantic).reshape(v.shape[:2])
    return v, c, s, single


def scene_terms(vertices, contact, semantic, scene: SceneFields, weights: LossWeights,
                sdf_sample=None):
    """Affordance and penetration per frame plus their summed vertex gradient.

    Returns (afford (F,), pen (F,), grad (F, N, 3)).
    """
    v, c, s, _ = _as_batch(vertices, contact, semantic)
    value, grad = scene.sdf.sample(v) if sdf_sample is None else sdf_sample
    a, da = soft_abs(value, weights.afford_smoothing)
    afford = np.sum(c * a, axis=1)
    g = (c * da)[..., None] * grad
    depth = np.maximum(0.0, -value)
    pen = weights.lambda_pen * np.sum(depth * depth, axis=1)
    g -= (2.0 * weights.lambda_pen * depth)[..., None] * grad
    if weights.lambda_sem > 0:
        sem_val, sem_grad = _semantic_term(v, c, s, scene.classes, weights.afford_smoothing)
        afford = afford + weights.lambda_sem * sem_val
        g += weights.lambda_sem * sem_grad
    return afford, pen, g


_warned_classes: set = set()


def _semantic_term(v, c, s, classes, delta=AFFORD_SMOOTHING):
    frames = v.shape[0]
    val = np.zeros(frames)
    grad = np.zeros_like(v)
    if classes is None:
        return val, grad
    active = (s != NONE_CLASS) & (c > 0)
    if not np.any(active):
        return val, grad
    for cls in np.unique(s[active]).tolist():
        if int(cls) not in classes:
            if cls not in _warned_classes:
                logger.warning("no distance field for class %d; using geometric term only", cls)
                _warned_classes.add(cls)
            continue
        f, n = np.nonzero(active & (s == cls))
        d, dg = classes[int(cls)].sample(v[f, n])
        d, dd = soft_abs(d, delta)
        w = c[f, n]
        np.add.at(val, f, w * d)
        grad[f, n] += (w * dd)[:, None] * dg
    return val, grad


def affordance_loss(vertices, contact, semantic, sdf: SdfGrid,
                    classes: ClassDistanceFields | None = None, lambda_sem: float = 1.0,
                    smoothing: float = AFFORD_SMOOTHING):
    """sum f_c |sdf| + lambda_sem * sum f_c * dist_to_class(f_s) for one frame or a batch.

    |.| is the soft_abs of width `smoothing`.
    """
    v, c, s, single = _as_batch(vertices, contact, semantic)
    value, grad = sdf.sample(v)
    a, da = soft_abs(value, smoothing)
    loss = np.sum(c * a, axis=1)
    g = (c * da)[..., None] * grad
    if lambda_sem > 0:
        sv, sg = _semantic_term(v, c, s, classes, smoothing)
        loss = loss + lambda_sem * sv
        g = g + lambda_sem * sg
    return (float(loss[0]), g[0]) if single else (loss, g)


def penetration_loss(vertices, sdf: SdfGrid, lambda_pen: float = 100.0):
    """lambda_pen * sum max(0, -sdf)^2 for one frame or a batch."""
    v = np.asarray(vertices, float)
    single = v.ndim == 2
    v = v.reshape((-1,) + v.shape[-2:])
    value, grad = sdf.sample(v)
    depth = np.maximum(0.0, -value)
    loss = lambda_pen * np.sum(depth * depth, axis=1)
    g = -(2.0 * lambda_pen * depth)[..., None] * grad
    return (float(loss[0]), g[0]) if single else (loss, g)


def pose_loss(current_poses, original_poses):
    """Per-frame squared pose error (F,) and its gradient (F, 24, 3)."""
    cur = np.asarray(current_poses, float)
    orig = np.asarray(original_poses, float)
    if cur.shape != orig.shape:
        raise ValueError(f"pose shapes differ: {cur.shape} vs {orig.shape}")
    d = cur - orig
    return np.sum(d * d, axis=tuple(range(1, d.ndim))), 2.0 * d


def motion_loss(current_poses, current_trans, original_poses, original_trans,
                lambda_tau: float = 0.1):
    """Squared error between current and original frame-to-frame deltas.

    Returns per-delta losses (F-1,) and gradients w.r.t. poses and translations.
    """
    cp, op = np.asarray(current_poses, float), np.asarray(original_poses, float)
    ct, ot = np.asarray(current_trans, float), np.asarray(original_trans, float)
    if cp.shape != op.shape or ct.shape != ot.shape or len(cp) != len(ct):
        raise ValueError("current and original motions are not aligned")
    if len(cp) < 2:
        raise ValueError("motion loss needs at least 2 frames")
    ep = np.diff(cp, axis=0) - np.diff(op, axis=0)
    et = np.diff(ct, axis=0) - np.diff(ot, axis=0)
    axes_p = tuple(range(1, ep.ndim))
    loss = np.sum(ep * ep, axis=axes_p) + lambda_tau * np.sum(et * et, axis=1)
    return loss, ep, et


def _diff_adjoint(err, weights):
    """Gradient of sum_i w_i |err_i|^2 w.r.t. frames, where err_i = x[i+1] - x[i] - const."""
    we = 2.0 * err * weights.reshape((-1,) + (1,) * (err.ndim - 1))
    g = np.zeros((len(err) + 1,) + err.shape[1:])
    g[1:] += we
    g[:-1] -= we
    return g


def motion_loss_grad(ep, et, weights, lambda_tau):
    return _diff_adjoint(ep, weights), lambda_tau * _diff_adjoint(et, weights)


# --- objectives --------------------------------------------------------------------------

def motion_pivot(body_vertices) -> np.ndarray:
    """Placement pivot: centre of the clip's horizontal extent, at its lowest vertex."""
    v = np.asarray(body_vertices).reshape(-1, 3)
    lo, hi = v.min(axis=0), v.max(axis=0)
    return np.array([0.5 * (lo[0] + hi[0]), lo[1], 0.5 * (lo[2] + hi[2])])


class PlacementObjective:
    """E_p(tau, theta) = sum_i k_i [L_afford,i + L_pen,i] over the rigidly placed motion."""

    def __init__(self, body_vertices, features: FeatureMap, weights: FrameWeights,
                 scene: SceneFields, loss_weights: LossWeights, pivot=None):
        self.vertices = np.asarray(body_vertices, float)
        self.features = features
        self.k = weights.weights
        self.scene = scene
        self.loss_weights = loss_weights
        self.pivot = motion_pivot(self.vertices) if pivot is None else np.asarray(pivot, float)
        self.local = self.vertices - self.pivot
        if len(self.k) != len(self.vertices) or features.num_frames != len(self.vertices):
            raise ValueError("vertices, features and frame weights must share a frame count")

    def world(self, params) -> np.ndarray:
        x = np.asarray(params, float)
        return self.local @ yaw_matrix(x[3]).T + x[:3]

    def per_frame(self, params):
        w = self.world(params)
        a, p, _ = scene_terms(w, self.features.contact, self.features.semantic, self.scene,
                              self.loss_weights)
        return a, p

    def value(self, params) -> float:
        a, p = self.per_frame(params)
        return float(np.dot(self.k, a + p))

    def __call__(self, params):
        x = np.asarray(params, float)
        w = self.local @ yaw_matrix(x[3]).T + x[:3]
        a, p, g = scene_terms(w, self.features.contact, self.features.semantic, self.scene,
                              self.loss_weights)
        g *= self.k[:, None, None]
        grad = np.empty(4)
        grad[:3] = g.sum(axis=(0, 1))
        grad[3] = np.sum(g * (self.local @ yaw_matrix_derivative(x[3]).T))
        return float(np.dot(self.k, a + p)), grad


class AlterationObjective:
    """Motion-fidelity terms plus the scene terms evaluated on the altered meshes.

    Parameters are laid out frame-major: each frame contributes its 72
    axis-angle coordinates followed by its 3 root-translation coordinates.
    """

    def __init__(self, original: MotionSequence, features: FeatureMap, weights: FrameWeights,
                 scene: SceneFields, loss_weights: LossWeights, body: BodyModel,
                 placement: PlacementParams, pivot):
        self.original = original
        self.features = features
        self.k = weights.weights
        self.scene = scene
        self.loss_weights = loss_weights
        self.body = body
        self.tau = np.asarray(placement.tau, float)
        self.rot = yaw_matrix(placement.theta)
        self.pivot = np.asarray(pivot, float)
        self.frames = len(original)
        if len(self.k) != self.frames or features.num_frames != self.frames:
            raise ValueError("motion, features and frame weights must share a frame count")

    def initial(self) -> np.ndarray:
        return pack_alteration(self.original.poses, self.original.translations)

    def unpack(self, x):
        return unpack_alteration(x, self.frames)

    def world_vertices(self, x) -> np.ndarray:
        poses, trans = self.unpack(x)
        v = self.body.vertices(poses, trans)
        return (v - self.pivot) @ self.rot.T + self.tau

    def terms(self, x) -> dict:
        """Unweighted-by-lambda breakdown, each already k-weighted and summed."""
        poses, trans = self.unpack(x)
        v = self.body.vertices(poses, trans)
        w = (v - self.pivot) @ self.rot.T + self.tau
        a, p, _ = scene_terms(w, self.features.contact, self.features.semantic, self.scene,
                              self.loss_weights)
        lp, _ = pose_loss(poses, self.original.poses)
        lm, _, _ = motion_loss(poses, trans, self.original.poses, self.original.translations,
                               self.loss_weights.lambda_tau)
        return {
            "afford": float(np.dot(self.k, a)),
            "pen": float(np.dot(self.k, p)),
            "pose": float(np.dot(self.k, lp)),
            "motion": float(np.dot(self.k[:-1], lm)),
        }

    def __call__(self, x):
        lw = self.loss_weights
        poses, trans = self.unpack(x)
        v, tf = self.body.pose(poses, trans)
        w = (v - self.pivot) @ self.rot.T + self.tau
        a, p, gw = scene_terms(w, self.features.contact, self.features.semantic, self.scene, lw)
        total = float(np.dot(self.k, a + p))
        gv = (gw * self.k[:, None, None]) @ self.rot
        g_rot, g_trans = self.body.vjp(poses, tf, gv)

        if lw.lambda_pose > 0:
            lp, gp = pose_loss(poses, self.original.poses)
            total += lw.lambda_pose * float(np.dot(self.k, lp))
            g_rot = g_rot + lw.lambda_pose * self.k[:, None, None] * gp
        if lw.lambda_mot > 0:
            lm, ep, et = motion_loss(poses, trans, self.original.poses,
                                     self.original.translations, lw.lambda_tau)
            kd = self.k[:-1]
            total += lw.lambda_mot * float(np.dot(kd, lm))
            gmp, gmt = motion_loss_grad(ep, et, kd, lw.lambda_tau)
            g_rot = g_rot + lw.lambda_mot * gmp
            g_trans = g_trans + lw.lambda_mot * gmt
        return total, pack_alteration(g_rot, g_trans)


def pack_alteration(poses, translations) -> np.ndarray:
    poses = np.asarray(poses, float)
    frames = len(poses)
    return np.concatenate([poses.reshape(frames, POSE_DIM),
                           np.asarray(translations, float).reshape(frames, 3)], axis=1).ravel()


def unpack_alteration(x, frames: int):
    x = np.asarray(x, float).reshape(frames, FRAME_DIM)
    return x[:, :POSE_DIM].reshape(frames, NUM_JOINTS, 3), x[:, POSE_DIM:]
