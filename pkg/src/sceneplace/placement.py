"""Grid search over rigid placements, joint placement/alteration refinement and ranking."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .body import BodyModel
from .interaction import NONE_CLASS, FeatureMap
from .metrics import MetricsReport, score_vertices
from .motion import FrameWeights, MotionSequence
from .objective import (
    AlterationObjective,
    LossWeights,
    PlacementObjective,
    PlacementParams,
    SceneFields,
    motion_pivot,
    pack_alteration,
    unpack_alteration,
    wrap_angle,
    yaw_matrix,
)
from .optimizer import LbfgsConfig, OptimizationError, minimize

logger = logging.getLogger(__name__)

MAX_DROP_POINTS = 2048


class EmptyGridError(ValueError):
    pass


@dataclass(frozen=True)
class PlacementConfig:
    grid_step: float = 0.25
    rot_step: float = 30.0  # degrees
    top_b: int = 8
    rounds: int = 2
    lbfgs: LbfgsConfig = field(default_factory=LbfgsConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    alteration: bool = True
    free_vertical: bool = False
    contact_threshold: float = 0.5  # f_c above which a vertex is used for the drop

    def __post_init__(self):
        if not self.grid_step > 0:
            raise ValueError("grid_step must be positive")
        _orientation_count(self.rot_step)
        if self.top_b < 1 or self.rounds < 0:
            raise ValueError("top_b must be >= 1 and rounds >= 0")
        if not 0 <= self.contact_threshold <= 1:
            raise ValueError("contact_threshold must lie in [0, 1]")


def _orientation_count(rot_step: float) -> int:
    if not 0 < rot_step <= 360:
        raise ValueError(f"rot_step must lie in (0, 360], got {rot_step}")
    n = 360.0 / rot_step
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"rot_step {rot_step} does not divide 360")
    return int(round(n))


def _axis_points(lo: float, hi: float, step: float) -> np.ndarray:
    """Cell centres of a step-sized tiling, centred in [lo, hi]; one point if narrower."""
    width = hi - lo
    if width < 0:
        return np.empty(0)
    n = max(1, int(math.floor(width / step + 1e-9)))
    start = lo + 0.5 * (width - (n - 1) * step)
    return start + step * np.arange(n)


def candidate_grid(bounds, grid_step: float, rot_step: float, inset: float = 0.0) -> list:
    """Floor-plane lattice (x, z) times yaw angles, as a list of ((x, z), theta).

    bounds is (lo, hi) with 3D corners; the lattice covers the x-z extent
    shrunk by inset on every side.
    """
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    count = _orientation_count(rot_step)
    lo, hi = np.asarray(bounds, float).reshape(2, 3)
    xs = _axis_points(lo[0] + inset, hi[0] - inset, grid_step)
    zs = _axis_points(lo[2] + inset, hi[2] - inset, grid_step)
    if len(xs) == 0 or len(zs) == 0:
        raise EmptyGridError(
            f"scene floor {hi[0] - lo[0]:.2f} x {hi[2] - lo[2]:.2f} m is smaller than the "
            f"agent footprint (inset {inset:.2f} m)")
    thetas = np.radians(rot_step) * np.arange(count)
    return [((float(x), float(z)), float(t)) for x in xs for z in zs for t in thetas]


@dataclass(frozen=True, eq=False)
class HeightMap:
    """Highest surface crossing per vertical grid column."""

    origin: np.ndarray  # (x0, z0)
    cell_size: float
    heights: np.ndarray  # (nz, nx)

    @classmethod
    def from_sdf(cls, sdf) -> "HeightMap":
        v = sdf.values  # (nz, ny, nx)
        ny = v.shape[1]
        inside = v <= 0
        has = inside.any(axis=1)
        top = ny - 1 - np.argmax(inside[:, ::-1, :], axis=1)
        k, i = np.indices(top.shape)
        below = v[k, top, i].astype(float)
        above_idx = np.minimum(top + 1, ny - 1)
        above = v[k, above_idx, i].astype(float)
        frac = np.where(above_idx > top, above / np.maximum(above - below, 1e-12), 0.0)
        y = sdf.origin[1] + sdf.cell_size * (above_idx - frac)
        heights = np.where(has, y, sdf.origin[1])
        return cls(np.array([sdf.origin[0], sdf.origin[2]]), sdf.cell_size, heights)

    def at(self, x, z) -> np.ndarray:
        nz, nx = self.heights.shape
        u = np.clip((np.asarray(x) - self.origin[0]) / self.cell_size, 0, nx - 1)
        w = np.clip((np.asarray(z) - self.origin[1]) / self.cell_size, 0, nz - 1)
        i = np.minimum(np.floor(u).astype(np.int64), nx - 2)
        k = np.minimum(np.floor(w).astype(np.int64), nz - 2)
        tu, tw = u - i, w - k
        h = self.heights
        return ((1 - tu) * (1 - tw) * h[k, i] + tu * (1 - tw) * h[k, i + 1]
                + (1 - tu) * tw * h[k + 1, i] + tu * tw * h[k + 1, i + 1])


def drop_points(local, features: FeatureMap, threshold: float) -> np.ndarray:
    """Pivot-relative positions of the vertices expected to touch a support."""
    mask = features.contact >= threshold
    pts = local[mask] if np.any(mask) else local[local[..., 1] <= local[..., 1].min() + 0.01]
    if len(pts) > MAX_DROP_POINTS:
        pts = pts[np.linspace(0, len(pts) - 1, MAX_DROP_POINTS).astype(np.int64)]
    return pts


def drop_heights(heightmap: HeightMap, points, xz, thetas) -> np.ndarray:
    """Vertical offset per candidate that rests the drop points on the surface below them."""
    xz = np.asarray(xz, float).reshape(-1, 2)
    th = np.asarray(thetas, float).reshape(-1)
    c, s = np.cos(th)[:, None], np.sin(th)[:, None]
    px = c * points[:, 0] + s * points[:, 2] + xz[:, :1]
    pz = -s * points[:, 0] + c * points[:, 2] + xz[:, 1:]
    return np.max(heightmap.at(px, pz) - points[:, 1], axis=1)


@dataclass
class Candidate:
    initial: np.ndarray  # (tx, ty, tz, theta) at the grid point
    screen_energy: float
    params: np.ndarray | None = None
    poses: np.ndarray | None = None
    translations: np.ndarray | None = None
    placement_energy: float = math.inf
    total_loss: float = math.inf
    metrics: MetricsReport | None = None
    status: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class Placement:
    tau: tuple
    theta: float
    pivot: np.ndarray
    motion: MotionSequence  # altered, in the clip's own coordinates
    metrics: MetricsReport
    total_loss: float
    placement_energy: float
    screen_energy: float
    initial: tuple
    status: tuple = ()

    def world_vertices(self, body: BodyModel) -> np.ndarray:
        v = body.vertices(self.motion.poses, self.motion.translations)
        return (v - self.pivot) @ yaw_matrix(self.theta).T + np.asarray(self.tau)

    def world_translations(self) -> np.ndarray:
        return (self.motion.translations - self.pivot) @ yaw_matrix(self.theta).T \
            + np.asarray(self.tau)


@dataclass(frozen=True, eq=False)
class PlacementResult:
    placements: list
    reason: str = ""
    candidates_total: int = 0
    candidates_valid: int = 0

    @property
    def ok(self) -> bool:
        return bool(self.placements)

    @property
    def best(self) -> Placement | None:
        return self.placements[0] if self.placements else None


@dataclass(frozen=True, eq=False)
class Screening:
    """Rigid-placement energies of every grid candidate at the unaltered motion."""

    params: np.ndarray  # (M, 4)
    energy: np.ndarray
    status: np.ndarray  # 0 complete, 1 abandoned above the top-B bound, 2 leaves the grid
    pivot: np.ndarray
    reason: str = ""

    def top(self, count: int) -> np.ndarray:
        done = np.flatnonzero(self.status == 0)
        p = self.params[done]
        order = np.lexsort((p[:, 3], p[:, 2], p[:, 0], self.energy[done]))
        return done[order[:count]]


def _stack_classes(scene: SceneFields, semantic, lambda_sem):
    slot = np.full(semantic.shape, -1, dtype=np.int64)
    if scene.classes is None or lambda_sem == 0 or not scene.classes:
        return slot, np.zeros((1, 1), np.float32)
    ids = sorted(scene.classes)
    for n, cid in enumerate(ids):
        if cid != NONE_CLASS:
            slot[semantic == cid] = n
    flat = np.stack([scene.classes[c].values.reshape(-1) for c in ids])
    return slot, flat


def screen_energies(local, features: FeatureMap, weights: FrameWeights, scene: SceneFields,
                    loss: LossWeights, params, keep: int = 1 << 30):
    """E_p of each parameter row; rows provably outside the best `keep` are abandoned early."""
    sdf = scene.sdf
    slot, class_flat = _stack_classes(scene, features.semantic, loss.lambda_sem)
    k = weights.weights
    order = np.lexsort((np.arange(len(k)), -k))
    params = np.ascontiguousarray(np.asarray(params, float).reshape(-1, 4))
    keep = int(max(1, min(keep, len(params))))
    return _kernels.screen_energies(
        np.ascontiguousarray(local, dtype=np.float64), features.contact.astype(np.float64),
        slot, k, order, sdf.values.reshape(-1), np.array(sdf.dims), sdf.origin, sdf.cell_size,
        class_flat, float(loss.lambda_pen), float(loss.lambda_sem), float(loss.afford_smoothing),
        params, keep)


def screen(scene: SceneFields, motion: MotionSequence, features: FeatureMap,
           weights: FrameWeights, body: BodyModel, config: PlacementConfig) -> Screening:
    verts = body.vertices(motion.poses, motion.translations)
    pivot = motion_pivot(verts)
    local = verts - pivot
    radius = float(np.max(np.hypot(local[..., 0], local[..., 2])))
    try:
        grid = candidate_grid(scene.extent, config.grid_step, config.rot_step, inset=radius)
    except EmptyGridError as exc:
        return Screening(np.empty((0, 4)), np.empty(0), np.empty(0, np.int8), pivot, str(exc))
    xz = np.array([g[0] for g in grid])
    th = np.array([g[1] for g in grid])
    hm = HeightMap.from_sdf(scene.sdf)
    ty = drop_heights(hm, drop_points(local, features, config.contact_threshold), xz, th)
    params = np.column_stack([xz[:, 0], ty, xz[:, 1], th])
    energy, status = screen_energies(local, features, weights, scene, config.loss, params,
                                     keep=config.top_b)
    reason = "" if np.any(status != 2) else "every candidate leaves the scene footprint"
    return Screening(params, energy, status, pivot, reason)


def optimize_candidate(initial, motion: MotionSequence, features: FeatureMap,
                       weights: FrameWeights, scene: SceneFields, body: BodyModel,
                       config: PlacementConfig, pivot=None, screen_energy=math.nan) -> Candidate:
    """Alternate L-BFGS on the rigid placement and on the per-frame alteration."""
    x = np.array(initial, float).reshape(4)
    poses, trans = motion.poses.copy(), motion.translations.copy()
    if pivot is None:
        pivot = motion_pivot(body.vertices(poses, trans))
    cand = Candidate(initial=x.copy(), screen_energy=float(screen_energy))
    free = np.array([0, 1, 2, 3]) if config.free_vertical else np.array([0, 2, 3])
    loss = config.loss
    heightmap = None if config.free_vertical else HeightMap.from_sdf(scene.sdf)

    for r in range(config.rounds):
        verts = body.vertices(poses, trans)
        if heightmap is not None:
            # the vertical is not optimized: rest the current motion on the support below
            pts = drop_points(verts - pivot, features, config.contact_threshold)
            x[1] = drop_heights(heightmap, pts, x[[0, 2]], x[3])[0]
        ep = PlacementObjective(verts, features, weights, scene, loss, pivot)

        def sub(y, ep=ep, base=x.copy()):
            full = base.copy()
            full[free] = y
            f, g = ep(full)
            return f, g[free]

        try:
            y, _, trace = minimize(sub, x[free], config.lbfgs)
            x[free] = y
            cand.status.append(f"round {r} placement: {trace.status}")
        except OptimizationError as exc:
            cand.status.append(f"round {r} placement failed: {exc}")
        if not config.alteration:
            continue
        alt = AlterationObjective(motion, features, weights, scene, loss, body,
                                  PlacementParams.from_vector(x), pivot)
        try:
            z, _, trace = minimize(alt, pack_alteration(poses, trans), config.lbfgs)
            poses, trans = unpack_alteration(z, len(motion))
            cand.status.append(f"round {r} alteration: {trace.status}")
        except OptimizationError as exc:
            cand.status.append(f"round {r} alteration failed: {exc}")

    x[3] = wrap_angle(x[3])
    final = PlacementParams.from_vector(x)
    alt = AlterationObjective(motion, features, weights, scene, loss, body, final, pivot)
    z = pack_alteration(poses, trans)
    try:
        total = float(alt(z)[0])
    except (ValueError, FloatingPointError) as exc:
        cand.status.append(f"final evaluation failed: {exc}")
        total = math.inf
    world = alt.world_vertices(z)
    verts = body.vertices(poses, trans)
    cand.params = x
    cand.poses, cand.translations = poses, trans
    cand.placement_energy = PlacementObjective(verts, features, weights, scene, loss,
                                               pivot).value(x)
    cand.total_loss = total if math.isfinite(total) else math.inf
    cand.metrics = score_vertices(world, scene.sdf)
    return cand


def _to_placement(c: Candidate, motion: MotionSequence, pivot) -> Placement:
    return Placement(
        tau=tuple(float(v) for v in c.params[:3]),
        theta=float(c.params[3]),
        pivot=np.asarray(pivot, float),
        motion=motion.with_values(c.poses, c.translations),
        metrics=c.metrics,
        total_loss=float(c.total_loss),
        placement_energy=float(c.placement_energy),
        screen_energy=float(c.screen_energy),
        initial=tuple(float(v) for v in c.initial),
        status=tuple(c.status),
    )


def rank_key(p: Placement):
    return (p.total_loss, p.tau, p.theta)


def place(scene: SceneFields, motion: MotionSequence, features: FeatureMap,
          weights: FrameWeights, body: BodyModel, config: PlacementConfig | None = None,
          screening: Screening | None = None) -> PlacementResult:
    """Screen the whole grid with E_p, refine the best top_b, and rank by final loss.

    A precomputed screening may be passed in to share it between configs that
    differ only in refinement settings.
    """
    config = config or PlacementConfig()
    if features.num_frames != len(motion) or len(weights) != len(motion):
        raise ValueError("features and frame weights must be aligned with the motion")
    if features.num_vertices != body.num_vertices:
        raise ValueError("features do not match the body template")
    s = screening or screen(scene, motion, features, weights, body, config)
    total = len(s.params)
    valid = int(np.count_nonzero(s.status != 2))
    if total == 0 or valid == 0:
        logger.info("no valid fit: %s", s.reason)
        return PlacementResult([], s.reason or "no candidates", total, valid)
    chosen = s.top(config.top_b)
    out = []
    for idx in chosen:
        c = optimize_candidate(s.params[idx], motion, features, weights, scene, body, config,
                               s.pivot, s.energy[idx])
        if math.isfinite(c.total_loss):
            out.append(_to_placement(c, motion, s.pivot))
    if not out:
        return PlacementResult([], "every refined candidate failed", total, valid)
    out.sort(key=rank_key)
    return PlacementResult(out, "", total, valid)
