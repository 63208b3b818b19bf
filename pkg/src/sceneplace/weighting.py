"""Frame importance: geometric weight plus a pose-space diversity score."""

from __future__ import annotations

import numpy as np

from .body import BodyModel
from .interaction import NONE_CLASS, FeatureMap
from .motion import FrameWeights, MotionSequence


def _unit_max(x) -> np.ndarray:
    x = np.asarray(x, float)
    top = x.max() if len(x) else 0.0
    return x / top if top > 0 else np.zeros_like(x)


def joint_displacement(motion: MotionSequence, body: BodyModel) -> np.ndarray:
    """Mean joint travel per frame (central differences, one-sided at the ends)."""
    joints = body.pose(motion.poses, motion.translations)[1].positions
    step = np.gradient(joints, axis=0)
    return np.linalg.norm(step, axis=-1).mean(axis=1)


def contact_saliency(features: FeatureMap) -> np.ndarray:
    """Sum of contact probability weighted by how rare each touched class is."""
    sem = features.semantic.astype(np.int64)
    frames = features.num_frames
    saliency = np.zeros(frames)
    for cls in np.unique(sem):
        if cls == NONE_CLASS:
            continue
        mask = sem == cls
        present = np.count_nonzero(mask.any(axis=1))
        rarity = frames / present
        saliency += rarity * np.where(mask, features.contact, 0.0).sum(axis=1)
    return saliency


def geometric_weight(motion: MotionSequence, features: FeatureMap, body: BodyModel,
                     alpha: float = 0.5, beta: float = 0.5) -> np.ndarray:
    """alpha * normalised joint displacement + beta * contact saliency, scaled to [0, 1].

    A clip with no motion and no contact gets uniform weight 1.
    """
    if features.num_frames != len(motion):
        raise ValueError("features are not aligned to the motion")
    k = alpha * _unit_max(joint_displacement(motion, body)) \
        + beta * _unit_max(contact_saliency(features))
    if not np.any(k > 0):
        return np.ones(len(motion))
    return _unit_max(k)


def farthest_point_order(points) -> np.ndarray:
    """Greedy max-min order seeded at index 0; ties go to the lower index."""
    x = np.asarray(points, float).reshape(len(points), -1)
    n = len(x)
    order = np.empty(n, dtype=np.int64)
    chosen = np.zeros(n, dtype=bool)
    order[0] = 0
    chosen[0] = True
    mind = np.linalg.norm(x - x[0], axis=1)
    for r in range(1, n):
        cand = np.where(chosen, -np.inf, mind)
        nxt = int(np.argmax(cand))
        order[r] = nxt
        chosen[nxt] = True
        mind = np.minimum(mind, np.linalg.norm(x - x[nxt], axis=1))
    return order


def diversity_score(motion: MotionSequence) -> np.ndarray:
    """1 - rank / frames, where rank is the farthest-point-sampling order in pose space."""
    if len(motion) < 2:
        raise ValueError("diversity needs at least 2 frames")
    return diversity_from_points(motion.poses)


def diversity_from_points(points) -> np.ndarray:
    order = farthest_point_order(points)
    n = len(order)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    return 1.0 - rank / n


def combine_weights(geometric, diversity, lambda_g: float = 0.5,
                    lambda_b: float = 0.5) -> FrameWeights:
    g = np.asarray(geometric, float)
    d = np.asarray(diversity, float)
    if g.shape != d.shape:
        raise ValueError("geometric and diversity weights differ in length")
    if lambda_g < 0 or lambda_b < 0 or (lambda_g == 0 and lambda_b == 0):
        raise ValueError("lambda_g and lambda_b must be >= 0 and not both zero")
    k = lambda_g * g + lambda_b * d
    if not np.any(k > 0):
        raise ValueError("combined frame weights are all zero")
    return FrameWeights(k)


def frame_weights(motion: MotionSequence, features: FeatureMap, body: BodyModel,
                  lambda_g=0.5, lambda_b=0.5, alpha=0.5, beta=0.5) -> FrameWeights:
    return combine_weights(geometric_weight(motion, features, body, alpha, beta),
                           diversity_score(motion), lambda_g, lambda_b)
