"""Physical plausibility scores for placed motions and dataset filtering."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import SdfGrid

DEPTH_BINS = (0.0, 0.005, 0.01, 0.02, 0.05, 0.1, math.inf)
DEFAULT_MIN_NON_COLLISION = 0.98
DEFAULT_MIN_CONTACT = 0.9


def non_collision(vertices, sdf: SdfGrid) -> float:
    """Fraction of vertices with strictly positive signed distance."""
    values, _ = sdf.sample(np.asarray(vertices, float).reshape(-1, 3))
    return float(np.count_nonzero(values > 0) / len(values))


def contact(vertices, sdf: SdfGrid) -> int:
    """1 if any vertex is on or inside the scene surface."""
    values, _ = sdf.sample(np.asarray(vertices, float).reshape(-1, 3))
    return int(np.any(values <= 0))


@dataclass(frozen=True, eq=False)
class MetricsReport:
    non_collision: float
    contact: float
    frame_non_collision: np.ndarray
    frame_contact: np.ndarray
    depth_histogram: np.ndarray  # vertex-frame counts per DEPTH_BINS interval, penetrating only

    @property
    def clip_contact(self) -> int:
        """Alternative reading: 1 if any frame touches the scene."""
        return int(np.any(self.frame_contact))

    def to_dict(self) -> dict:
        return {
            "non_collision": self.non_collision,
            "contact": self.contact,
            "clip_contact": self.clip_contact,
            "frame_non_collision": [float(x) for x in self.frame_non_collision],
            "frame_contact": [int(x) for x in self.frame_contact],
            "depth_bins": [b if math.isfinite(b) else "inf" for b in DEPTH_BINS],
            "depth_histogram": [int(x) for x in self.depth_histogram],
        }

    @classmethod
    def from_values(cls, values) -> "MetricsReport":
        """Build from signed distances of shape (frames, vertices)."""
        v = np.atleast_2d(np.asarray(values, float))
        nc = np.count_nonzero(v > 0, axis=1) / v.shape[1]
        ct = np.any(v <= 0, axis=1).astype(np.int64)
        depth = -v[v < 0]
        hist, _ = np.histogram(depth, bins=np.array(DEPTH_BINS[:-1] + (np.finfo(float).max,)))
        return cls(float(nc.mean()), float(ct.mean()), nc, ct, hist)


def score_vertices(world_vertices, sdf: SdfGrid) -> MetricsReport:
    v = np.asarray(world_vertices, float)
    v = v.reshape((-1,) + v.shape[-2:])
    values, _ = sdf.sample(v)
    return MetricsReport.from_values(values)


def score_motion(placement, sdf: SdfGrid, body) -> MetricsReport:
    """Per-frame metrics of a placement's altered motion in world space."""
    return score_vertices(placement.world_vertices(body), sdf)


def passes(placement, loss_threshold=math.inf, min_non_collision=DEFAULT_MIN_NON_COLLISION,
           min_contact=DEFAULT_MIN_CONTACT, per_clip_contact=False) -> bool:
    m = placement.metrics
    c = m.clip_contact if per_clip_contact else m.contact
    return (placement.total_loss < loss_threshold and m.non_collision >= min_non_collision
            and c >= min_contact)


def filter_dataset(placements, loss_threshold=math.inf,
                   min_non_collision=DEFAULT_MIN_NON_COLLISION,
                   min_contact=DEFAULT_MIN_CONTACT, per_clip_contact=False) -> list:
    """Keep placements with loss below the threshold that meet both metric floors."""
    for name, v in (("min_non_collision", min_non_collision), ("min_contact", min_contact)):
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite")
    if math.isnan(loss_threshold):
        raise ValueError("loss_threshold must not be NaN")
    return [p for p in placements
            if passes(p, loss_threshold, min_non_collision, min_contact, per_clip_contact)]
