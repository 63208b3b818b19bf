"""Motion sequences, frame differencing and frame-weighted downsampling."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .body import NUM_JOINTS, wrap_axis_angle

logger = logging.getLogger(__name__)

TARGET_FPS = 30.0
FLOOR_GAP = 0.1  # seconds, i.e. never below 10 fps
KEEP_FRACTION_120 = 0.25
LONG_MOTION_FRAMES = 450


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """Per-frame axis-angle poses (F, 24, 3) and root translations (F, 3)."""

    fps: float
    poses: np.ndarray
    translations: np.ndarray
    timestamps: np.ndarray | None = None
    label: str = ""
    source_index: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        poses = np.asarray(self.poses, dtype=np.float64)
        if poses.ndim != 3 or poses.shape[1:] != (NUM_JOINTS, 3):
            raise ValueError(f"poses must be (F, {NUM_JOINTS}, 3), got {poses.shape}")
        trans = np.asarray(self.translations, dtype=np.float64).reshape(-1, 3)
        if len(trans) != len(poses):
            raise ValueError("pose and translation frame counts differ")
        if len(poses) < 2:
            raise ValueError("a motion needs at least 2 frames")
        if not (np.all(np.isfinite(poses)) and np.all(np.isfinite(trans))):
            raise ValueError("motion values must be finite")
        ts = (np.arange(len(poses)) / self.fps if self.timestamps is None
              else np.asarray(self.timestamps, dtype=np.float64))
        if len(ts) != len(poses) or np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing, one per frame")
        src = (np.arange(len(poses)) if self.source_index is None
               else np.asarray(self.source_index, dtype=np.int64))
        object.__setattr__(self, "fps", float(self.fps))
        object.__setattr__(self, "poses", wrap_axis_angle(poses))
        object.__setattr__(self, "translations", trans)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "source_index", src)

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])

    @property
    def average_rate(self) -> float:
        return (len(self) - 1) / self.duration

    def take(self, indices, fps: float | None = None) -> "MotionSequence":
        idx = np.asarray(indices, dtype=np.int64)
        return MotionSequence(
            self.fps if fps is None else fps, self.poses[idx], self.translations[idx],
            self.timestamps[idx], self.label, self.source_index[idx],
        )

    def with_values(self, poses, translations) -> "MotionSequence":
        return MotionSequence(self.fps, poses, translations, self.timestamps, self.label,
                              self.source_index)


@dataclass(frozen=True, eq=False)
class FrameWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("frame weights must be finite and non-negative")
        total = w.sum()
        if not total > 0:
            raise ValueError("frame weights must not all be zero")
        object.__setattr__(self, "weights", w / total)

    def __len__(self) -> int:
        return len(self.weights)

    def take(self, indices) -> "FrameWeights":
        return FrameWeights(self.weights[np.asarray(indices, dtype=np.int64)])


def frame_diff(sequence: MotionSequence) -> tuple[np.ndarray, np.ndarray]:
    """Componentwise deltas frame[i+1] - frame[i] of poses and translations."""
    if len(sequence) < 2:
        raise ValueError("frame_diff needs at least 2 frames")
    return np.diff(sequence.poses, axis=0), np.diff(sequence.translations, axis=0)


def retention_stride(fps: float) -> int:
    return max(1, int(round(fps / TARGET_FPS)))


def downsample(sequence: MotionSequence, weights: FrameWeights) -> MotionSequence:
    """Keep the highest-weight frames at ~30 fps average, never leaving a gap over 0.1 s.

    Ties in weight prefer frames on the regular stride, so uniform weights
    give an evenly spaced subset. Returns the input unchanged at <= 30 fps.
    """
    return sequence.take(downsample_indices(sequence, weights), fps=output_fps(sequence))


def output_fps(sequence):
    if sequence.fps <= TARGET_FPS:
        return sequence.fps
    return sequence.fps / retention_stride(sequence.fps)


def downsample_indices(sequence: MotionSequence, weights: FrameWeights) -> np.ndarray:
    n = len(sequence)
    if len(weights) != n:
        raise ValueError(f"{len(weights)} weights for {n} frames")
    if sequence.fps <= TARGET_FPS:
        return np.arange(n)
    stride = retention_stride(sequence.fps)
    n_keep = max(2, int(round(n / stride)))
    w = weights.weights
    idx = np.arange(n)
    order = np.lexsort((idx, idx % stride, -w))
    keep = np.zeros(n, dtype=bool)
    keep[order[:n_keep]] = True

    ts = sequence.timestamps
    changed = True
    while changed:
        changed = False
        kept = np.flatnonzero(keep)
        gaps = np.diff(ts[kept])
        for g in np.flatnonzero(gaps > FLOOR_GAP + 1e-9):
            lo, hi = kept[g], kept[g + 1]
            inside = np.arange(lo + 1, hi)
            if len(inside) == 0:
                continue
            pick = inside[np.lexsort((inside, -w[inside]))[0]]
            keep[pick] = True
            changed = True
    out = np.flatnonzero(keep)
    if len(out) > LONG_MOTION_FRAMES:
        logger.warning("%d retained frames exceeds the tested range of %d", len(out),
                       LONG_MOTION_FRAMES)
    return out
