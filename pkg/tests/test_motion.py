import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneplace.body import NUM_JOINTS
from sceneplace.motion import (
    FLOOR_GAP,
    FrameWeights,
    MotionSequence,
    downsample,
    downsample_indices,
    frame_diff,
)


def clip(frames, fps=30.0, seed=0):
    rng = np.random.default_rng(seed)
    return MotionSequence(fps, rng.normal(0, 0.3, (frames, NUM_JOINTS, 3)),
                          rng.normal(0, 1, (frames, 3)))


def test_validation():
    with pytest.raises(ValueError, match="at least 2"):
        clip(1)
    with pytest.raises(ValueError, match="fps"):
        MotionSequence(0, np.zeros((2, NUM_JOINTS, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError, match="increasing"):
        MotionSequence(30, np.zeros((3, NUM_JOINTS, 3)), np.zeros((3, 3)), [0, 0.1, 0.1])
    with pytest.raises(ValueError):
        FrameWeights([0.0, 0.0])


def test_frame_weights_normalised():
    w = FrameWeights([1.0, 3.0])
    assert np.allclose(w.weights, [0.25, 0.75])


def test_frame_diff_constant_and_ramp():
    m = MotionSequence(30, np.zeros((5, NUM_JOINTS, 3)), np.zeros((5, 3)))
    dp, dt = frame_diff(m)
    assert dp.shape == (4, NUM_JOINTS, 3) and not dp.any() and not dt.any()
    ramp = np.zeros((5, 3))
    ramp[:, 0] = 0.1 * np.arange(5)
    _, dt = frame_diff(MotionSequence(30, np.zeros((5, NUM_JOINTS, 3)), ramp))
    assert np.allclose(dt, [0.1, 0, 0])


def test_frame_diff_telescopes():
    m = clip(10, seed=1)
    dp, dt = frame_diff(m)
    assert np.allclose(np.cumsum(dp, axis=0), m.poses[1:] - m.poses[0], atol=1e-12)
    assert np.allclose(np.cumsum(dt, axis=0), m.translations[1:] - m.translations[0], atol=1e-12)


def test_120fps_uniform_keeps_every_fourth():
    m = clip(480, fps=120)
    out = downsample(m, FrameWeights(np.ones(480)))
    assert np.array_equal(out.source_index, np.arange(0, 480, 4))
    assert out.average_rate == pytest.approx(30.0)
    assert out.fps == 30.0


def test_low_rate_is_unchanged():
    m = clip(24, fps=24)
    out = downsample(m, FrameWeights(np.random.default_rng(0).random(24)))
    assert np.array_equal(out.poses, m.poses) and np.array_equal(out.timestamps, m.timestamps)


def test_concentrated_weights_still_meet_floor():
    m = clip(480, fps=120)
    w = np.full(480, 1e-3)
    w[:48] = 1.0
    idx = downsample_indices(m, FrameWeights(w))
    gaps = np.diff(m.timestamps[idx])
    assert gaps.max() <= FLOOR_GAP + 1e-9
    assert set(range(48)) <= set(idx.tolist())


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 300), st.sampled_from([60.0, 90.0, 120.0, 240.0]), st.integers(0, 2**31))
def test_downsample_properties(frames, fps, seed):
    m = clip(frames, fps=fps, seed=seed % 97)
    w = FrameWeights(np.random.default_rng(seed).random(frames) + 1e-6)
    idx = downsample_indices(m, w)
    # a strictly increasing subsequence of the input
    assert np.all(np.diff(idx) > 0) and idx[0] >= 0 and idx[-1] < frames
    if len(idx) > 1:
        gaps = np.diff(m.timestamps[idx])
        assert gaps.max() <= FLOOR_GAP + 1.0 / fps + 1e-9
    once = downsample(m, w)
    twice = downsample(once, w.take(idx))
    assert np.array_equal(twice.source_index, once.source_index)
    assert np.array_equal(twice.poses, once.poses)


def test_weight_length_mismatch():
    with pytest.raises(ValueError, match="weights"):
        downsample_indices(clip(10, fps=120), FrameWeights(np.ones(9)))
