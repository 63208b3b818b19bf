import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import spearmanr

from sceneplace.body import NUM_JOINTS
from sceneplace.interaction import CHAIR, FLOOR, FeatureMap, estimate_features_heuristic
from sceneplace.motion import MotionSequence
from sceneplace.synthetic import SyntheticMotionSpec, synthetic_motion
from sceneplace.weighting import (
    combine_weights,
    diversity_from_points,
    diversity_score,
    farthest_point_order,
    frame_weights,
    geometric_weight,
)


def still_clip(frames):
    return MotionSequence(30, np.zeros((frames, NUM_JOINTS, 3)), np.zeros((frames, 3)))


def test_motionless_contactless_clip_is_uniform(body):
    g = geometric_weight(still_clip(6), FeatureMap.zeros(6, body.num_vertices), body)
    assert np.all(g == g[0])


def test_single_chair_frame_is_argmax(body):
    m = still_clip(8)
    c = np.zeros((8, body.num_vertices))
    s = np.full((8, body.num_vertices), 255)
    sole, seat = body.template.region("sole"), body.template.region("seat")
    c[:, sole], s[:, sole] = 1.0, FLOOR
    c[5, seat], s[5, seat] = 0.8, CHAIR
    g = geometric_weight(m, FeatureMap(c, s), body)
    assert np.argmax(g) == 5
    assert np.sum(g == g.max()) == 1


def test_walk_weight_tracks_root_speed(body):
    m = synthetic_motion(SyntheticMotionSpec("walk", duration=2.0), body)
    g = geometric_weight(m, estimate_features_heuristic(m, body), body)
    speed = np.linalg.norm(np.gradient(m.translations, axis=0), axis=1)
    assert spearmanr(g, speed)[0] > 0.5


def test_three_frame_fps_order():
    # frame 1 sits 10 from frame 0, frame 2 sits 1 from frame 0
    pts = np.array([[0.0], [10.0], [1.0]])
    assert list(farthest_point_order(pts)) == [0, 1, 2]
    d = diversity_from_points(pts)
    assert np.argsort(-d)[1] == 1
    assert np.allclose(d, [1.0, 2 / 3, 1 / 3])


def test_identical_frames_rank_by_index():
    d = diversity_score(still_clip(4))
    assert np.allclose(d, [1.0, 0.75, 0.5, 0.25])


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 12), st.integers(0, 10_000))
def test_permutation_moves_scores_with_frames(n, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 5))
    perm = np.concatenate([[0], 1 + rng.permutation(n - 1)])
    a = diversity_from_points(pts)
    b = diversity_from_points(pts[perm])
    assert np.allclose(b, a[perm])


def test_combine_examples():
    assert np.allclose(combine_weights([1, 0], [0, 1]).weights, [0.5, 0.5])
    g, d = np.array([0.2, 0.5, 1.0]), np.array([1.0, 0.1, 0.4])
    assert np.allclose(combine_weights(g, d, 1.0, 0.0).weights, g / g.sum())
    assert np.allclose(combine_weights(g, d, 0.0, 1.0).weights, d / d.sum())
    with pytest.raises(ValueError):
        combine_weights(g, d, 0.0, 0.0)
    with pytest.raises(ValueError):
        combine_weights([0.0, 0.0], [0.0, 0.0])


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0.1, 100))
def test_combine_scale_invariance(lg, lb, c):
    rng = np.random.default_rng(0)
    g, d = rng.random(6), rng.random(6)
    a = combine_weights(g, d, lg, lb).weights
    b = combine_weights(g, d, c * lg, c * lb).weights
    assert np.allclose(a, b)
    assert np.all(a >= 0) and a.sum() == pytest.approx(1.0)


def test_frame_weights_deterministic(body):
    m = synthetic_motion(SyntheticMotionSpec("reach"), body)
    f = estimate_features_heuristic(m, body)
    a = frame_weights(m, f, body).weights
    assert a.tobytes() == frame_weights(m, f, body).weights.tobytes()
