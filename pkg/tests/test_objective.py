import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gradient_master, linear_scene, random_features, sole_features
from sceneplace.geometry import SdfGrid
from sceneplace.interaction import FLOOR, NONE_CLASS, FeatureMap
from sceneplace.motion import FrameWeights, MotionSequence
from sceneplace.objective import (
    AlterationObjective,
    LossWeights,
    PlacementObjective,
    PlacementParams,
    SceneFields,
    affordance_loss,
    motion_loss,
    pack_alteration,
    penetration_loss,
    pose_loss,
    soft_abs,
    wrap_angle,
)
from sceneplace.optimizer import LbfgsConfig, minimize


def test_soft_abs():
    v, d = soft_abs(np.array([0.0, 0.2, -0.2]), 1e-3)
    assert v[0] == 0.0 and d[0] == 0.0
    assert np.allclose(v[1:], 0.2, atol=1e-3) and np.allclose(np.abs(d[1:]), 1, atol=1e-4)
    v, d = soft_abs(np.array([-0.3]), 0.0)
    assert v[0] == 0.3 and d[0] == -1


def test_placement_params_wrap():
    p = PlacementParams((1.0, 2.0), -0.5)
    assert p.tau == (1.0, 0.0, 2.0)
    assert 0 <= p.theta < 2 * math.pi
    assert wrap_angle(-1e-18) == 0.0
    with pytest.raises(ValueError):
        PlacementParams((0, 0, 0), math.inf)
    with pytest.raises(ValueError):
        LossWeights(lambda_pen=-1)


def test_afford_zero_contact(flat_floor):
    _, scene = flat_floor
    v = np.random.default_rng(0).uniform(-1, 1, (20, 3))
    loss, grad = affordance_loss(v, np.zeros(20), np.full(20, FLOOR), scene.sdf, scene.classes)
    assert loss == 0 and not grad.any()


def test_afford_on_surface_is_zero(flat_floor):
    _, scene = flat_floor
    loss, _ = affordance_loss([[0.0, 0.0, 0.0]], [1.0], [FLOOR], scene.sdf, scene.classes)
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_afford_above_floor(flat_floor):
    _, scene = flat_floor
    loss, grad = affordance_loss([[0.3, 0.2, -0.4]], [1.0], [FLOOR], scene.sdf, scene.classes,
                                 lambda_sem=1.0)
    assert loss == pytest.approx(0.4, abs=2e-3)  # smoothing shaves delta off each term
    assert grad[0, 1] > 0
    exact, _ = affordance_loss([[0.3, 0.2, -0.4]], [1.0], [FLOOR], scene.sdf, scene.classes,
                               smoothing=0.0)
    assert exact == pytest.approx(0.4, abs=1e-6)


def half_space():
    """sdf = y on a small lattice: the ground below y = 0 is solid."""
    dims = (5, 9, 5)
    y = -0.4 + 0.1 * np.arange(9)
    return SdfGrid((-0.2, -0.4, -0.2), 0.1, dims, np.broadcast_to(y[None, :, None], (5, 9, 5)))


def test_penetration_examples():
    sdf = half_space()
    assert penetration_loss([[0.0, 0.3, 0.0], [0.1, 0.1, -0.1]], sdf)[0] == 0
    loss, _ = penetration_loss([[0.0, -0.1, 0.0]], sdf, 100.0)
    assert loss == pytest.approx(1.0, rel=1e-5)


def test_penetration_gradient_pushes_out():
    scene = linear_scene()
    rng = np.random.default_rng(1)
    v = rng.uniform([-0.8, -0.4, -0.8], [0.8, 0.3, 0.8], (300, 3))
    vals, normals = scene.sdf.sample(v)
    _, g = penetration_loss(v, scene.sdf)
    inside = vals < 0
    assert inside.sum() > 20
    assert np.all(np.sum(-g[inside] * normals[inside], axis=1) > 0)


def test_pose_loss_examples():
    rng = np.random.default_rng(2)
    orig = rng.normal(size=(3, 24, 3))
    assert pose_loss(orig, orig)[0].sum() == 0
    cur = orig.copy()
    cur[1, 5, 2] += 0.1
    assert pose_loss(cur, orig)[0][1] == pytest.approx(0.01)
    cur = orig + rng.normal(0, 0.1, orig.shape)
    direct = sum(float(np.sum((cur[i] - orig[i]) ** 2)) for i in range(3))
    assert pose_loss(cur, orig)[0].sum() == pytest.approx(direct, abs=1e-12)
    with pytest.raises(ValueError):
        pose_loss(cur[:2], orig)


def test_motion_loss_examples():
    rng = np.random.default_rng(3)
    p, t = rng.normal(size=(5, 24, 3)), rng.normal(size=(5, 3))
    assert motion_loss(p, t, p, t)[0].sum() == 0
    assert motion_loss(p, t + [3.0, -1.0, 2.0], p, t)[0].sum() == pytest.approx(0, abs=1e-20)
    d = 0.07
    moved = t.copy()
    moved[2, 1] += d
    assert motion_loss(p, moved, p, t, 0.1)[0].sum() == pytest.approx(0.1 * 2 * d * d)
    with pytest.raises(ValueError):
        motion_loss(p[:1], t[:1], p[:1], t[:1])


@settings(max_examples=20, deadline=None)
@given(st.tuples(*[st.floats(-5, 5) for _ in range(3)]))
def test_motion_translation_term_ignores_global_shift(shift):
    rng = np.random.default_rng(4)
    p, t = rng.normal(size=(4, 24, 3)), rng.normal(size=(4, 3))
    orig_t = t + rng.normal(0, 0.1, t.shape)
    a = motion_loss(p, t, p, orig_t)[0]
    b = motion_loss(p, t + np.array(shift), p, orig_t)[0]
    assert np.allclose(a, b, atol=1e-9)


def test_losses_non_negative():
    scene = linear_scene()
    rng = np.random.default_rng(5)
    v = rng.uniform(-0.8, 0.8, (4, 50, 3))
    f = random_features(rng, 4, 50)
    assert np.all(affordance_loss(v, f.contact, f.semantic, scene.sdf, scene.classes)[0] >= 0)
    assert np.all(penetration_loss(v, scene.sdf)[0] >= 0)


def test_gradient_master_property(body):
    for name, (err, count) in gradient_master(body, seed=11).items():
        assert count >= 200
        assert err < 1e-3, name


def test_empty_scene_placement_energy_is_zero(body, stand_clip):
    grid = SdfGrid((-3, -1, -3), 0.5, (13, 9, 13), np.full((9, 13, 13), 10.0))
    scene = SceneFields(grid)
    v = body.vertices(stand_clip.poses, stand_clip.translations)
    ep = PlacementObjective(v, FeatureMap.zeros(len(v), body.num_vertices),
                            FrameWeights(np.ones(len(v))), scene, LossWeights())
    rng = np.random.default_rng(6)
    for _ in range(5):
        val, g = ep(np.array([*rng.uniform(-1, 1, 3), rng.uniform(0, 6)]))
        assert val == 0 and not g.any()


def test_vertical_sweep_finds_floor(body, stand_clip, flat_floor):
    _, scene = flat_floor
    v = body.vertices(stand_clip.poses, stand_clip.translations)
    ep = PlacementObjective(v, sole_features(body, len(v)), FrameWeights(np.ones(len(v))),
                            scene, LossWeights())
    heights = np.arange(-0.1, 0.3, 0.005)
    values = [ep.value(np.array([0.0, y, 0.0, 0.0])) for y in heights]
    best = heights[int(np.argmin(values))]
    # the clip stands on y = 0 and the pivot is its lowest point
    assert abs(best) <= 0.005 + 1e-9


def test_yaw_does_not_matter_over_a_flat_floor(body, stand_clip, flat_floor):
    _, scene = flat_floor
    v = body.vertices(stand_clip.poses, stand_clip.translations)
    ep = PlacementObjective(v, sole_features(body, len(v)), FrameWeights(np.ones(len(v))),
                            scene, LossWeights(lambda_sem=0.0))
    vals = [ep.value(np.array([0.1, 0.05, -0.1, t])) for t in np.linspace(0, 2 * np.pi, 13)]
    assert np.ptp(vals) <= 1e-6 * max(1.0, abs(vals[0]))


def test_placement_energy_frame_relabeling(body, stand_clip):
    scene = linear_scene()
    rng = np.random.default_rng(7)
    v = body.vertices(stand_clip.poses[:5], stand_clip.translations[:5])
    f = random_features(rng, 5, body.num_vertices)
    k = rng.random(5) + 0.1
    x = np.array([0.1, 0.2, -0.1, 1.0])
    pivot = np.zeros(3)
    a = PlacementObjective(v, f, FrameWeights(k), scene, LossWeights(), pivot).value(x)
    perm = rng.permutation(5)
    b = PlacementObjective(v[perm], f.take(perm), FrameWeights(k[perm]), scene, LossWeights(),
                           pivot).value(x)
    assert a == pytest.approx(b, rel=1e-12)


def test_alteration_zero_case(body, stand_clip):
    grid = SdfGrid((-3, -1, -3), 0.5, (13, 9, 13), np.full((9, 13, 13), 10.0))
    m = stand_clip
    alt = AlterationObjective(m, FeatureMap.zeros(len(m), body.num_vertices),
                              FrameWeights(np.ones(len(m))), SceneFields(grid), LossWeights(),
                              body, PlacementParams((0, 0, 0), 0.0), np.zeros(3))
    val, g = alt(alt.initial())
    assert val == 0 and not g.any()


def test_stronger_motion_weight_keeps_motion_closer(body, flat_floor):
    _, scene = flat_floor
    rng = np.random.default_rng(8)
    frames = 4
    poses = np.zeros((frames, 24, 3))
    poses[:, 16, 2], poses[:, 17, 2] = -1.4, 1.4
    trans = np.zeros((frames, 3))
    trans[:, 1] = 0.08 + 0.03 * rng.random(frames)
    low = body.vertices(poses, np.zeros((frames, 3)))[..., 1].min()
    trans[:, 1] -= low
    motion = MotionSequence(30, poses, trans)
    feats = sole_features(body, frames)
    k = FrameWeights(np.ones(frames))
    pivot = np.array([0.0, 0.0, 0.0])
    deviation = []
    for lam in (0.1, 1.0, 10.0):
        alt = AlterationObjective(motion, feats, k, scene, LossWeights(lambda_mot=lam), body,
                                  PlacementParams((0, 0, 0), 0.0), pivot)
        z, _, _ = minimize(alt, alt.initial(), LbfgsConfig(max_steps=60))
        p, t = alt.unpack(z)
        lm = motion_loss(p, t, motion.poses, motion.translations)[0]
        deviation.append(float(np.dot(k.weights[:-1], lm)))
    assert deviation[0] >= deviation[1] >= deviation[2]
    assert deviation[0] > deviation[2]


def test_semantic_term_skips_none_and_warns_on_missing(flat_floor, caplog):
    _, scene = flat_floor
    v = np.array([[0.0, 0.3, 0.0], [0.0, 0.3, 0.0]])
    a, _ = affordance_loss(v, [1.0, 1.0], [NONE_CLASS, FLOOR], scene.sdf, scene.classes)
    b, _ = affordance_loss(v[1:], [1.0], [FLOOR], scene.sdf, scene.classes)
    geo, _ = affordance_loss(v[:1], [1.0], [NONE_CLASS], scene.sdf, scene.classes)
    assert a == pytest.approx(b + geo)
    with caplog.at_level("WARNING"):
        c, _ = affordance_loss(v[:1], [1.0], [5], scene.sdf, scene.classes)
    assert c == pytest.approx(geo)


def test_pack_layout_is_frame_major():
    p = np.arange(2 * 72, dtype=float).reshape(2, 24, 3)
    t = -np.arange(6, dtype=float).reshape(2, 3) - 1
    x = pack_alteration(p, t)
    assert np.array_equal(x[:72], p[0].ravel()) and np.array_equal(x[72:75], t[0])
    assert np.array_equal(x[75:147], p[1].ravel())
