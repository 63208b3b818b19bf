import math
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import box_mesh, merge, sole_features
from sceneplace.benchmark import prepare_motion, prepare_scene
from sceneplace.geometry import build_class_distance_fields, build_sdf
from sceneplace.interaction import CHAIR, FLOOR, WALL
from sceneplace.motion import FrameWeights, MotionSequence
from sceneplace.objective import (
    LossWeights,
    PlacementObjective,
    SceneFields,
    motion_pivot,
    place_vertices,
)
from sceneplace.placement import (
    EmptyGridError,
    PlacementConfig,
    candidate_grid,
    optimize_candidate,
    place,
    rank_key,
    screen,
)
from sceneplace.synthetic import (
    SyntheticMotionSpec,
    SyntheticSceneSpec,
    chair,
    synthetic_motion,
    table,
)


def room_bounds(w, d):
    return np.array([[0.0, 0.0, 0.0], [w, 2.4, d]])


def test_thirty_degrees_gives_twelve_orientations():
    grid = candidate_grid(room_bounds(2, 2), 0.5, 30)
    per_point = {}
    for xz, th in grid:
        per_point.setdefault(xz, []).append(th)
    assert all(len(v) == 12 for v in per_point.values())
    assert np.allclose(sorted(per_point[next(iter(per_point))]), np.radians(np.arange(0, 360, 30)))


def test_grid_counts():
    assert len(candidate_grid(room_bounds(2, 3), 1.0, 30)) == 72
    assert len(candidate_grid(room_bounds(2, 3), 1.0, 360)) == 6
    with pytest.raises(ValueError):
        candidate_grid(room_bounds(2, 3), 1.0, 7)


def test_grid_points_respect_inset():
    grid = candidate_grid(room_bounds(4, 3), 0.25, 90, inset=0.6)
    xz = np.array([g[0] for g in grid])
    assert xz[:, 0].min() >= 0.6 and xz[:, 0].max() <= 3.4
    assert xz[:, 1].min() >= 0.6 and xz[:, 1].max() <= 2.4


def test_empty_grid_is_an_error():
    with pytest.raises(EmptyGridError, match="smaller than the agent footprint"):
        candidate_grid(room_bounds(0.5, 0.5), 0.25, 30, inset=0.6)


def test_optimal_candidate_is_a_fixed_point(body, stand_clip, flat_floor):
    _, scene = flat_floor
    m = stand_clip
    f = sole_features(body, len(m))
    w = FrameWeights(np.ones(len(m)))
    c = optimize_candidate([0.0, 0.0, 0.0, 0.0], m, f, w, scene, body, PlacementConfig())
    step = np.abs(c.params - [0, 0, 0, 0])
    step[3] = min(step[3], 2 * math.pi - step[3])
    assert step.max() < 1e-3
    assert np.abs(c.translations - m.translations).max() < 1e-3


def test_drop_from_above_lands_soles(body, stand_clip, flat_floor):
    _, scene = flat_floor
    m = stand_clip
    f = sole_features(body, len(m))
    c = optimize_candidate([0.0, 0.3, 0.0, 0.0], m, f, FrameWeights(np.ones(len(m))), scene,
                           body, PlacementConfig())
    pivot = motion_pivot(body.vertices(m.poses, m.translations))
    world = place_vertices(body.vertices(c.poses, c.translations), pivot, c.params[:3],
                           c.params[3])
    sdf, _ = scene.sdf.sample(world[:, body.template.region("sole")])
    assert np.abs(sdf).mean() < 0.02


def wall_scene():
    floor = box_mesh((0, -0.05, 0), (4, 0.1, 4), FLOOR)
    wall = box_mesh((0, 1.2, 0), (0.6, 2.4, 3.0), WALL)
    mesh = merge(floor, wall)
    sdf = build_sdf(mesh, 0.05, 0.5)
    return SceneFields(sdf, build_class_distance_fields(mesh, sdf),
                       np.array([[-2, 0, -2], [2, 0, 2]]))


def test_candidate_inside_wall_gets_pushed_out(body, stand_clip):
    scene = wall_scene()
    m = stand_clip
    f = sole_features(body, len(m))
    w = FrameWeights(np.ones(len(m)))
    x0 = np.array([0.05, 0.0, 0.0, 0.0])
    start = PlacementObjective(body.vertices(m.poses, m.translations), f, w, scene,
                               LossWeights()).value(x0)
    c = optimize_candidate(x0, m, f, w, scene, body, PlacementConfig())
    assert c.placement_energy < start


def test_empty_room_standing_clip(body):
    clip = synthetic_motion(SyntheticMotionSpec("stand", duration=1 / 30), body)
    assert len(clip) == 2  # the shortest clip a motion may hold
    room = prepare_scene(SyntheticSceneSpec(3, 3))
    m, f, w = prepare_motion(clip, body)
    res = place(room, m, f, w, body, PlacementConfig(grid_step=0.5, top_b=2))
    best = res.best
    assert best.metrics.contact == 1.0
    # only the feet touch; a touching vertex is never counted as collision-free
    values, _ = room.sdf.sample(best.world_vertices(body))
    touching = np.unique(np.nonzero(values <= 0)[1])
    assert set(touching.tolist()) <= set(body.template.region("foot").tolist())
    assert best.metrics.non_collision >= 1 - len(body.template.region("foot")) / body.num_vertices


def test_sitting_clip_lands_on_chair(body):
    spec = SyntheticSceneSpec(3, 3, furniture=tuple(chair(1.5, 1.5, 0.0)))
    scene = prepare_scene(spec)
    m, f, w = prepare_motion(synthetic_motion(SyntheticMotionSpec("sit"), body), body)
    res = place(scene, m, f, w, body, PlacementConfig(top_b=4))
    seat = body.template.region("seat")
    rest = body.vertices(m.poses[-1], m.translations[-1])[0]
    buttocks = seat[rest[seat, 1] - rest[seat, 1].min() <= 0.015]
    world = res.best.world_vertices(body)[-1, buttocks]
    d, _ = scene.classes.sample(CHAIR, world)
    assert d.max() < 0.05


def test_tiny_room_long_walk_has_no_fit(body):
    frames = 60
    trans = np.zeros((frames, 3))
    trans[:, 2] = np.linspace(0, 10, frames)
    walk = MotionSequence(30, np.zeros((frames, 24, 3)), trans)
    scene = prepare_scene(SyntheticSceneSpec(0.5, 0.5))
    f = sole_features(body, frames)
    res = place(scene, walk, f, FrameWeights(np.ones(frames)), body)
    assert not res.ok and "footprint" in res.reason


@pytest.fixture(scope="module")
def table_room(body):
    furniture = tuple(table(1.7, 1.25, 0.0, width=0.8, depth=0.6))
    spec = SyntheticSceneSpec(2.5, 2.5, furniture=furniture)
    scene = prepare_scene(spec)
    clip = synthetic_motion(SyntheticMotionSpec("stand", duration=0.5), body)
    return scene, prepare_motion(clip, body)


def test_screening_soundness_on_small_grid(body, table_room):
    scene, (m, f, w) = table_room
    cfg = PlacementConfig(grid_step=0.7, rot_step=90)
    s = screen(scene, m, f, w, body, cfg)
    assert len(s.params) <= 20
    res = place(scene, m, f, w, body, cfg, screening=s)
    chosen = set(s.top(cfg.top_b).tolist())
    for i in range(len(s.params)):
        if i in chosen or s.status[i] == 2:
            continue
        c = optimize_candidate(s.params[i], m, f, w, scene, body, cfg, s.pivot, s.energy[i])
        assert res.best.total_loss <= c.total_loss + 1e-12


def test_screen_matches_placement_energy(body, table_room):
    scene, (m, f, w) = table_room
    cfg = PlacementConfig(grid_step=0.5, rot_step=90, top_b=1000)
    s = screen(scene, m, f, w, body, cfg)
    ep = PlacementObjective(body.vertices(m.poses, m.translations), f, w, scene, cfg.loss,
                            s.pivot)
    done = s.status == 0
    assert done.sum() > 5
    direct = np.array([ep.value(p) for p in s.params[done]])
    assert np.allclose(direct, s.energy[done], rtol=1e-9, atol=1e-12)


def test_pruned_screen_keeps_the_true_top(body, table_room):
    scene, (m, f, w) = table_room
    full = screen(scene, m, f, w, body, PlacementConfig(grid_step=0.5, rot_step=90, top_b=1000))
    pruned = screen(scene, m, f, w, body, PlacementConfig(grid_step=0.5, rot_step=90, top_b=3))
    assert np.array_equal(full.top(3), pruned.top(3))


def test_rank_key_breaks_ties_by_tau_then_theta():
    items = [SimpleNamespace(total_loss=1.0, tau=(1.0, 0.0, 0.0), theta=0.5),
             SimpleNamespace(total_loss=1.0, tau=(0.5, 0.0, 2.0), theta=1.0),
             SimpleNamespace(total_loss=1.0, tau=(0.5, 0.0, 2.0), theta=0.2),
             SimpleNamespace(total_loss=0.5, tau=(9.0, 0.0, 9.0), theta=3.0)]
    order = sorted(items, key=rank_key)
    assert [(p.total_loss, p.tau, p.theta) for p in order] == [
        (0.5, (9.0, 0.0, 9.0), 3.0), (1.0, (0.5, 0.0, 2.0), 0.2),
        (1.0, (0.5, 0.0, 2.0), 1.0), (1.0, (1.0, 0.0, 0.0), 0.5)]


def test_place_is_deterministic(body, table_room):
    scene, (m, f, w) = table_room
    cfg = PlacementConfig(grid_step=0.7, rot_step=90, top_b=2)
    a = place(scene, m, f, w, body, cfg).best
    b = place(scene, m, f, w, body, cfg).best
    assert a.tau == b.tau and a.theta == b.theta and a.total_loss == b.total_loss
    assert a.motion.poses.tobytes() == b.motion.poses.tobytes()


def test_place_rejects_misaligned_inputs(body, table_room):
    scene, (m, f, w) = table_room
    with pytest.raises(ValueError):
        place(scene, m, f.take(np.arange(len(m) - 1)), w, body)
