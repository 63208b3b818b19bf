import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sceneplace.interaction import (
    CHAIR,
    FLOOR,
    NONE_CLASS,
    FeatureError,
    FeatureMap,
    SemanticPalette,
    estimate_features_heuristic,
    load_features,
    read_features,
    write_features,
)
from sceneplace.synthetic import SyntheticMotionSpec, synthetic_motion


@pytest.fixture(scope="module")
def clips(body):
    return {k: synthetic_motion(SyntheticMotionSpec(k), body) for k in ("stand", "jump", "sit")}


def test_standing_soles_touch_floor(body, clips):
    f = estimate_features_heuristic(clips["stand"], body)
    sole = body.template.region("sole")
    head = body.template.region("head")
    assert f.contact[:, sole].min() > 0.9
    assert np.all(f.semantic[:, sole] == FLOOR)
    assert f.contact[:, head].max() < 0.05


def test_jump_apex_has_no_contact(body, clips):
    m = clips["jump"]
    f = estimate_features_heuristic(m, body)
    apex = int(np.argmax(m.translations[:, 1]))
    assert f.contact[apex].max() < 0.2


def test_sitting_seat_is_chair(body, clips):
    m = clips["sit"]
    f = estimate_features_heuristic(m, body)
    seat = body.template.region("seat")
    v = body.vertices(m.poses[-1], m.translations[-1])[0]
    assert np.all(f.semantic[-1, seat] == CHAIR)
    # the buttocks are the bottom layer of the seat patch, resting on the seat plane
    rise = v[seat, 1] - v[seat, 1].min()
    buttocks = seat[rise <= 0.015]
    assert len(buttocks) >= 6
    assert f.contact[-1, buttocks].min() > 0.7


@settings(max_examples=10, deadline=None)
@given(st.floats(-1.0, 2.0))
def test_heuristic_is_height_invariant(body, clips, shift):
    m = clips["stand"]
    moved = m.with_values(m.poses, m.translations + [0.0, shift, 0.0])
    a = estimate_features_heuristic(m, body)
    b = estimate_features_heuristic(moved, body)
    assert np.allclose(a.contact, b.contact, atol=1e-5)
    assert np.array_equal(a.semantic, b.semantic)


def test_all_zero_map_is_valid():
    f = FeatureMap.zeros(3, 10)
    assert not f.contact.any() and np.all(f.semantic == NONE_CLASS)


def test_out_of_range_probability_names_location():
    c = np.zeros((2, 5))
    c[1, 3] = 1.2
    with pytest.raises(FeatureError, match="frame 1, vertex 3"):
        FeatureMap(c, np.zeros((2, 5)))


@pytest.mark.parametrize("suffix", [".json", ".pftr"])
def test_round_trip_is_bit_identical(tmp_path, suffix):
    rng = np.random.default_rng(0)
    f = FeatureMap(rng.random((4, 7)).astype(np.float32), rng.choice([0, 2, 3, 255], (4, 7)))
    path = tmp_path / f"feat{suffix}"
    write_features(path, f)
    g = read_features(path)
    assert g.contact.tobytes() == f.contact.tobytes()
    assert g.semantic.tobytes() == f.semantic.tobytes()
    again = tmp_path / f"again{suffix}"
    write_features(again, g)
    assert again.read_bytes() == path.read_bytes()


def test_load_checks_counts_and_classes(tmp_path):
    path = tmp_path / "f.pftr"
    s = np.zeros((2, 4), np.uint16)
    s[1, 2] = 42
    write_features(path, FeatureMap(np.zeros((2, 4)), s))
    with pytest.raises(FeatureError, match="motion has 3"):
        load_features(path, frames=3)
    with pytest.raises(FeatureError, match="template has 5"):
        load_features(path, vertices=5)
    with pytest.raises(FeatureError, match="class id 42 at frame 1, vertex 2"):
        load_features(path)


def test_palette_reserves_none():
    p = SemanticPalette()
    assert p[NONE_CLASS] == "none" and p.id_of("chair") == CHAIR
    with pytest.raises(ValueError):
        SemanticPalette({0: "none"})
