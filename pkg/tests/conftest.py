import numpy as np
import pytest
from scipy.spatial import ConvexHull

from sceneplace.body import BodyModel
from sceneplace.geometry import (
    ClassDistanceFields,
    SdfGrid,
    TriangleMesh,
    build_class_distance_fields,
    build_sdf,
)
from sceneplace.interaction import CHAIR, FLOOR, NONE_CLASS, FeatureMap
from sceneplace.formats import write_labels, write_obj
from sceneplace.objective import SceneFields
from sceneplace.synthetic import (
    Primitive,
    SyntheticMotionSpec,
    SyntheticSceneSpec,
    generate_synthetic_scene,
    synthetic_motion,
)

# coarse search settings for end-to-end command tests
FAST = ["--grid-step", "0.6", "--rot-step", "90", "--top-b", "2"]


def box_mesh(center=(0, 0, 0), size=(1, 1, 1), label=None):
    v, t = Primitive("box", tuple(center), tuple(size), "floor").mesh_arrays()
    labels = None if label is None else np.full(len(v), label)
    return TriangleMesh(v, t, labels)


def hull_mesh(points):
    hull = ConvexHull(points)
    tris = hull.simplices.copy()
    centre = points.mean(axis=0)
    for i, (a, b, c) in enumerate(tris):
        n = np.cross(points[b] - points[a], points[c] - points[a])
        if np.dot(n, points[a] - centre) < 0:
            tris[i] = (a, c, b)
    used = np.unique(tris)
    remap = -np.ones(len(points), int)
    remap[used] = np.arange(len(used))
    return TriangleMesh(points[used], remap[tris])


def write_room(folder, name, width=2.5, depth=2.5):
    """Empty synthetic room written as OBJ plus label sidecar."""
    mesh, _ = generate_synthetic_scene(SyntheticSceneSpec(width, depth, name=name))
    write_obj(folder / f"{name}.obj", mesh)
    write_labels(folder / f"{name}.labels.json", mesh.vertex_labels)
    return folder / f"{name}.obj", folder / f"{name}.labels.json"


def merge(*meshes):
    verts, tris, labels, off = [], [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        labels.append(m.vertex_labels)
        off += len(m.vertices)
    lab = None if any(x is None for x in labels) else np.concatenate(labels)
    return TriangleMesh(np.vstack(verts), np.vstack(tris), lab)


def floor_scene(half=1.5, cell=0.05, padding=0.5):
    """Floor slab whose top face is y = 0, labeled floor."""
    mesh = box_mesh((0, -0.05, 0), (2 * half, 0.1, 2 * half), FLOOR)
    sdf = build_sdf(mesh, cell, padding)
    bounds = np.array([[-half, 0, -half], [half, 0, half]])
    return mesh, SceneFields(sdf, build_class_distance_fields(mesh, sdf), bounds)


def sole_features(body, frames):
    c = np.zeros((frames, body.num_vertices), np.float32)
    s = np.full((frames, body.num_vertices), NONE_CLASS, np.uint16)
    sole = body.template.region("sole")
    c[:, sole] = 1.0
    s[:, sole] = FLOOR
    return FeatureMap(c, s)


@pytest.fixture(scope="session")
def body():
    return BodyModel.default()


@pytest.fixture(scope="session")
def flat_floor():
    return floor_scene()


@pytest.fixture(scope="session")
def stand_clip(body):
    return synthetic_motion(SyntheticMotionSpec("stand", fps=30, duration=0.5), body)


@pytest.fixture(scope="session")
def rng_seed():
    return 12345


# --- gradient checking -------------------------------------------------------------------

def linear_scene(cell=0.1):
    """Tilted-plane SDF plus two positive linear class fields.

    Trilinear interpolation of a linear field is exact, so these fields have
    no cell-face kinks and central differences are clean everywhere.
    """
    dims = (31, 31, 31)
    origin = np.array([-1.5, -0.5, -1.5])
    k, j, i = np.indices(dims[::-1])
    x, y, z = (origin[:, None, None, None] + cell * np.stack([i, j, k]))
    sdf = SdfGrid(origin, cell, dims, 0.9 * y + 0.3 * x - 0.2 * z + 0.05)
    classes = ClassDistanceFields()
    classes[FLOOR] = sdf.like(0.5 * y + 0.1 * x + 2.0)
    classes[CHAIR] = sdf.like(0.2 * y - 0.3 * z + 1.5)
    return SceneFields(sdf, classes, np.array([[-1, 0, -1], [1, 0, 1]]))


def random_features(rng, frames, vertices):
    c = rng.random((frames, vertices))
    s = rng.choice([FLOOR, CHAIR, NONE_CLASS], (frames, vertices))
    return FeatureMap(c, s)


def relative_errors(analytic, numeric, floor=1e-6):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def gradient_master(body, coords=200, seed=0, h=1e-5):
    """Worst analytic-vs-central-difference relative error of every loss and objective.

    Returns {name: (worst relative error, coordinates checked)}.
    """
    from sceneplace.motion import FrameWeights, MotionSequence
    from sceneplace.objective import (
        AlterationObjective,
        LossWeights,
        PlacementObjective,
        PlacementParams,
        affordance_loss,
        motion_loss,
        motion_loss_grad,
        pack_alteration,
        penetration_loss,
        pose_loss,
    )
    from sceneplace.optimizer import finite_difference_gradient

    rng = np.random.default_rng(seed)
    scene = linear_scene()
    n = body.num_vertices
    out = {}

    def check(name, fun, x, analytic, pick):
        fd = finite_difference_gradient(fun, x, h, indices=pick)
        out[name] = (float(relative_errors(analytic[pick], fd[pick]).max()), len(pick))

    # vertex-level scene losses on a cloud straddling the tilted plane
    verts = rng.uniform([-0.8, -0.2, -0.8], [0.8, 0.4, 0.8], (n, 3))
    feats = random_features(rng, 1, n)
    x = verts.ravel()
    pick = rng.choice(x.size, coords, replace=False)
    _, g = affordance_loss(verts, feats.contact[0], feats.semantic[0], scene.sdf, scene.classes)
    check("L_afford", lambda p: affordance_loss(p.reshape(-1, 3), feats.contact[0],
                                                feats.semantic[0], scene.sdf, scene.classes)[0],
          x, g.ravel(), pick)
    _, g = penetration_loss(verts, scene.sdf)
    check("L_pen", lambda p: penetration_loss(p.reshape(-1, 3), scene.sdf)[0], x, g.ravel(), pick)

    frames = 4
    poses = rng.normal(0, 0.3, (frames, 24, 3))
    trans = rng.normal(0, 0.3, (frames, 3))
    orig_p = poses + rng.normal(0, 0.05, poses.shape)
    orig_t = trans + rng.normal(0, 0.05, trans.shape)
    k = FrameWeights(rng.random(frames) + 0.1)

    x = poses.ravel()
    pick = rng.choice(x.size, coords, replace=False)
    _, g = pose_loss(poses, orig_p)
    g = (k.weights[:, None, None] * g).ravel()
    check("L_pose", lambda p: float(np.dot(k.weights, pose_loss(p.reshape(poses.shape),
                                                                orig_p)[0])), x, g, pick)

    x = pack_alteration(poses, trans)
    pick = rng.choice(x.size, coords, replace=False)
    lam_tau = 0.1
    kd = k.weights[:-1]

    def mot(p):
        pp, tt = p.reshape(frames, 75)[:, :72].reshape(frames, 24, 3), p.reshape(frames, 75)[:, 72:]
        return float(np.dot(kd, motion_loss(pp, tt, orig_p, orig_t, lam_tau)[0]))

    _, ep, et = motion_loss(poses, trans, orig_p, orig_t, lam_tau)
    gp, gt = motion_loss_grad(ep, et, kd, lam_tau)
    check("L_mot", mot, x, pack_alteration(gp, gt), pick)

    # objectives on the real body
    motion = MotionSequence(30, orig_p, orig_t + [0.0, 0.3, 0.0])
    body_v = body.vertices(motion.poses, motion.translations)
    feats = random_features(rng, frames, n)
    lw = LossWeights()
    ep_obj = PlacementObjective(body_v, feats, k, scene, lw)
    grads, fds = [], []
    for _ in range(coords // 4):
        x = np.array([*rng.uniform(-0.3, 0.3, 3), rng.uniform(0, 2 * np.pi)])
        grads.append(ep_obj(x)[1])
        fds.append(finite_difference_gradient(ep_obj, x, h))
    out["E_p"] = (float(relative_errors(np.concatenate(grads), np.concatenate(fds)).max()),
                  4 * (coords // 4))

    alt = AlterationObjective(motion, feats, k, scene, lw, body,
                              PlacementParams((0.1, -0.2, 0.05), 0.7), ep_obj.pivot)
    x = pack_alteration(poses, trans + [0.0, 0.3, 0.0])
    pick = rng.choice(x.size, coords, replace=False)
    check("E_alt", alt, x, alt(x)[1], pick)
    return out
