"""Command line entry points: run, export-dataset, synth-scene, synth-motion."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .body import BodyModel
from .config import ConfigError, PipelineConfig
from .formats import (
    FormatError,
    atomic_write,
    cached_grid,
    dump_json,
    file_hash,
    format_obj,
    load_motion,
    load_scene,
    write_labels,
    write_motion,
    write_obj,
)
from .geometry import ClassDistanceFields, TriangleMesh, build_class_distance_fields, build_sdf
from .interaction import FeatureError, estimate_features_heuristic, load_features
from .metrics import passes
from .motion import downsample_indices, output_fps
from .objective import SceneFields
from .placement import place
from .synthetic import (
    MOTION_KINDS,
    SyntheticMotionSpec,
    generate_synthetic_scene,
    scene_suite,
    synthetic_motion,
)
from .weighting import frame_weights

logger = logging.getLogger("sceneplace")

EXIT_OK, EXIT_FAILURE, EXIT_NO_FIT = 0, 1, 2
PLACEMENT_FORMAT = "sceneplace-placement"
FORMAT_VERSION = 1


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class _stage:
    """Re-raise anything escaping the block as a StageError tagged with `name`."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        logger.debug("stage %s", self.name)

    def __exit__(self, kind, exc, tb):
        if exc is None or isinstance(exc, StageError):
            return False
        if isinstance(exc, (ValueError, OSError, KeyError, FloatingPointError, RuntimeError)):
            raise StageError(self.name, str(exc)) from exc
        return False


# --- pipeline ----------------------------------------------------------------------------

def scene_fields(mesh: TriangleMesh, cfg: PipelineConfig) -> SceneFields:
    """SDF and per-class distance fields, memoised through the on-disk grid cache."""
    base = hashlib.sha256(
        f"{mesh.content_hash()}:{cfg.cell_size!r}:{cfg.padding!r}".encode()).hexdigest()
    sdf = cached_grid(f"{base}-sdf", lambda: build_sdf(mesh, cfg.cell_size, cfg.padding))
    classes = None
    if mesh.vertex_labels is not None:
        ids = np.unique(mesh.vertex_labels).tolist()
        built = {}

        def build(cid):
            if not built:
                built.update(build_class_distance_fields(mesh, sdf))
            return built[cid]

        classes = ClassDistanceFields()
        for cid in ids:
            classes[int(cid)] = cached_grid(f"{base}-class{cid}", lambda c=cid: build(c))
    return SceneFields(sdf, classes, np.stack(mesh.bounds))


@dataclass
class RunResult:
    placements: list
    accepted: list
    reason: str
    candidates_total: int
    candidates_valid: int
    motion: object


def run_pipeline(mesh: TriangleMesh, motion, features, cfg: PipelineConfig,
                 body: BodyModel | None = None, fields: SceneFields | None = None) -> RunResult:
    """features is a FeatureMap aligned with `motion` or the string 'heuristic'."""
    body = body or BodyModel.default()
    with _stage("features"):
        if isinstance(features, str):
            feats = estimate_features_heuristic(motion, body, cfg.heuristic())
        else:
            feats = features
        if feats.num_frames != len(motion) or feats.num_vertices != body.num_vertices:
            raise FeatureError(
                f"feature map is {feats.num_frames}x{feats.num_vertices}, expected "
                f"{len(motion)}x{body.num_vertices}")
    with _stage("weights"):
        weights = frame_weights(motion, feats, body, cfg.lambda_g, cfg.lambda_b)
    with _stage("downsample"):
        keep = downsample_indices(motion, weights)
        clip = motion.take(keep, fps=output_fps(motion))
        feats, weights = feats.take(keep), weights.take(keep)
        logger.info("kept %d of %d frames", len(clip), len(motion))
    with _stage("scene"):
        fields = fields or scene_fields(mesh, cfg)
    with _stage("place"):
        res = place(fields, clip, feats, weights, body, cfg.placement())
    accepted = [p for p in res.placements
                if passes(p, cfg.loss_threshold, cfg.min_non_collision, cfg.min_contact)]
    return RunResult(res.placements, accepted, res.reason, res.candidates_total,
                     res.candidates_valid, clip)


def placement_doc(p, rank: int, accepted: bool, cfg: PipelineConfig, inputs: dict) -> dict:
    m = p.motion
    frames = [{"source_index": int(m.source_index[i]), "time": float(m.timestamps[i]),
               "t": m.translations[i].tolist(), "p": m.poses[i].tolist()}
              for i in range(len(m))]
    return {
        "format": PLACEMENT_FORMAT,
        "version": FORMAT_VERSION,
        "rank": rank,
        "accepted": accepted,
        "label": m.label,
        "tau": list(p.tau),
        "theta": p.theta,
        "pivot": p.pivot.tolist(),
        "total_loss": p.total_loss,
        "placement_energy": p.placement_energy,
        "screen_energy": p.screen_energy if math.isfinite(p.screen_energy) else None,
        "initial": list(p.initial),
        "status": list(p.status),
        "fps": m.fps,
        "frames": frames,
        "metrics": p.metrics.to_dict(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "inputs": inputs,
    }


def write_run(out: Path, result: RunResult, cfg: PipelineConfig, inputs: dict,
              body: BodyModel, export_mesh: bool = False) -> None:
    out.mkdir(parents=True, exist_ok=True)
    accepted_ids = {id(p) for p in result.accepted}
    summary = []
    for rank, p in enumerate(result.placements):
        ok = id(p) in accepted_ids
        atomic_write(out / f"placement_{rank}.json",
                     dump_json(placement_doc(p, rank, ok, cfg, inputs)))
        summary.append({"rank": rank, "accepted": ok, "tau": list(p.tau), "theta": p.theta,
                        "total_loss": p.total_loss,
                        "non_collision": p.metrics.non_collision,
                        "contact": p.metrics.contact})
    report = {
        "format": "sceneplace-report",
        "version": FORMAT_VERSION,
        "label": result.motion.label,
        "frames": len(result.motion),
        "candidates_total": result.candidates_total,
        "candidates_valid": result.candidates_valid,
        "accepted": len(result.accepted),
        "reason": result.reason or ("" if result.accepted else "no placement met the thresholds"),
        "placements": summary,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "inputs": inputs,
    }
    atomic_write(out / "report.json", dump_json(report))
    if export_mesh and result.placements:
        world = result.placements[0].world_vertices(body)
        tris = body.template.triangles
        for i, v in enumerate(world):
            atomic_write(out / "mesh_0" / f"frame_{i:04d}.obj", format_obj(v, tris))


# --- commands ----------------------------------------------------------------------------

_OVERRIDES = {
    "grid_step": float, "rot_step": float, "top_b": int, "rounds": int, "lbfgs_steps": int,
    "lr": float, "lambda_mot": float, "lambda_tau": float, "lambda_pen": float,
    "lambda_sem": float, "lambda_g": float, "lambda_b": float, "cell_size": float, "seed": int,
}


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    return cfg.replace(**{k: getattr(args, k) for k in _OVERRIDES})


def cmd_run(args) -> int:
    with _stage("config"):
        cfg = _config(args)
    with _stage("load-scene"):
        mesh = load_scene(args.scene, args.labels)
    with _stage("load-motion"):
        motion = load_motion(args.motion)
    body = BodyModel.default()
    inputs = {"scene": file_hash(args.scene),
              "labels": file_hash(args.labels) if args.labels else None,
              "motion": file_hash(args.motion),
              "features": "heuristic" if args.features == "heuristic"
              else file_hash(args.features)}
    with _stage("load-features"):
        features = "heuristic" if args.features == "heuristic" else load_features(
            args.features, len(motion), body.num_vertices)
    start = time.perf_counter()
    result = run_pipeline(mesh, motion, features, cfg, body)
    logger.info("placement took %.1fs", time.perf_counter() - start)
    with _stage("write"):
        write_run(Path(args.out), result, cfg, inputs, body, args.export_mesh)
    if not result.accepted:
        reason = result.reason or "no placement met the thresholds"
        print(f"no valid fit: {reason}", file=sys.stderr)
        return EXIT_NO_FIT
    best = result.accepted[0]
    print(f"{len(result.accepted)} accepted; best tau={list(np.round(best.tau, 4))} "
          f"theta={best.theta:.4f} loss={best.total_loss:.6g}")
    return EXIT_OK


def _resolve(base: Path, p):
    return None if p is None else (base / p if not Path(p).is_absolute() else Path(p))


def read_manifest(path) -> tuple[list, list]:
    """Manifest: {"scenes": [{"name", "mesh", "labels"?}], "motions": [{"name", "path", "features"?}]}."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from None
    base = path.parent
    scenes, motions = [], []
    for i, s in enumerate(doc.get("scenes", [])):
        if "mesh" not in s:
            raise FormatError(f"{path}: scene {i} has no 'mesh'")
        mesh = _resolve(base, s["mesh"])
        scenes.append({"name": s.get("name", mesh.stem), "mesh": mesh,
                       "labels": _resolve(base, s.get("labels"))})
    for i, m in enumerate(doc.get("motions", [])):
        m = {"path": m} if isinstance(m, str) else m
        if "path" not in m:
            raise FormatError(f"{path}: motion {i} has no 'path'")
        mp = _resolve(base, m["path"])
        motions.append({"name": m.get("name", mp.stem), "path": mp,
                        "features": _resolve(base, m.get("features"))})
    if not scenes or not motions:
        raise FormatError(f"{path}: manifest needs at least one scene and one motion")
    names = [s["name"] for s in scenes] + [m["name"] for m in motions]
    if len(set(s["name"] for s in scenes)) != len(scenes) or \
            len(set(m["name"] for m in motions)) != len(motions):
        raise FormatError(f"{path}: scene and motion names must be unique ({names})")
    return scenes, motions


def pair_key(scene: dict, motion: dict, cfg: PipelineConfig) -> str:
    h = hashlib.sha256()
    for p in (scene["mesh"], scene["labels"], motion["path"], motion["features"]):
        h.update((file_hash(p) if p else "-").encode())
    h.update(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    return h.hexdigest()


_SCENE_MEMO: dict = {}


def _export_pair(task) -> dict:
    """Worker: place one motion in one scene and write the accepted result."""
    scene, motion_entry, cfg, out, key = task
    record = {"scene": scene["name"], "motion": motion_entry["name"], "key": key}
    try:
        mesh = load_scene(scene["mesh"], scene["labels"])
        fields = _SCENE_MEMO.get(mesh.content_hash())
        if fields is None:
            fields = _SCENE_MEMO[mesh.content_hash()] = scene_fields(mesh, cfg)
        motion = load_motion(motion_entry["path"])
        body = BodyModel.default()
        feats = "heuristic" if motion_entry["features"] is None else load_features(
            motion_entry["features"], len(motion), body.num_vertices)
        result = run_pipeline(mesh, motion, feats, cfg, body, fields)
    except Exception as exc:  # per-pair failures must not stop the batch
        logger.error("%s x %s failed: %s", scene["name"], motion_entry["name"], exc)
        return {**record, "status": "failed", "error": str(exc)}
    if not result.accepted:
        return {**record, "status": "rejected",
                "reason": result.reason or "no placement met the thresholds"}
    inputs = {"scene": file_hash(scene["mesh"]),
              "labels": file_hash(scene["labels"]) if scene["labels"] else None,
              "motion": file_hash(motion_entry["path"]),
              "features": file_hash(motion_entry["features"]) if motion_entry["features"]
              else "heuristic"}
    doc = placement_doc(result.accepted[0], 0, True, cfg, inputs)
    doc["provenance"] = {"scene": scene["name"], "motion": motion_entry["name"],
                         "motion_label": motion.label, "key": key}
    name = f"{scene['name']}__{motion_entry['name']}.json"
    atomic_write(out / "placements" / name, dump_json(doc))
    return {**record, "status": "accepted", "file": f"placements/{name}",
            "non_collision": doc["metrics"]["non_collision"],
            "contact": doc["metrics"]["contact"]}


def cmd_export_dataset(args) -> int:
    with _stage("config"):
        cfg = _config(args)
    with _stage("manifest"):
        scenes, motions = read_manifest(args.manifest)
    out = Path(args.out)
    state = out / "state"
    state.mkdir(parents=True, exist_ok=True)
    tasks, records = [], []
    for s in scenes:
        for m in motions:
            key = pair_key(s, m, cfg)
            done = state / f"{key}.json"
            if done.exists():
                rec = json.loads(done.read_text())
                records.append({**rec, "skipped": True})
                continue
            tasks.append((s, m, cfg, out, key))
    logger.info("%d pairs to run, %d already exported", len(tasks), len(records))
    if args.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_export_pair, tasks))
    else:
        results = [_export_pair(t) for t in tasks]
    for rec in results:
        if rec["status"] != "failed":
            atomic_write(state / f"{rec['key']}.json", dump_json(rec))
        records.append(rec)
    records.sort(key=lambda r: (r["scene"], r["motion"]))
    counts = {k: sum(1 for r in records if r["status"] == k)
              for k in ("accepted", "rejected", "failed")}
    counts["skipped"] = sum(1 for r in records if r.get("skipped"))
    summary = {"format": "sceneplace-dataset", "version": FORMAT_VERSION, "pairs": len(records),
               **counts, "config": cfg.to_dict(),
               "entries": [{k: v for k, v in r.items() if k != "skipped"} for r in records]}
    atomic_write(out / "summary.json", dump_json(summary))
    print(f"{counts['accepted']} accepted, {counts['rejected']} rejected, "
          f"{counts['failed']} failed, {counts['skipped']} skipped of {len(records)} pairs")
    return EXIT_FAILURE if counts["failed"] else EXIT_OK


def cmd_synth_scene(args) -> int:
    out = Path(args.out)
    for spec in scene_suite(args.count, args.seed):
        mesh, truth = generate_synthetic_scene(spec)
        write_obj(out / f"{spec.name}.obj", mesh)
        write_labels(out / f"{spec.name}.labels.json", mesh.vertex_labels)
        atomic_write(out / f"{spec.name}.truth.json", dump_json(truth.to_dict()))
    print(f"wrote {args.count} scenes to {out}")
    return EXIT_OK


def cmd_synth_motion(args) -> int:
    kinds = MOTION_KINDS if args.kind == "all" else (args.kind,)
    body = BodyModel.default()
    out = Path(args.out)
    for i, kind in enumerate(kinds):
        spec = SyntheticMotionSpec(kind, fps=args.fps, duration=args.duration,
                                   drift=args.drift, seed=args.seed + i)
        write_motion(out / f"{kind}.mjson", synthetic_motion(spec, body))
    print(f"wrote {len(kinds)} motion(s) to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sceneplace",
                                     description="Place and adapt human motion clips in 3D scenes.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def tunables(p):
        p.add_argument("--config", help="JSON file with PipelineConfig keys")
        for name, kind in _OVERRIDES.items():
            p.add_argument("--" + name.replace("_", "-"), dest=name, type=kind)

    run = sub.add_parser("run", help="place one motion in one scene")
    run.add_argument("--scene", required=True, help="OBJ triangle mesh")
    run.add_argument("--labels", help="JSON array of per-vertex class ids")
    run.add_argument("--motion", required=True, help="motion JSON file")
    run.add_argument("--features", default="heuristic",
                     help="feature file (.json or binary) or 'heuristic'")
    run.add_argument("--out", required=True)
    run.add_argument("--export-mesh", action="store_true",
                     help="write per-frame OBJ meshes of the best placement")
    tunables(run)
    run.set_defaults(func=cmd_run)

    exp = sub.add_parser("export-dataset", help="place every manifest motion in every scene")
    exp.add_argument("--manifest", required=True)
    exp.add_argument("--out", required=True)
    exp.add_argument("--workers", type=int, default=1)
    tunables(exp)
    exp.set_defaults(func=cmd_export_dataset)

    ss = sub.add_parser("synth-scene", help="write the randomized synthetic room suite")
    ss.add_argument("--count", type=int, default=20)
    ss.add_argument("--seed", type=int, default=0)
    ss.add_argument("--out", required=True)
    ss.set_defaults(func=cmd_synth_scene)

    sm = sub.add_parser("synth-motion", help="write scripted synthetic motion clips")
    sm.add_argument("--kind", choices=MOTION_KINDS + ("all",), default="all")
    sm.add_argument("--fps", type=float, default=30.0)
    sm.add_argument("--duration", type=float)
    sm.add_argument("--drift", type=float, default=0.0)
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--out", required=True)
    sm.set_defaults(func=cmd_synth_motion)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (StageError, ConfigError, FormatError, FeatureError) as exc:
        print(f"error {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
