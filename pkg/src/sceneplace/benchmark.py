"""Synthetic suite runs comparing the full pipeline against its ablations."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .body import BodyModel
from .geometry import build_class_distance_fields, build_sdf
from .interaction import estimate_features_heuristic
from .motion import downsample_indices, output_fps
from .objective import SceneFields
from .placement import PlacementConfig, place, screen
from .synthetic import generate_synthetic_scene, motion_suite, scene_suite
from .weighting import frame_weights

logger = logging.getLogger(__name__)


def ablations(base: PlacementConfig) -> dict:
    """Named variants: the full pipeline, no alteration, and each motion term switched off."""
    return {
        "full": base,
        "placement_only": dataclasses.replace(base, alteration=False),
        "no_pose": dataclasses.replace(base, loss=dataclasses.replace(base.loss, lambda_pose=0.0)),
        "no_motion": dataclasses.replace(base, loss=dataclasses.replace(base.loss, lambda_mot=0.0)),
    }


@dataclass
class SuiteResult:
    rows: list = field(default_factory=list)  # one dict per (scene, motion, variant)
    seconds: float = 0.0

    def mean(self, variant: str, key: str) -> float:
        vals = [r[key] for r in self.rows if r["variant"] == variant]
        return float(np.mean(vals)) if vals else float("nan")

    def summary(self) -> dict:
        names = sorted({r["variant"] for r in self.rows})
        return {n: {"non_collision": self.mean(n, "non_collision"),
                    "contact": self.mean(n, "contact"),
                    "placed": sum(1 for r in self.rows if r["variant"] == n and r["placed"])}
                for n in names}


def prepare_scene(spec, cell_size: float = 0.05):
    mesh, truth = generate_synthetic_scene(spec)
    sdf = build_sdf(mesh, cell_size=cell_size)
    return SceneFields(sdf, build_class_distance_fields(mesh, sdf), truth.bounds)


def prepare_motion(motion, body: BodyModel):
    """Heuristic features, frame weights and downsampling for one clip."""
    feats = estimate_features_heuristic(motion, body)
    weights = frame_weights(motion, feats, body)
    keep = downsample_indices(motion, weights)
    return motion.take(keep, fps=output_fps(motion)), feats.take(keep), weights.take(keep)


def run_suite(base: PlacementConfig, scenes: int = 20, seed: int = 0, drift: float = 0.03,
              variants: dict | None = None, fps: float = 30.0, cell_size: float = 0.05,
              body: BodyModel | None = None) -> SuiteResult:
    """Place every synthetic motion in every synthetic scene under each variant.

    A failed placement scores non-collision 1 and contact 0, i.e. the agent
    was never put into the scene.
    """
    body = body or BodyModel.default()
    variants = variants or ablations(base)
    result = SuiteResult()
    start = time.perf_counter()
    clips = [prepare_motion(m, body) for m in motion_suite(fps=fps, drift=drift, seed=seed,
                                                           body=body)]
    for spec in scene_suite(scenes, seed):
        scene = prepare_scene(spec, cell_size)
        for motion, feats, weights in clips:
            shared = screen(scene, motion, feats, weights, body, base)
            for name, cfg in variants.items():
                res = place(scene, motion, feats, weights, body, cfg, screening=shared)
                best = res.best
                result.rows.append({
                    "scene": spec.name, "motion": motion.label, "variant": name,
                    "placed": best is not None,
                    "non_collision": best.metrics.non_collision if best else 1.0,
                    "contact": best.metrics.contact if best else 0.0,
                    "loss": best.total_loss if best else float("inf"),
                })
        logger.info("%s done after %.1fs", spec.name, time.perf_counter() - start)
    result.seconds = time.perf_counter() - start
    return result
