"""One flat, validated configuration object covering every pipeline tunable."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .interaction import HeuristicParams
from .metrics import DEFAULT_MIN_CONTACT, DEFAULT_MIN_NON_COLLISION
from .objective import LossWeights
from .optimizer import LbfgsConfig
from .placement import PlacementConfig, _orientation_count


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # scene
    cell_size: float = 0.05
    padding: float = 0.5
    # heuristic features
    sigma: float = 0.05
    velocity_threshold: float = 0.05
    seat_band: tuple = (0.3, 0.55)
    table_band: tuple = (0.6, 1.1)
    # frame weights
    lambda_g: float = 0.5
    lambda_b: float = 0.5
    # search and refinement
    grid_step: float = 0.25
    rot_step: float = 30.0
    top_b: int = 8
    rounds: int = 2
    lbfgs_steps: int = 10
    lr: float = 1.0
    alteration: bool = True
    free_vertical: bool = False
    contact_threshold: float = 0.5
    # losses
    lambda_mot: float = 10.0
    lambda_tau: float = 0.1
    lambda_pen: float = 100.0
    lambda_sem: float = 1.0
    lambda_pose: float = 1.0
    # acceptance
    loss_threshold: float = math.inf
    min_non_collision: float = DEFAULT_MIN_NON_COLLISION
    min_contact: float = DEFAULT_MIN_CONTACT
    seed: int = 0

    def __post_init__(self):
        positive = ("cell_size", "padding", "sigma", "velocity_threshold", "grid_step", "lr")
        for name in positive:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        if self.padding < self.cell_size:
            raise ConfigError("padding must be at least cell_size")
        nonneg = ("lambda_g", "lambda_b", "lambda_mot", "lambda_tau", "lambda_pen",
                  "lambda_sem", "lambda_pose")
        for name in nonneg:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {v!r}")
        for name in ("top_b", "lbfgs_steps", "seed", "rounds"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ConfigError(f"{name} must be a non-negative integer, got {v!r}")
        if self.top_b < 1:
            raise ConfigError("top_b must be >= 1")
        for name in ("min_non_collision", "min_contact", "contact_threshold"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0 <= v <= 1):
                raise ConfigError(f"{name} must lie in [0, 1], got {v!r}")
        if not isinstance(self.loss_threshold, (int, float)) or math.isnan(self.loss_threshold):
            raise ConfigError("loss_threshold must be a number")
        for name in ("seat_band", "table_band"):
            band = tuple(getattr(self, name))
            if len(band) != 2 or not 0 <= band[0] < band[1]:
                raise ConfigError(f"{name} must be an increasing pair, got {band!r}")
            object.__setattr__(self, name, tuple(float(x) for x in band))
        for name in ("alteration", "free_vertical"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be true or false")
        try:
            _orientation_count(self.rot_step)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        doc = dict(doc)
        if doc.get("loss_threshold", 0) is None:
            doc["loss_threshold"] = math.inf
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(doc)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        for k in ("seat_band", "table_band"):
            doc[k] = list(doc[k])
        if math.isinf(self.loss_threshold):
            doc["loss_threshold"] = None
        return doc

    def heuristic(self) -> HeuristicParams:
        return HeuristicParams(sigma=self.sigma, velocity_threshold=self.velocity_threshold,
                               seat_band=self.seat_band, table_band=self.table_band)

    def placement(self) -> PlacementConfig:
        loss = LossWeights(self.lambda_mot, self.lambda_tau, self.lambda_pen, self.lambda_sem,
                           self.lambda_pose)
        return PlacementConfig(
            grid_step=self.grid_step, rot_step=self.rot_step, top_b=self.top_b,
            rounds=self.rounds, lbfgs=LbfgsConfig(max_steps=self.lbfgs_steps,
                                                  learning_rate=self.lr),
            loss=loss, alteration=self.alteration, free_vertical=self.free_vertical,
            contact_threshold=self.contact_threshold)
