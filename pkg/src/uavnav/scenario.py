"""Scenario configuration: schema, validation and YAML loading.

A scenario file is one YAML document with a handful of scalar keys
(start, setpoint, controller, seed, ...) plus one optional section per
config type (model, weights, horizon, solver, input_bounds, rate_bounds,
apf, lidar) and the scene geometry.  Sections only override the fields
they mention; unknown keys anywhere are rejected outright so typos fail
loudly instead of silently running defaults.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from numpy.typing import NDArray

from .apf import ApfConfig
from .constraints import CircleObstacle, RateBounds
from .geom import LineSegment, point_segment_distance
from .model import ModelParams
from .perception import LidarSpec, Scene
from .problem import CostWeights, HorizonConfig
from .solver import BoxBounds, SolverConfig

CONTROLLERS = ("nmpc", "apf_baseline", "apf_enhanced")


@dataclass
class ScenarioSpec:
    """Everything one closed-loop run needs."""

    name: str
    scene: Scene
    start: NDArray[np.float64]
    setpoint: NDArray[np.float64]
    controller: str = "nmpc"
    duration_max: float = 30.0
    arrival_radius: float = 0.2
    arrival_dwell: float = 1.0
    safety_margin: float = 0.4
    rng_seed: int = 0
    model: ModelParams = field(default_factory=ModelParams)
    weights: CostWeights = field(default_factory=CostWeights)
    horizon: HorizonConfig = field(default_factory=HorizonConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    input_bounds: BoxBounds = field(default_factory=BoxBounds)
    rate_bounds: RateBounds = field(default_factory=RateBounds)
    apf: ApfConfig = field(default_factory=ApfConfig)
    lidar: LidarSpec = field(default_factory=LidarSpec)

    def __post_init__(self) -> None:
        self.start = np.asarray(self.start, dtype=float).reshape(3)
        self.setpoint = np.asarray(self.setpoint, dtype=float).reshape(3)
        if self.controller not in CONTROLLERS:
            raise ValueError(
                f"controller must be one of {CONTROLLERS}, got {self.controller!r}"
            )
        if self.duration_max <= 0 or self.arrival_radius <= 0 or self.arrival_dwell < 0:
            raise ValueError("durations and the arrival radius must be positive")
        if self.safety_margin < 0:
            raise ValueError("safety margin must be nonnegative")
        if self.model.ts != self.horizon.ts:
            raise ValueError("model and horizon sampling times must match")
        for label, p in (("start", self.start), ("setpoint", self.setpoint)):
            self._check_position(label, p)

    def _check_position(self, label: str, p: NDArray[np.float64]) -> None:
        """Start and goal must be inside the arena, clear of keep-outs."""
        if self.scene.bounds is not None:
            xmin, ymin, xmax, ymax = self.scene.bounds
            if not (xmin <= p[0] <= xmax and ymin <= p[1] <= ymax):
                raise ValueError(f"{label} {p[:2]} lies outside the arena")
        for c in self.scene.circles:
            if np.linalg.norm(p[:2] - c.center) <= c.radius + self.safety_margin:
                raise ValueError(f"{label} is inside an inflated obstacle")
        for s in self.scene.segments:
            if point_segment_distance(p[:2], s) <= self.safety_margin:
                raise ValueError(f"{label} is inside an inflated wall margin")


def _strict_kwargs(cls, mapping: dict, where: str) -> dict:
    """Mapping checked against the dataclass fields, lists made tuples."""
    if not isinstance(mapping, dict):
        raise ValueError(f"section {where!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ValueError(f"unknown keys {unknown} in {where!r}")
    return {
        k: tuple(v) if isinstance(v, list) else v for k, v in mapping.items()
    }


def _build_scene(mapping: dict) -> Scene:
    if not isinstance(mapping, dict):
        raise ValueError("scene must be a mapping")
    unknown = sorted(set(mapping) - {"bounds", "circles", "walls"})
    if unknown:
        raise ValueError(f"unknown keys {unknown} in 'scene'")
    circles = []
    for i, entry in enumerate(mapping.get("circles") or []):
        kwargs = _strict_kwargs(CircleObstacle, entry, f"scene.circles[{i}]")
        circles.append(CircleObstacle(**kwargs))
    walls = []
    for i, entry in enumerate(mapping.get("walls") or []):
        kwargs = _strict_kwargs(LineSegment, entry, f"scene.walls[{i}]")
        walls.append(LineSegment(**kwargs))
    bounds = mapping.get("bounds")
    return Scene(
        circles=tuple(circles),
        segments=tuple(walls),
        bounds=tuple(bounds) if bounds is not None else None,
    )


_SECTIONS = {
    "model": ModelParams,
    "weights": CostWeights,
    "horizon": HorizonConfig,
    "solver": SolverConfig,
    "input_bounds": BoxBounds,
    "rate_bounds": RateBounds,
    "apf": ApfConfig,
    "lidar": LidarSpec,
}

_SCALARS = {
    "name",
    "controller",
    "rng_seed",
    "duration_max",
    "arrival_radius",
    "arrival_dwell",
    "safety_margin",
    "start",
    "setpoint",
}


def scenario_from_mapping(doc: dict, name_hint: str = "scenario") -> ScenarioSpec:
    """Build and validate a spec from a parsed YAML document."""
    if not isinstance(doc, dict):
        raise ValueError("scenario document must be a mapping")
    unknown = sorted(set(doc) - _SCALARS - set(_SECTIONS) - {"scene"})
    if unknown:
        raise ValueError(f"unknown top-level keys {unknown}")
    if "start" not in doc or "setpoint" not in doc:
        raise ValueError("scenario needs 'start' and 'setpoint'")

    kwargs = {k: doc[k] for k in _SCALARS if k in doc}
    kwargs.setdefault("name", name_hint)
    kwargs["scene"] = _build_scene(doc.get("scene") or {})
    for key, cls in _SECTIONS.items():
        section = doc.get(key) or {}
        kwargs[key] = cls(**_strict_kwargs(cls, section, key))
    return ScenarioSpec(**kwargs)


def load_scenario(path: str | Path) -> ScenarioSpec:
    """Parse and validate one scenario file."""
    path = Path(path)
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return scenario_from_mapping(doc, name_hint=path.stem)


def stock_scenario_names() -> list[str]:
    """Names of the scenario files shipped with the package."""
    root = resources.files(__package__) / "scenarios"
    return sorted(p.name.removesuffix(".yaml") for p in root.iterdir() if p.name.endswith(".yaml"))


def load_stock_scenario(name: str) -> ScenarioSpec:
    """Load a shipped scenario by bare name (cylinder, walls, doorway)."""
    ref = resources.files(__package__) / "scenarios" / f"{name}.yaml"
    if not ref.is_file():
        raise ValueError(
            f"no stock scenario {name!r}; available: {stock_scenario_names()}"
        )
    with resources.as_file(ref) as path:
        return load_scenario(path)
