"""Environment, terrain physics, robot state and scenario configuration.

The world is a 2D lattice of terrain-class ids plus an obstacle mask. The
lattice doubles as the "aerial image": planners and backends read it
symbolically, and :mod:`gronav.render` rasterizes it when a picture is needed.

Coordinates are metric, x to the right (columns) and y up (rows). Cell
``(row, col)`` covers ``[col*res, (col+1)*res] x [row*res, (row+1)*res]``.
A point exactly on a shared cell edge belongs to the lower-index cell.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Literal

import numpy as np

Embodiment = Literal["legged", "wheeled"]
PatchSource = Literal["aerial", "front"]


class ScenarioParseError(ValueError):
    """The scenario file is not well-formed JSON or misses required keys."""


class ScenarioValidationError(ValueError):
    """One or more scenario invariants are violated."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class OutOfBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class TerrainClass:
    label: str
    deformability: float
    slipperiness: float
    roughness: float
    prior_tau: float
    appearance: tuple[int, int, int]

    def problems(self) -> list[str]:
        out = []
        for name in ("deformability", "slipperiness", "roughness", "prior_tau"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                out.append(f"class {self.label!r}: {name}={value} outside [0, 1]")
        if len(self.appearance) != 3 or any(not 0 <= c <= 255 for c in self.appearance):
            out.append(f"class {self.label!r}: appearance must be an RGB triple in 0..255")
        return out


@dataclass(frozen=True, eq=False)
class WorldGrid:
    """Terrain lattice. ``cells`` and ``obstacles`` are (height, width) arrays."""

    width: int
    height: int
    resolution: float
    cells: np.ndarray
    obstacles: np.ndarray
    classes: tuple[TerrainClass, ...]

    def __post_init__(self):
        self.cells.setflags(write=False)
        self.obstacles.setflags(write=False)

    @property
    def size_m(self) -> tuple[float, float]:
        return self.width * self.resolution, self.height * self.resolution

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.classes]

    def class_by_label(self, label: str) -> TerrainClass:
        for c in self.classes:
            if c.label == label:
                return c
        raise KeyError(label)

    def in_bounds(self, x: float, y: float) -> bool:
        w, h = self.size_m
        return 0.0 <= x <= w and 0.0 <= y <= h

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        if not self.in_bounds(x, y):
            raise OutOfBoundsError(f"position ({x}, {y}) is outside the grid")
        return _axis_index(y, self.resolution), _axis_index(x, self.resolution)

    def cell_indices(self, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized ``cell_of``; returns (rows, cols, inside) with rows/cols clipped."""
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        w, h = self.size_m
        inside = (xs >= 0.0) & (xs <= w) & (ys >= 0.0) & (ys <= h)
        cols = np.clip(np.ceil(xs / self.resolution).astype(np.int64) - 1, 0, self.width - 1)
        rows = np.clip(np.ceil(ys / self.resolution).astype(np.int64) - 1, 0, self.height - 1)
        return rows, cols, inside

    def is_obstacle(self, x: float, y: float) -> bool:
        r, c = self.cell_of(x, y)
        return bool(self.obstacles[r, c])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, WorldGrid):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.resolution == other.resolution
            and self.classes == other.classes
            and np.array_equal(self.cells, other.cells)
            and np.array_equal(self.obstacles, other.obstacles)
        )


def _axis_index(v: float, res: float) -> int:
    # ceil(v/res) - 1 puts a point on a shared edge into the lower cell
    return max(int(math.ceil(v / res)) - 1, 0)


@dataclass
class RobotState:
    x: float
    y: float
    theta: float
    v: float = 0.0
    omega: float = 0.0
    embodiment: Embodiment = "legged"
    footprint_radius: float = 0.35

    @property
    def position(self) -> tuple[float, float]:
        return self.x, self.y


def wrap_angle(a: float) -> float:
    """Normalize to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


@dataclass(frozen=True)
class KinematicLimits:
    v_max: float = 1.0
    omega_max: float = 1.0
    a_max: float = 1.0
    alpha_max: float = 2.0
    dt: float = 0.1

    def problems(self) -> list[str]:
        return [f"limits: {f.name} must be > 0" for f in fields(self) if not getattr(self, f.name) > 0]


@dataclass(frozen=True)
class PlannerWeights:
    rho_head: float = 1.0
    rho_dist: float = 1.0
    rho_vel: float = 0.3
    rho_frontier: float = 1.5
    horizon: float = 2.0
    v_samples: int = 11
    omega_samples: int = 21
    d_safe: float = 2.0

    def problems(self) -> list[str]:
        out = []
        for name in ("rho_head", "rho_dist", "rho_vel", "rho_frontier"):
            if getattr(self, name) < 0:
                out.append(f"weights: {name} must be >= 0")
        if self.horizon <= 0:
            out.append("weights: horizon must be > 0")
        if self.v_samples < 3 or self.omega_samples < 3:
            out.append("weights: sample counts must be >= 3")
        if self.d_safe <= 0:
            out.append("weights: d_safe must be > 0")
        return out


@dataclass(frozen=True)
class FrontierParams:
    lookahead: float = 3.0
    half_angle: float = math.pi / 6
    patch_size: float = 5.0
    classify_every: int = 5
    tau_floor: float = 0.05


@dataclass(frozen=True)
class GlobalParams:
    spacing: float = 5.0
    replan_threshold: float = 0.2
    waypoint_radius: float = 2.0
    retries: int = 2
    deadline_s: float = 10.0


@dataclass(frozen=True)
class NavigationObjective:
    kind: Literal["min_length", "avoid_hazard"] = "avoid_hazard"
    hazard_weight: float = 4.0

    @property
    def effective_weight(self) -> float:
        return self.hazard_weight if self.kind == "avoid_hazard" else 0.0

    def describe(self) -> str:
        if self.kind == "min_length":
            return "Reach the goal along the shortest trajectory."
        return (
            "Reach the goal while avoiding hazardous (deformable or slippery) terrain; "
            f"hazard weight {self.hazard_weight:g}."
        )


@dataclass(frozen=True)
class PlannerConfig:
    limits: KinematicLimits = field(default_factory=KinematicLimits)
    weights: PlannerWeights = field(default_factory=PlannerWeights)
    frontier: FrontierParams = field(default_factory=FrontierParams)
    global_: GlobalParams = field(default_factory=GlobalParams)


@dataclass(frozen=True)
class SinkageCalibration:
    s_min: float
    s_max: float
    gamma: float = 1.0

    def problems(self) -> list[str]:
        out = []
        if not self.s_max > self.s_min:
            out.append("sinkage calibration: s_max must exceed s_min")
        if not self.gamma > 0:
            out.append("sinkage calibration: gamma must be > 0")
        return out


@dataclass(frozen=True)
class SlipCalibration:
    beta_d: float = 10.0
    beta_theta: float = 5.0

    def problems(self) -> list[str]:
        if self.beta_d < 0 or self.beta_theta < 0:
            return ["slip calibration: weights must be >= 0"]
        if self.beta_d == 0 and self.beta_theta == 0:
            return ["slip calibration: weights must not both be zero"]
        return []


@dataclass(frozen=True)
class SimulatorParams:
    dt: float = 0.1
    n_joints: int = 12
    f0: float = 100.0
    kappa: float = 0.5
    s_force: float = 10.0
    s_lidar: float = 0.002
    s_imu: float = 2.0
    slip_u_range: tuple[float, float] = (0.7, 1.0)
    legged_slip_factor: float = 0.5
    noise: bool = True
    goal_radius: float = 1.0
    footprint_radius: float = 0.35
    stuck_window_s: float = 3.0
    slip_stuck_ratio: float = 0.8
    sinkage_stuck_tau: float = 0.9

    def problems(self) -> list[str]:
        out = []
        if self.dt <= 0:
            out.append("simulator: dt must be > 0")
        if self.n_joints < 1:
            out.append("simulator: n_joints must be >= 1")
        if self.f0 <= 0:
            out.append("simulator: f0 must be > 0")
        if self.kappa < 0:
            out.append("simulator: kappa must be >= 0")
        lo, hi = self.slip_u_range
        if not 0 <= lo <= hi <= 1:
            out.append("simulator: slip_u_range must satisfy 0 <= lo <= hi <= 1")
        return out


@dataclass(frozen=True)
class CalibrationConfig:
    sinkage: SinkageCalibration
    slip: SlipCalibration = field(default_factory=SlipCalibration)

    @classmethod
    def from_force_law(cls, sim: SimulatorParams, slip: SlipCalibration | None = None) -> "CalibrationConfig":
        """Sinkage references taken from the simulator's noise-free force law at delta=0 and delta=1."""
        n, f0, k = sim.n_joints, sim.f0, sim.kappa
        return cls(
            sinkage=SinkageCalibration(s_min=n * f0**2, s_max=n * (f0 * (1 + k)) ** 2, gamma=1.0),
            slip=slip or SlipCalibration(),
        )


@dataclass(frozen=True)
class ReasoningParams:
    pool_capacity: int = 8
    capture_period: float = 1.0
    capture_distance: float = 3.0
    patch_size: float = 5.0
    window_s: float = 1.0
    min_purity: float = 1.0
    p_err: float = 0.0
    remote_min_interval: float = 2.0
    patch_expiry_s: float = 15.0


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str
    grid: WorldGrid
    start: tuple[float, float]
    goal: tuple[float, float]
    embodiment: Embodiment
    weather: str
    objective: NavigationObjective
    planner: PlannerConfig
    calibration: CalibrationConfig
    simulator: SimulatorParams
    reasoning: ReasoningParams
    timeout_s: float
    start_heading: float = 0.0

    @property
    def classes(self) -> tuple[TerrainClass, ...]:
        return self.grid.classes

    @property
    def straight_line(self) -> float:
        return math.dist(self.start, self.goal)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScenarioConfig):
            return NotImplemented
        return scenario_to_dict(self) == scenario_to_dict(other)


# -- lookups -----------------------------------------------------------------


def terrain_at(grid: WorldGrid, position: tuple[float, float]) -> TerrainClass:
    r, c = grid.cell_of(*position)
    return grid.classes[int(grid.cells[r, c])]


@dataclass(frozen=True)
class PatchDescriptor:
    center: tuple[float, float]
    size: float
    class_histogram: dict[str, float]
    mean_appearance: tuple[float, float, float]
    source: PatchSource

    @property
    def majority_label(self) -> str:
        # max fraction; ties keep the first-declared class (histogram is in class order)
        return max(self.class_histogram.items(), key=lambda kv: kv[1])[0]

    @property
    def purity(self) -> float:
        return max(self.class_histogram.values())

    def contains(self, x: float, y: float) -> bool:
        h = self.size / 2.0
        return abs(x - self.center[0]) <= h and abs(y - self.center[1]) <= h


def _center_range(lo: float, hi: float, res: float, n: int) -> tuple[int, int]:
    """Indices i in [0, n) with cell center (i + 0.5) * res inside [lo, hi]."""
    first = max(int(math.ceil(lo / res - 0.5)), 0)
    last = min(int(math.floor(hi / res - 0.5)), n - 1)
    return first, last


def patch_descriptor(
    grid: WorldGrid,
    center: tuple[float, float],
    size: float = 5.0,
    source: PatchSource = "aerial",
) -> PatchDescriptor:
    if size <= 0:
        raise ValueError("patch size must be > 0")
    cx, cy = center
    h = size / 2.0
    c0, c1 = _center_range(cx - h, cx + h, grid.resolution, grid.width)
    r0, r1 = _center_range(cy - h, cy + h, grid.resolution, grid.height)
    if c0 > c1 or r0 > r1:
        raise OutOfBoundsError(f"patch at {center} (size {size}) does not cover any grid cell")
    block = grid.cells[r0 : r1 + 1, c0 : c1 + 1]
    counts = np.bincount(block.ravel(), minlength=len(grid.classes))
    total = counts.sum()
    hist = {grid.classes[i].label: counts[i] / total for i in range(len(grid.classes)) if counts[i]}
    colors = np.array([c.appearance for c in grid.classes], dtype=float)
    mean = (counts[:, None] * colors).sum(axis=0) / total
    return PatchDescriptor(
        center=(float(cx), float(cy)),
        size=float(size),
        class_histogram=hist,
        mean_appearance=(float(mean[0]), float(mean[1]), float(mean[2])),
        source=source,
    )


# -- scenario I/O ------------------------------------------------------------


def _tuple2(v: Any, what: str) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ScenarioParseError(f"{what} must be a two-element [x, y] list")
    return float(v[0]), float(v[1])


def _build(cls, raw: dict | None, what: str):
    raw = dict(raw or {})
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ScenarioParseError(f"{what}: unknown keys {sorted(unknown)}")
    for f in fields(cls):
        if f.name in raw and isinstance(raw[f.name], list):
            raw[f.name] = tuple(raw[f.name])
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ScenarioParseError(f"{what}: {exc}") from exc


def scenario_from_dict(data: dict) -> ScenarioConfig:
    """Build and validate a scenario from its decoded JSON form."""
    required = ("grid", "classes", "start", "goal", "embodiment", "weather", "objective", "timeout_s")
    missing = [k for k in required if k not in data]
    if missing:
        raise ScenarioParseError(f"missing keys: {missing}")

    try:
        classes = tuple(
            TerrainClass(
                label=str(c["label"]),
                deformability=float(c["deformability"]),
                slipperiness=float(c["slipperiness"]),
                roughness=float(c["roughness"]),
                prior_tau=float(c["prior_tau"]),
                appearance=tuple(int(v) for v in c["appearance"]),
            )
            for c in data["classes"]
        )
        g = data["grid"]
        width, height, res = int(g["width"]), int(g["height"]), float(g["resolution"])
        cells_flat = np.asarray(g["cells"], dtype=np.int64)
        obst_flat = np.asarray(g["obstacles"], dtype=bool)
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioParseError(f"malformed grid or classes: {exc}") from exc
    if cells_flat.size != width * height or obst_flat.size != width * height:
        raise ScenarioParseError("grid cells/obstacles length must equal width*height")

    grid = WorldGrid(
        width=width,
        height=height,
        resolution=res,
        cells=cells_flat.reshape(height, width),
        obstacles=obst_flat.reshape(height, width),
        classes=classes,
    )
    planner_raw = dict(data.get("planner") or {})
    planner = PlannerConfig(
        limits=_build(KinematicLimits, planner_raw.pop("limits", None), "planner.limits"),
        weights=_build(PlannerWeights, planner_raw.pop("weights", None), "planner.weights"),
        frontier=_build(FrontierParams, planner_raw.pop("frontier", None), "planner.frontier"),
        global_=_build(GlobalParams, planner_raw.pop("global", None), "planner.global"),
    )
    if planner_raw:
        raise ScenarioParseError(f"planner: unknown keys {sorted(planner_raw)}")
    sim = _build(SimulatorParams, data.get("simulator"), "simulator")
    cal_raw = data.get("calibration") or {}
    slip = _build(SlipCalibration, cal_raw.get("slip"), "calibration.slip")
    if cal_raw.get("sinkage") is None:
        calibration = CalibrationConfig.from_force_law(sim, slip)
    else:
        calibration = CalibrationConfig(
            sinkage=_build(SinkageCalibration, cal_raw["sinkage"], "calibration.sinkage"), slip=slip
        )
    scenario = ScenarioConfig(
        name=str(data.get("name", "scenario")),
        grid=grid,
        start=_tuple2(data["start"], "start"),
        goal=_tuple2(data["goal"], "goal"),
        embodiment=data["embodiment"],
        weather=str(data["weather"]),
        objective=_build(NavigationObjective, data["objective"], "objective"),
        planner=planner,
        calibration=calibration,
        simulator=sim,
        reasoning=_build(ReasoningParams, data.get("reasoning"), "reasoning"),
        timeout_s=float(data["timeout_s"]),
        start_heading=float(data.get("start_heading", 0.0)),
    )
    validate_scenario(scenario)
    return scenario


def validate_scenario(sc: ScenarioConfig) -> None:
    v: list[str] = []
    g = sc.grid
    if g.resolution <= 0:
        v.append("grid: resolution must be > 0")
    if g.width < 1 or g.height < 1:
        v.append("grid: width and height must be >= 1")
    labels = [c.label for c in g.classes]
    if not labels:
        v.append("classes: at least one terrain class required")
    if len(set(labels)) != len(labels):
        v.append("classes: labels must be unique")
    for c in g.classes:
        v.extend(c.problems())
    if g.cells.size and (g.cells.min() < 0 or g.cells.max() >= len(labels)):
        v.append("grid: cell ids must refer to declared classes")
    if sc.embodiment not in ("legged", "wheeled"):
        v.append(f"embodiment must be 'legged' or 'wheeled', got {sc.embodiment!r}")
    if sc.objective.kind not in ("min_length", "avoid_hazard"):
        v.append(f"objective: unknown kind {sc.objective.kind!r}")
    if sc.objective.hazard_weight < 0:
        v.append("objective: hazard_weight must be >= 0")
    for name, p in (("start", sc.start), ("goal", sc.goal)):
        if g.resolution > 0 and not g.in_bounds(*p):
            v.append(f"{name} {p} is outside the grid")
        elif g.resolution > 0 and g.is_obstacle(*p):
            v.append(f"{name} {p} lies on an obstacle cell")
    if math.dist(sc.start, sc.goal) <= 0:
        v.append("start and goal must be distinct")
    v.extend(sc.planner.limits.problems())
    v.extend(sc.planner.weights.problems())
    v.extend(sc.calibration.sinkage.problems())
    v.extend(sc.calibration.slip.problems())
    v.extend(sc.simulator.problems())
    if sc.planner.global_.spacing < 2 * g.resolution:
        v.append("planner.global: spacing must be >= 2 * resolution")
    if sc.timeout_s <= 0:
        v.append("timeout_s must be > 0")
    if v:
        raise ScenarioValidationError(v)


def _plain(obj: Any) -> Any:
    if isinstance(obj, tuple):
        return [_plain(o) for o in obj]
    if isinstance(obj, dict):
        return {k: _plain(val) for k, val in obj.items()}
    return obj


def scenario_to_dict(sc: ScenarioConfig) -> dict:
    g = sc.grid
    return {
        "name": sc.name,
        "grid": {
            "width": g.width,
            "height": g.height,
            "resolution": g.resolution,
            "cells": g.cells.ravel().tolist(),
            "obstacles": g.obstacles.ravel().tolist(),
        },
        "classes": [_plain(asdict(c)) for c in g.classes],
        "start": list(sc.start),
        "goal": list(sc.goal),
        "start_heading": sc.start_heading,
        "embodiment": sc.embodiment,
        "weather": sc.weather,
        "objective": asdict(sc.objective),
        "planner": {
            "limits": asdict(sc.planner.limits),
            "weights": asdict(sc.planner.weights),
            "frontier": asdict(sc.planner.frontier),
            "global": asdict(sc.planner.global_),
        },
        "calibration": {
            "sinkage": asdict(sc.calibration.sinkage),
            "slip": asdict(sc.calibration.slip),
        },
        "simulator": _plain(asdict(sc.simulator)),
        "reasoning": asdict(sc.reasoning),
        "timeout_s": sc.timeout_s,
    }


def dumps_scenario(sc: ScenarioConfig) -> str:
    return json.dumps(scenario_to_dict(sc), separators=(",", ":")) + "\n"


def save_scenario(sc: ScenarioConfig, path: str | Path) -> None:
    Path(path).write_text(dumps_scenario(sc), encoding="utf-8")


def load_scenario(path: str | Path) -> ScenarioConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ScenarioParseError(f"{path}: top level must be an object")
    return scenario_from_dict(data)
