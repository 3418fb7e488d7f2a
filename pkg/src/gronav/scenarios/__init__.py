"""Bundled desk-scale scenarios and the builders that generate them.

Each scenario is a 40 m x 30 m field at 0.5 m resolution with the start on
the west side, the goal on the east side, and a hazard block straddling the
straight line between them. Regenerate the JSON files with
``python -m gronav.scenarios``.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from ..world import (
    CalibrationConfig,
    FrontierParams,
    GlobalParams,
    KinematicLimits,
    NavigationObjective,
    PlannerConfig,
    PlannerWeights,
    ReasoningParams,
    ScenarioConfig,
    SimulatorParams,
    SlipCalibration,
    TerrainClass,
    WorldGrid,
    save_scenario,
    validate_scenario,
)

WIDTH_M, HEIGHT_M, RES = 40.0, 30.0, 0.5
START, GOAL = (4.0, 15.0), (36.0, 15.0)

BUNDLED = ("scenario1", "scenario1_after_rain", "scenario2", "scenario3", "scenario4")


def bundled_path(name: str) -> Path:
    if not name.endswith(".json"):
        name += ".json"
    return Path(str(resources.files(__package__).joinpath(name)))


class _Canvas:
    def __init__(self, classes: list[TerrainClass], background: str):
        self.classes = classes
        self.ids = {c.label: i for i, c in enumerate(classes)}
        w, h = int(WIDTH_M / RES), int(HEIGHT_M / RES)
        self.cells = np.full((h, w), self.ids[background], dtype=np.int64)
        self.obstacles = np.zeros((h, w), dtype=bool)

    def _slices(self, x0, y0, x1, y1):
        return slice(int(round(y0 / RES)), int(round(y1 / RES))), slice(int(round(x0 / RES)), int(round(x1 / RES)))

    def rect(self, label: str, x0: float, y0: float, x1: float, y1: float) -> None:
        self.cells[self._slices(x0, y0, x1, y1)] = self.ids[label]

    def block(self, x0: float, y0: float, x1: float, y1: float) -> None:
        self.obstacles[self._slices(x0, y0, x1, y1)] = True

    def grid(self) -> WorldGrid:
        return WorldGrid(
            width=self.cells.shape[1],
            height=self.cells.shape[0],
            resolution=RES,
            cells=self.cells,
            obstacles=self.obstacles,
            classes=tuple(self.classes),
        )


def _scenario(name, canvas, embodiment, weather) -> ScenarioConfig:
    sim = SimulatorParams()
    sc = ScenarioConfig(
        name=name,
        grid=canvas.grid(),
        start=START,
        goal=GOAL,
        embodiment=embodiment,
        weather=weather,
        objective=NavigationObjective("avoid_hazard", 4.0),
        planner=PlannerConfig(KinematicLimits(), PlannerWeights(), FrontierParams(), GlobalParams()),
        calibration=CalibrationConfig.from_force_law(sim, SlipCalibration(beta_d=10.0, beta_theta=5.0)),
        simulator=sim,
        reasoning=ReasoningParams(capture_period=0.5),
        timeout_s=120.0,
        start_heading=0.0,
    )
    validate_scenario(sc)
    return sc


def scenario1(after_rain: bool = False) -> ScenarioConfig:
    """Legged robot: concrete start, dry grass field, deformable muddy grass block."""
    mud_sigma, mud_prior = (0.75, 0.85) if after_rain else (0.6, 0.75)
    classes = [
        TerrainClass("concrete", 0.0, 0.02, 0.05, 0.05, (170, 170, 170)),
        TerrainClass("dry grass", 0.3, 0.2, 0.3, 0.5, (150, 170, 70)),
        TerrainClass("muddy grass", 0.95, mud_sigma, 0.4, mud_prior, (105, 115, 60)),
    ]
    c = _Canvas(classes, "dry grass")
    c.rect("concrete", 0, 0, 8, 30)
    c.rect("muddy grass", 16, 8, 28, 22)
    c.block(31, 3, 33, 5)
    return _scenario(
        "scenario1_after_rain" if after_rain else "scenario1",
        c,
        "legged",
        "overcast, after rain" if after_rain else "dry, sunny",
    )


def scenario2() -> ScenarioConfig:
    """Legged robot: concrete start, dry grass field, tall block of loose sand."""
    classes = [
        TerrainClass("dry grass", 0.2, 0.15, 0.25, 0.45, (150, 170, 70)),
        TerrainClass("sand", 1.0, 0.3, 0.35, 0.6, (220, 200, 140)),
        TerrainClass("concrete", 0.0, 0.02, 0.05, 0.05, (170, 170, 170)),
    ]
    c = _Canvas(classes, "dry grass")
    c.rect("concrete", 0, 0, 8, 30)
    c.rect("sand", 16, 6, 27, 24)
    c.block(11, 25, 13, 27)
    return _scenario("scenario2", c, "legged", "dry, windy")


def scenario3() -> ScenarioConfig:
    """Wheeled robot: concrete start, dry grass field, slippery muddy grass block."""
    classes = [
        TerrainClass("concrete", 0.0, 0.02, 0.05, 0.05, (170, 170, 170)),
        TerrainClass("dry grass", 0.2, 0.25, 0.3, 0.5, (150, 170, 70)),
        TerrainClass("muddy grass", 0.7, 1.0, 0.4, 0.7, (105, 115, 60)),
    ]
    c = _Canvas(classes, "dry grass")
    c.rect("concrete", 0, 0, 9, 30)
    c.rect("muddy grass", 16, 8, 28, 22)
    c.block(20, 26, 22, 28)
    return _scenario("scenario3", c, "wheeled", "light drizzle")


def scenario4() -> ScenarioConfig:
    """Wheeled robot: cleared concrete, packed snow block, muddy grass to the south."""
    classes = [
        TerrainClass("concrete", 0.0, 0.02, 0.05, 0.3, (170, 170, 170)),
        TerrainClass("snow", 0.3, 1.0, 0.2, 0.45, (235, 235, 245)),
        TerrainClass("muddy grass", 0.7, 0.7, 0.4, 0.6, (105, 115, 60)),
    ]
    c = _Canvas(classes, "concrete")
    c.rect("muddy grass", 0, 0, 40, 6)
    c.rect("snow", 16, 7, 28, 23)
    c.block(33, 26, 35, 28)
    return _scenario("scenario4", c, "wheeled", "after snowfall, cold")


BUILDERS = {
    "scenario1": scenario1,
    "scenario1_after_rain": lambda: scenario1(after_rain=True),
    "scenario2": scenario2,
    "scenario3": scenario3,
    "scenario4": scenario4,
}


def flat_scenario(
    width_m: float = 20.0,
    height_m: float = 10.0,
    embodiment: str = "legged",
    label: str = "concrete",
    resolution: float = 0.5,
) -> ScenarioConfig:
    """Single-class open field for smoke tests; start and goal on the centre line."""
    w, h = int(round(width_m / resolution)), int(round(height_m / resolution))
    grid = WorldGrid(
        width=w,
        height=h,
        resolution=resolution,
        cells=np.zeros((h, w), dtype=np.int64),
        obstacles=np.zeros((h, w), dtype=bool),
        classes=(TerrainClass(label, 0.0, 0.0, 0.05, 0.05, (170, 170, 170)),),
    )
    sim = SimulatorParams()
    sc = ScenarioConfig(
        name="flat",
        grid=grid,
        start=(2.0, height_m / 2),
        goal=(width_m - 2.0, height_m / 2),
        embodiment=embodiment,
        weather="clear",
        objective=NavigationObjective("avoid_hazard", 4.0),
        planner=PlannerConfig(),
        calibration=CalibrationConfig.from_force_law(sim),
        simulator=sim,
        reasoning=ReasoningParams(capture_period=0.5),
        timeout_s=60.0,
    )
    validate_scenario(sc)
    return sc


def write_bundled(directory: Path | None = None) -> list[Path]:
    directory = directory or Path(__file__).parent
    out = []
    for name, build in BUILDERS.items():
        p = directory / f"{name}.json"
        save_scenario(build(), p)
        out.append(p)
    return out

