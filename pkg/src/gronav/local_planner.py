"""Dynamic-window local planner with a terrain frontier cost.

All terms are costs to minimize::

    G(v, w) = rho_head*head + rho_dist*dist + rho_vel*vel + rho_frontier*phi

head is the endpoint bearing error to the goal over pi, dist is
``clamp(1 - clearance/d_safe, 0, 1)`` (colliding rollouts are rejected),
vel is ``(v_max - v)/v_max`` and phi is the smallest ``distance(endpoint, p) *
tau(p)`` over the left/centre/right frontier points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.ndimage import distance_transform_edt

from .world import (
    KinematicLimits,
    PatchDescriptor,
    PlannerWeights,
    RobotState,
    WorldGrid,
    patch_descriptor,
)

if TYPE_CHECKING:
    from .backends import VlmBackend
    from .reasoning import TraversabilityTable

FRONTIER_NAMES = ("center", "left", "right")


def admissible_velocities(
    limits: KinematicLimits,
    current: tuple[float, float],
    v_samples: int = 11,
    omega_samples: int = 21,
) -> tuple[np.ndarray, np.ndarray]:
    """Flattened (v, w) sample grid over the velocity box intersected with the one-tick window."""
    v0, w0 = current
    v_lo = max(0.0, v0 - limits.a_max * limits.dt)
    v_hi = min(limits.v_max, v0 + limits.a_max * limits.dt)
    w_lo = max(-limits.omega_max, w0 - limits.alpha_max * limits.dt)
    w_hi = min(limits.omega_max, w0 + limits.alpha_max * limits.dt)
    vs = _samples(v_lo, v_hi, v_samples)
    ws = _samples(w_lo, w_hi, omega_samples)
    vv, ww = np.meshgrid(vs, ws, indexing="ij")
    return vv.ravel(), ww.ravel()


def _samples(lo: float, hi: float, n: int) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    # built outward from the midpoint so the set is exactly symmetric about it
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    m = (n - 1) / 2.0
    k = np.arange(n) - m
    out = mid + half * (k / m)
    out[0], out[-1] = lo, hi
    return out


@dataclass(frozen=True)
class Rollout:
    v: float
    omega: float
    xs: np.ndarray
    ys: np.ndarray
    thetas: np.ndarray

    @property
    def endpoint(self) -> tuple[float, float]:
        return float(self.xs[-1]), float(self.ys[-1])


def _arc_poses(x0, y0, th0, v, w, times):
    """Closed-form unicycle poses; v, w broadcast against times."""
    a = w * times
    d = v * times
    sinc = np.sinc(a / np.pi)
    cosc = np.sin(a / 2.0) * np.sinc(a / (2.0 * np.pi))
    c, s = math.cos(th0), math.sin(th0)
    xs = x0 + d * (c * sinc - s * cosc)
    ys = y0 + d * (s * sinc + c * cosc)
    return xs, ys, th0 + a


def _times(horizon: float, dt: float) -> np.ndarray:
    n = max(int(round(horizon / dt)), 1)
    return np.arange(n + 1) * (horizon / n)


def rollout(state: RobotState, v: float, omega: float, horizon: float, dt: float) -> Rollout:
    """Ideal (no-slip) trajectory of a constant command, poses at t = 0, dt, ..., horizon."""
    t = _times(horizon, dt)
    xs, ys, ths = _arc_poses(state.x, state.y, state.theta, v, omega, t)
    return Rollout(v, omega, xs, ys, ths)


def rollouts(state: RobotState, vs: np.ndarray, ws: np.ndarray, horizon: float, dt: float):
    t = _times(horizon, dt)[None, :]
    return _arc_poses(state.x, state.y, state.theta, vs[:, None], ws[:, None], t)


class ClearanceMap:
    """Distance to the nearest obstacle cell; the map border counts as an obstacle.

    Values are conservative: cell-centre distances less one cell diagonal.
    """

    def __init__(self, grid: WorldGrid):
        self.grid = grid
        padded = np.pad(grid.obstacles, 1, constant_values=True)
        edt = distance_transform_edt(~padded)[1:-1, 1:-1]
        self.field = np.maximum(edt * grid.resolution - grid.resolution * math.sqrt(2.0), 0.0)

    def at(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        rows, cols, inside = self.grid.cell_indices(xs, ys)
        out = self.field[rows, cols]
        return np.where(inside, out, -1.0)


def _clearance_map(grid: WorldGrid, cmap: ClearanceMap | None) -> ClearanceMap:
    return cmap if cmap is not None and cmap.grid is grid else ClearanceMap(grid)


def base_objective_terms(
    xs: np.ndarray,
    ys: np.ndarray,
    ths: np.ndarray,
    vs: np.ndarray,
    goal: tuple[float, float],
    cmap: ClearanceMap,
    limits: KinematicLimits,
    weights: PlannerWeights,
    footprint_radius: float,
) -> np.ndarray:
    """J for each rollout row; inf where a pose collides or leaves the grid."""
    ex, ey, eth = xs[:, -1], ys[:, -1], ths[:, -1]
    err = np.arctan2(goal[1] - ey, goal[0] - ex) - eth
    err = (err + np.pi) % (2.0 * np.pi) - np.pi
    head = np.abs(err) / np.pi
    clearance = cmap.at(xs, ys).min(axis=1)
    dist = np.clip(1.0 - clearance / weights.d_safe, 0.0, 1.0)
    vel = (limits.v_max - vs) / limits.v_max
    j = weights.rho_head * head + weights.rho_dist * dist + weights.rho_vel * vel
    return np.where(clearance < footprint_radius, np.inf, j)


def base_objective(
    ro: Rollout,
    goal: tuple[float, float],
    grid: WorldGrid,
    limits: KinematicLimits,
    weights: PlannerWeights,
    footprint_radius: float = 0.35,
    cmap: ClearanceMap | None = None,
) -> float:
    cmap = _clearance_map(grid, cmap)
    j = base_objective_terms(
        ro.xs[None, :], ro.ys[None, :], ro.thetas[None, :], np.array([ro.v]),
        goal, cmap, limits, weights, footprint_radius,
    )
    return float(j[0])


# -- frontiers -----------------------------------------------------------------


def extract_frontiers(
    state: RobotState,
    grid: WorldGrid,
    lookahead: float = 3.0,
    half_angle: float = math.pi / 6,
) -> list[tuple[str, tuple[float, float]]]:
    """Centre, left and right look-ahead points that are on the map and free."""
    out = []
    for name, off in zip(FRONTIER_NAMES, (0.0, half_angle, -half_angle)):
        a = state.theta + off
        p = (state.x + lookahead * math.cos(a), state.y + lookahead * math.sin(a))
        if grid.in_bounds(*p) and not grid.is_obstacle(*p):
            out.append((name, p))
    return out


@dataclass(frozen=True)
class FrontierSet:
    names: tuple[str, ...]
    points: tuple[tuple[float, float], ...]
    labels: tuple[str, ...]
    taus: tuple[float, ...]
    patches: tuple[PatchDescriptor, ...] = ()

    def __len__(self) -> int:
        return len(self.points)


def classify_frontiers(
    backend: "VlmBackend",
    candidates: Sequence[tuple[str, tuple[float, float]]],
    grid: WorldGrid,
    table: "TraversabilityTable",
    patch_size: float = 5.0,
    tau_floor: float = 0.05,
) -> FrontierSet:
    if not candidates:
        raise ValueError("need at least one frontier candidate")
    names, points, labels, taus, patches = [], [], [], [], []
    for name, p in candidates:
        patch = patch_descriptor(grid, p, patch_size, "front")
        label = backend.classify(patch) or patch.majority_label
        names.append(name)
        points.append(p)
        labels.append(label)
        taus.append(max(table[label], tau_floor))
        patches.append(patch)
    return FrontierSet(tuple(names), tuple(points), tuple(labels), tuple(taus), tuple(patches))


def with_taus(frontiers: FrontierSet, table: "TraversabilityTable", tau_floor: float = 0.05) -> FrontierSet:
    """Same points and labels, traversability re-read from ``table``."""
    taus = tuple(max(table[lab], tau_floor) for lab in frontiers.labels)
    return FrontierSet(frontiers.names, frontiers.points, frontiers.labels, taus, frontiers.patches)


_TIE_ORDER = {name: i for i, name in enumerate(FRONTIER_NAMES)}


def frontier_cost(ro: Rollout, frontiers: FrontierSet) -> float:
    return frontier_cost_detail(ro.endpoint, frontiers)[0]


def frontier_cost_detail(endpoint: tuple[float, float], frontiers: FrontierSet) -> tuple[float, str]:
    """(phi, name of the minimizing frontier); equal products prefer center, left, right."""
    if len(frontiers) == 0:
        raise ValueError("need at least one frontier")
    best, best_name = math.inf, ""
    ex, ey = endpoint
    order = sorted(range(len(frontiers)), key=lambda i: _TIE_ORDER.get(frontiers.names[i], 99))
    for i in order:
        px, py = frontiers.points[i]
        c = math.hypot(ex - px, ey - py) * frontiers.taus[i]
        if c < best:
            best, best_name = c, frontiers.names[i]
    return best, best_name


def frontier_costs(ex: np.ndarray, ey: np.ndarray, frontiers: FrontierSet) -> np.ndarray:
    pts = np.asarray(frontiers.points, dtype=float)
    taus = np.asarray(frontiers.taus, dtype=float)
    d = np.hypot(ex[:, None] - pts[None, :, 0], ey[:, None] - pts[None, :, 1])
    return (d * taus[None, :]).min(axis=1)


# -- selection -----------------------------------------------------------------


@dataclass(frozen=True)
class Decision:
    v: float
    omega: float
    cost: float
    blocked: bool = False

    @property
    def cmd(self) -> tuple[float, float]:
        return self.v, self.omega


def stop_command(state: RobotState, limits: KinematicLimits) -> tuple[float, float]:
    """Brake as hard as the acceleration window allows."""
    v = max(0.0, state.v - limits.a_max * limits.dt)
    dw = limits.alpha_max * limits.dt
    w = 0.0 if abs(state.omega) <= dw else state.omega - math.copysign(dw, state.omega)
    return v, w


def select_command(
    state: RobotState,
    goal: tuple[float, float],
    grid: WorldGrid,
    frontiers: FrontierSet | None,
    weights: PlannerWeights,
    limits: KinematicLimits,
    cmap: ClearanceMap | None = None,
) -> Decision:
    """argmin G over the sampled window.

    Ties go to higher v, then smaller |w|, then smaller w. With no usable
    frontiers or ``rho_frontier == 0`` this is plain DWA.
    """
    cmap = _clearance_map(grid, cmap)
    vs, ws = admissible_velocities(limits, (state.v, state.omega), weights.v_samples, weights.omega_samples)
    xs, ys, ths = rollouts(state, vs, ws, weights.horizon, limits.dt)
    g = base_objective_terms(xs, ys, ths, vs, goal, cmap, limits, weights, state.footprint_radius)
    if frontiers is not None and len(frontiers) and weights.rho_frontier != 0.0:
        g = g + weights.rho_frontier * frontier_costs(xs[:, -1], ys[:, -1], frontiers)
    if not np.isfinite(g).any():
        v, w = stop_command(state, limits)
        return Decision(v, w, math.inf, blocked=True)
    order = np.lexsort((ws, np.abs(ws), -vs, g))
    i = int(order[0])
    return Decision(float(vs[i]), float(ws[i]), float(g[i]))


def select_command_dwa(
    state: RobotState,
    goal: tuple[float, float],
    grid: WorldGrid,
    weights: PlannerWeights,
    limits: KinematicLimits,
    cmap: ClearanceMap | None = None,
) -> Decision:
    """Plain DWA on the same sample grid, minimizing J only."""
    cmap = _clearance_map(grid, cmap)
    vs, ws = admissible_velocities(limits, (state.v, state.omega), weights.v_samples, weights.omega_samples)
    xs, ys, ths = rollouts(state, vs, ws, weights.horizon, limits.dt)
    j = base_objective_terms(xs, ys, ths, vs, goal, cmap, limits, weights, state.footprint_radius)
    best = None
    for v, w, c in zip(vs.tolist(), ws.tolist(), j.tolist()):
        if math.isinf(c):
            continue
        key = (c, -v, abs(w), w)
        if best is None or key < best:
            best = key
    if best is None:
        v, w = stop_command(state, limits)
        return Decision(v, w, math.inf, blocked=True)
    return Decision(-best[1], best[3], best[0])
