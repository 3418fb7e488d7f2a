"""Unicycle simulator over the terrain grid with synthetic proprioception.

Slip and sinkage laws are deliberately simple and monotone: the effective
slip of a tick is ``sigma * u`` with ``u ~ U(lo, hi)`` (halved for legged
robots), and joint forces grow linearly with deformability. They exist to
give the proprioceptive indicators a ground truth they can recover.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Iterable, Literal, Sequence

import numpy as np

from .world import (
    KinematicLimits,
    OutOfBoundsError,
    RobotState,
    SimulatorParams,
    TerrainClass,
    WorldGrid,
    terrain_at,
    wrap_angle,
)

Status = Literal["running", "success", "collision", "immobilized", "timeout"]

_EPS = 1e-9


class CommandError(ValueError):
    """A velocity command outside the kinematic box or acceleration window."""


@dataclass(frozen=True)
class ProprioSample:
    t: float
    position: tuple[float, float]
    imu_accel: tuple[float, float, float]
    joint_forces: tuple[float, ...] | None = None
    odom_delta: tuple[float, float] | None = None
    lidar_delta: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "position": list(self.position),
            "imu_accel": list(self.imu_accel),
            "joint_forces": None if self.joint_forces is None else list(self.joint_forces),
            "odom_delta": None if self.odom_delta is None else list(self.odom_delta),
            "lidar_delta": None if self.lidar_delta is None else list(self.lidar_delta),
        }


@dataclass(frozen=True)
class TrialStatus:
    state: Status
    t: float

    @property
    def terminal(self) -> bool:
        return self.state != "running"


def check_command(limits: KinematicLimits, prev: tuple[float, float], cmd: tuple[float, float]) -> None:
    v, w = cmd
    pv, pw = prev
    if not (-_EPS <= v <= limits.v_max + _EPS) or abs(w) > limits.omega_max + _EPS:
        raise CommandError(f"command {cmd} outside the velocity box")
    if abs(v - pv) > limits.a_max * limits.dt + _EPS or abs(w - pw) > limits.alpha_max * limits.dt + _EPS:
        raise CommandError(f"command {cmd} outside the acceleration window of {prev}")


def integrate_arc(x: float, y: float, theta: float, d: float, dtheta: float) -> tuple[float, float, float]:
    """Exact pose update for constant-curvature travel of length d while turning by dtheta."""
    # sin(a)/a and (1 - cos a)/a via np.sinc stay accurate as a -> 0
    sinc = float(np.sinc(dtheta / math.pi))
    cosc = math.sin(dtheta / 2.0) * float(np.sinc(dtheta / (2.0 * math.pi)))
    c, s = math.cos(theta), math.sin(theta)
    return x + d * (c * sinc - s * cosc), y + d * (s * sinc + c * cosc), theta + dtheta


def synthesize_joint_forces(
    cell: TerrainClass,
    rng: np.random.Generator,
    f0: float,
    kappa: float,
    s_force: float,
    n: int = 12,
    noise: bool = True,
) -> tuple[float, ...]:
    base = f0 * (1.0 + kappa * cell.deformability)
    scale = s_force * cell.roughness if noise else 0.0
    forces = np.maximum(base + rng.normal(0.0, scale, size=n), 0.0)
    return tuple(float(f) for f in forces)


def synthesize_odometry(
    true_motion: tuple[float, float],
    cmd: tuple[float, float],
    dt: float,
    rng: np.random.Generator,
    s_lidar: float,
    noise: bool = True,
) -> tuple[tuple[float, float], tuple[float, float]]:
    if dt <= 0:
        raise ValueError("dt must be > 0")
    scale = s_lidar if noise else 0.0
    n = rng.normal(0.0, scale, size=2)
    odom = (cmd[0] * dt, cmd[1] * dt)
    lidar = (true_motion[0] + float(n[0]), true_motion[1] + float(n[1]))
    return odom, lidar


def step(
    state: RobotState,
    cmd: tuple[float, float],
    grid: WorldGrid,
    rng: np.random.Generator,
    dt: float,
    params: SimulatorParams,
    limits: KinematicLimits | None = None,
    t: float = 0.0,
) -> tuple[RobotState, ProprioSample]:
    """Advance one tick. ``t`` is the time stamped on the produced sample."""
    if limits is not None:
        check_command(limits, (state.v, state.omega), cmd)
    v, w = cmd
    cell = terrain_at(grid, state.position)
    legged = state.embodiment == "legged"

    lo, hi = params.slip_u_range
    u = float(rng.uniform(lo, hi))
    sigma_eff = cell.slipperiness * u
    if legged:
        sigma_eff *= params.legged_slip_factor
    d_true = v * dt * (1.0 - sigma_eff)
    dth_true = w * dt * (1.0 - sigma_eff / 2.0)
    x, y, th = integrate_arc(state.x, state.y, state.theta, d_true, dth_true)
    new_state = RobotState(
        x=x,
        y=y,
        theta=wrap_angle(th),
        v=v,
        omega=w,
        embodiment=state.embodiment,
        footprint_radius=state.footprint_radius,
    )

    forces = odom = lidar = None
    if legged:
        forces = synthesize_joint_forces(
            cell, rng, params.f0, params.kappa, params.s_force, params.n_joints, params.noise
        )
    else:
        odom, lidar = synthesize_odometry((d_true, dth_true), cmd, dt, rng, params.s_lidar, params.noise)

    hazard = cell.deformability if legged else cell.slipperiness
    imu_scale = params.s_imu * (cell.roughness + hazard) if params.noise else 0.0
    noise = rng.normal(0.0, imu_scale, size=3)
    accel = ((v - state.v) / dt, v * w, 0.0)
    imu = (accel[0] + float(noise[0]), accel[1] + float(noise[1]), accel[2] + float(noise[2]))
    sample = ProprioSample(
        t=t,
        position=(x, y),
        imu_accel=imu,
        joint_forces=forces,
        odom_delta=odom,
        lidar_delta=lidar,
    )
    return new_state, sample


def footprint_collides(grid: WorldGrid, x: float, y: float, radius: float) -> bool:
    """True if the footprint disc touches an obstacle cell or leaves the grid."""
    w, h = grid.size_m
    if x - radius < 0 or y - radius < 0 or x + radius > w or y + radius > h:
        return True
    res = grid.resolution
    c0 = max(int((x - radius) // res), 0)
    c1 = min(int((x + radius) // res), grid.width - 1)
    r0 = max(int((y - radius) // res), 0)
    r1 = min(int((y + radius) // res), grid.height - 1)
    block = grid.obstacles[r0 : r1 + 1, c0 : c1 + 1]
    if not block.any():
        return False
    rows, cols = np.nonzero(block)
    rows = rows + r0
    cols = cols + c0
    # distance from the disc center to each occupied square
    dx = np.maximum(np.maximum(cols * res - x, x - (cols + 1) * res), 0.0)
    dy = np.maximum(np.maximum(rows * res - y, y - (rows + 1) * res), 0.0)
    return bool((dx * dx + dy * dy < radius * radius).any())


def slip_ratio(sample: ProprioSample) -> float | None:
    if sample.odom_delta is None or sample.lidar_delta is None or sample.odom_delta[0] <= 0:
        return None
    return 1.0 - sample.lidar_delta[0] / sample.odom_delta[0]


def check_termination(
    state: RobotState,
    goal: tuple[float, float],
    history: Sequence[tuple[ProprioSample, float]],
    grid: WorldGrid,
    params: SimulatorParams,
    t: float,
    timeout_s: float,
) -> TrialStatus:
    """Classify the trial. ``history`` holds (sample, tau_indicator) pairs, oldest first."""
    if math.dist(state.position, goal) <= params.goal_radius:
        return TrialStatus("success", t)
    if footprint_collides(grid, state.x, state.y, state.footprint_radius):
        return TrialStatus("collision", t)
    if _immobilized(state, history, params, t):
        return TrialStatus("immobilized", t)
    if t > timeout_s:
        return TrialStatus("timeout", t)
    return TrialStatus("running", t)


def _immobilized(
    state: RobotState,
    history: Sequence[tuple[ProprioSample, float]],
    params: SimulatorParams,
    t: float,
) -> bool:
    window = params.stuck_window_s
    if not history or history[0][0].t > t - window + params.dt + _EPS:
        return False
    recent = [(s, tau) for s, tau in history if s.t > t - window + _EPS]
    if state.embodiment == "legged":
        taus = [tau for _, tau in recent]
        return bool(taus) and sum(taus) / len(taus) > params.sinkage_stuck_tau
    ratios = [r for r in (slip_ratio(s) for s, _ in recent) if r is not None]
    # in-place turning produces no slip evidence; need half a window of driving
    if len(ratios) < 0.5 * window / params.dt:
        return False
    return sum(ratios) / len(ratios) > params.slip_stuck_ratio


@dataclass
class Simulator:
    """One trial's plant: state, clock, RNG stream and recent history."""

    grid: WorldGrid
    params: SimulatorParams
    limits: KinematicLimits
    state: RobotState
    rng: np.random.Generator
    t: float = 0.0
    ticks: int = 0
    history: deque = field(default_factory=deque)

    def advance(self, cmd: tuple[float, float]) -> ProprioSample:
        self.ticks += 1
        t_next = self.ticks * self.params.dt
        self.state, sample = step(
            self.state, cmd, self.grid, self.rng, self.params.dt, self.params, self.limits, t=t_next
        )
        self.t = t_next
        return sample

    def record(self, sample: ProprioSample, tau: float) -> None:
        self.history.append((sample, tau))
        horizon = self.params.stuck_window_s + 2 * self.params.dt
        while self.history and self.history[0][0].t < self.t - horizon:
            self.history.popleft()

    def status(self, goal: tuple[float, float], timeout_s: float) -> TrialStatus:
        try:
            return check_termination(self.state, goal, self.history, self.grid, self.params, self.t, timeout_s)
        except OutOfBoundsError:
            return TrialStatus("collision", self.t)


class TraceWriter:
    """JSON-lines trace: one record per tick."""

    def __init__(self, fh: IO[str]):
        self.fh = fh

    def write(
        self,
        state: RobotState,
        cmd: tuple[float, float],
        sample: ProprioSample,
        tau: float,
        status: TrialStatus,
    ) -> None:
        rec = {
            "t": sample.t,
            "pose": [state.x, state.y, state.theta],
            "cmd": list(cmd),
            "sample": sample.to_dict(),
            "tau": tau,
            "status": status.state,
        }
        self.fh.write(json.dumps(rec) + "\n")


def read_trace(lines: Iterable[str]) -> list[dict]:
    return [json.loads(line) for line in lines if line.strip()]
