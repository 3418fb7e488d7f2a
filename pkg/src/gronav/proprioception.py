"""Traversability indicators from joint forces and odometry, plus exemplar alignment.

Convention: tau = 0 is fully traversable, tau = 1 impassable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .simulator import ProprioSample
from .world import PatchDescriptor, SinkageCalibration, SlipCalibration

__all__ = [
    "Exemplar",
    "ExemplarAssociator",
    "ImuEnergyAccumulator",
    "PatchEvent",
    "SinkageCalibration",
    "SlipCalibration",
    "associate_exemplar",
    "closed_form_sinkage_tau",
    "imu_accumulate",
    "imu_total",
    "indicator",
    "sinkage_indicator",
    "sinkage_traversability",
    "slip_traversability",
]

_EPS = 1e-9


def _clamp01(v: float) -> float:
    return min(max(v, 0.0), 1.0)


def sinkage_indicator(forces: Sequence[float]) -> float:
    """Sum of squared joint forces, in N^2."""
    if len(forces) == 0:
        raise ValueError("need at least one joint force")
    return float(sum(f * f for f in forces))


def sinkage_traversability(s: float, calib: SinkageCalibration) -> float:
    return _clamp01(calib.gamma * (s - calib.s_min) / (calib.s_max - calib.s_min))


def slip_traversability(sample: ProprioSample, calib: SlipCalibration) -> float:
    if sample.odom_delta is None or sample.lidar_delta is None:
        raise ValueError("slip indicator needs both wheel and lidar odometry")
    gap_d = abs(sample.lidar_delta[0] - sample.odom_delta[0])
    gap_th = abs(sample.lidar_delta[1] - sample.odom_delta[1])
    return _clamp01(calib.beta_d * gap_d + calib.beta_theta * gap_th)


def indicator(sample: ProprioSample, sinkage: SinkageCalibration, slip: SlipCalibration) -> float:
    """Embodiment-appropriate tau for one sample (sinkage if forces present, else slip)."""
    if sample.joint_forces is not None:
        return sinkage_traversability(sinkage_indicator(sample.joint_forces), sinkage)
    return slip_traversability(sample, slip)


def closed_form_sinkage_tau(deformability: float, kappa: float) -> float:
    """Noise-free tau when the calibration matches the simulator's force law."""
    return ((1 + kappa * deformability) ** 2 - 1) / ((1 + kappa) ** 2 - 1)


# -- exemplar alignment ------------------------------------------------------


@dataclass(frozen=True)
class PatchEvent:
    aerial: PatchDescriptor
    front: PatchDescriptor
    t_image: float
    pose: tuple[float, float, float]


@dataclass(frozen=True)
class Exemplar:
    aerial: PatchDescriptor
    front: PatchDescriptor
    tau_shifted: float
    label: str
    t_image: float
    t_proprio: float


@dataclass
class _Pending:
    event: PatchEvent
    entry: float | None = None
    taus: list[float] = field(default_factory=list)


class ExemplarAssociator:
    """Streaming version of :func:`associate_exemplar`.

    Feed one ``observe`` call per tick; finished windows come back as
    exemplars. Results match the batch function on the same logs.
    """

    def __init__(self, window_s: float = 1.0, expiry_s: float | None = None):
        self.window_s = window_s
        self.expiry_s = expiry_s
        self._pending: list[_Pending] = []

    def add(self, event: PatchEvent) -> None:
        self._pending.append(_Pending(event))

    @property
    def pending(self) -> int:
        return len(self._pending)

    def observe(self, t: float, x: float, y: float, tau: float) -> list[Exemplar]:
        done: list[Exemplar] = []
        keep: list[_Pending] = []
        for p in self._pending:
            ev = p.event
            if p.entry is None:
                if t <= ev.t_image + _EPS:
                    keep.append(p)
                elif ev.aerial.contains(x, y):
                    p.entry = t
                    p.taus.append(tau)
                    keep.append(p)
                elif self.expiry_s is None or t - ev.t_image <= self.expiry_s + _EPS:
                    keep.append(p)
                continue
            if t <= p.entry + self.window_s + _EPS and ev.aerial.contains(x, y):
                p.taus.append(tau)
                keep.append(p)
            else:
                done.append(_finish(p))
        self._pending = keep
        return done

    def flush(self) -> list[Exemplar]:
        done = [_finish(p) for p in self._pending if p.entry is not None]
        self._pending = []
        return done


def _finish(p: _Pending) -> Exemplar:
    ev = p.event
    return Exemplar(
        aerial=ev.aerial,
        front=ev.front,
        tau_shifted=sum(p.taus) / len(p.taus),
        label=ev.aerial.majority_label,
        t_image=ev.t_image,
        t_proprio=p.entry,
    )


def associate_exemplar(
    patch_events: Sequence[PatchEvent],
    proprio_log: Sequence[tuple[float, float]],
    pose_log: Sequence[tuple[float, float, float]],
    window_w: float = 1.0,
    expiry_s: float | None = None,
) -> list[Exemplar]:
    """Pair each captured patch with the indicator measured after the robot reaches it.

    ``proprio_log`` holds (t, tau) and ``pose_log`` holds (t, x, y), aligned
    tick by tick, where (x, y) is the pose the measurement was taken from.
    Only measurements stamped strictly after capture count. The indicator is
    averaged from the first in-patch tick over ``window_w`` seconds, stopping
    early if the robot leaves the patch. Patches never entered produce nothing.
    """
    if len(proprio_log) != len(pose_log):
        raise ValueError("proprio_log and pose_log must be aligned")
    out = []
    for ev in patch_events:
        entry = None
        taus: list[float] = []
        for (t, tau), (tp, x, y) in zip(proprio_log, pose_log):
            if abs(t - tp) > _EPS:
                raise ValueError("proprio_log and pose_log timestamps differ")
            if entry is None:
                if t <= ev.t_image + _EPS:
                    continue
                if expiry_s is not None and t - ev.t_image > expiry_s + _EPS:
                    break
                if ev.aerial.contains(x, y):
                    entry = t
                    taus.append(tau)
                continue
            if t <= entry + window_w + _EPS and ev.aerial.contains(x, y):
                taus.append(tau)
            else:
                break
        if entry is not None:
            out.append(
                Exemplar(
                    aerial=ev.aerial,
                    front=ev.front,
                    tau_shifted=sum(taus) / len(taus),
                    label=ev.aerial.majority_label,
                    t_image=ev.t_image,
                    t_proprio=entry,
                )
            )
    return out


# -- IMU energy --------------------------------------------------------------


@dataclass(frozen=True)
class ImuEnergyAccumulator:
    e_ax: float = 0.0
    e_ay: float = 0.0
    e_az: float = 0.0
    n: int = 0

    @property
    def total(self) -> float:
        return self.e_ax + self.e_ay + self.e_az


def imu_accumulate(acc: ImuEnergyAccumulator, sample: ProprioSample) -> ImuEnergyAccumulator:
    ax, ay, az = sample.imu_accel
    return ImuEnergyAccumulator(acc.e_ax + ax * ax, acc.e_ay + ay * ay, acc.e_az + az * az, acc.n + 1)


def imu_total(acc: ImuEnergyAccumulator) -> float:
    return acc.total
