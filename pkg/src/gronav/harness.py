"""Seeded trials, batches, metrics and output files.

A trial wires every module together: the simulator produces proprioception,
indicators are paired with captured patches to form exemplars, the reasoning
layer refreshes the traversability table, the global planner keeps a
waypoint plan (re-queried when an on-path class changes enough) and the
local planner turns the current waypoint into velocity commands.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import Future, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Literal, Sequence

import numpy as np

from .backends import MockBackend, RemoteBackend, VlmBackend
from .global_planner import (
    WaypointGraph,
    WaypointPlan,
    build_waypoint_graph,
    mark_aerial,
    plan_global,
    reanchor_start,
    should_replan,
)
from .local_planner import (
    ClearanceMap,
    FrontierSet,
    classify_frontiers,
    extract_frontiers,
    select_command,
    with_taus,
)
from .proprioception import (
    ExemplarAssociator,
    ImuEnergyAccumulator,
    PatchEvent,
    imu_accumulate,
    indicator,
)
from .reasoning import ExemplarPool, PromptTemplate, TraversabilityTable, init_terrain_classes, refresh_table
from .simulator import CommandError, Simulator, TraceWriter, TrialStatus, check_command
from .world import OutOfBoundsError, RobotState, ScenarioConfig, patch_descriptor

log = logging.getLogger(__name__)

VariantKind = Literal["full", "no_global", "no_icl", "dwa_baseline"]
VARIANTS: tuple[VariantKind, ...] = ("full", "no_global", "no_icl", "dwa_baseline")
ALIASES = {"no_gp": "no_global", "dwa": "dwa_baseline"}
SUMMARY_COLUMNS = ("variant", "success_rate", "norm_traj_length", "imu_energy")


def parse_variant(name: str) -> VariantKind:
    kind = ALIASES.get(name, name)
    if kind not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {sorted(set(VARIANTS) | set(ALIASES))}")
    return kind  # type: ignore[return-value]


@dataclass(frozen=True)
class RemoteConfig:
    base_url: str
    model: str
    timeout: float = 10.0


@dataclass(frozen=True)
class MethodVariant:
    kind: VariantKind = "full"
    backend: Literal["mock", "remote"] = "mock"
    remote: RemoteConfig | None = None

    @property
    def uses_global_plan(self) -> bool:
        return self.kind in ("full", "no_icl")

    @property
    def learns(self) -> bool:
        return self.kind in ("full", "no_global")

    @property
    def uses_frontiers(self) -> bool:
        return self.kind != "dwa_baseline"


@dataclass
class TrialResult:
    scenario: str
    variant: str
    seed: int
    status: str
    sim_time: float
    path_length: float
    straight_line: float
    imu_energy: float
    replans: int
    command_violations: int
    wall_time: float = 0.0
    trajectory: list[tuple[float, float]] = field(default_factory=list, repr=False)
    final_table: dict[str, float] = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.status == "success"

    @property
    def norm_traj_length(self) -> float:
        return self.path_length / self.straight_line

    def to_json(self) -> dict:
        """Deterministic record: wall time and the raw trajectory are left out."""
        return {
            "scenario": self.scenario,
            "variant": self.variant,
            "seed": self.seed,
            "status": self.status,
            "sim_time": self.sim_time,
            "path_length": self.path_length,
            "straight_line": self.straight_line,
            "norm_traj_length": self.norm_traj_length,
            "imu_energy": self.imu_energy,
            "replans": self.replans,
            "command_violations": self.command_violations,
            "final_table": self.final_table,
        }


def make_backend(sc: ScenarioConfig, variant: MethodVariant, rng: np.random.Generator) -> VlmBackend:
    if variant.backend == "mock":
        return MockBackend(sc.classes, sc.reasoning.p_err, rng)
    if variant.remote is None:
        raise ValueError("remote backend needs a base URL and model")
    return RemoteBackend(sc.grid, variant.remote.base_url, variant.remote.model, variant.remote.timeout)


class _Async:
    """At most one outstanding remote job; results are swapped in between ticks."""

    def __init__(self, enabled: bool):
        self.pool = ThreadPoolExecutor(max_workers=1) if enabled else None
        self.job: Future | None = None
        self.started = 0.0

    def busy(self) -> bool:
        return self.job is not None and not self.job.done()

    def submit(self, fn, *args):
        if self.pool is None:
            return fn(*args)
        self.job = self.pool.submit(fn, *args)
        self.started = time.monotonic()
        return None

    def poll(self, deadline_s: float | None = None):
        if self.job is None:
            return None
        if self.job.done():
            job, self.job = self.job, None
            try:
                return job.result()
            except Exception as exc:  # noqa: BLE001
                log.warning("background VLM job failed: %s", exc)
                return None
        if deadline_s is not None and time.monotonic() - self.started > deadline_s:
            log.warning("background VLM job exceeded its %.1f s deadline; abandoned", deadline_s)
            self.job = None
        return None

    def close(self) -> None:
        if self.pool is not None:
            self.pool.shutdown(wait=False, cancel_futures=True)


class Trial:
    """One seeded run; drive it with :meth:`tick` or :meth:`run`."""

    def __init__(
        self,
        sc: ScenarioConfig,
        variant: MethodVariant,
        seed: int,
        backend: VlmBackend | None = None,
        trace: IO[str] | None = None,
    ):
        self.sc = sc
        self.variant = variant
        self.seed = seed
        sim_ss, vlm_ss = np.random.SeedSequence(seed).spawn(2)
        self.backend = backend or make_backend(sc, variant, np.random.default_rng(vlm_ss))
        remote = self.backend.kind == "remote"
        self.plan_job = _Async(remote)
        self.refresh_job = _Async(remote)

        cfg = sc.planner
        self.limits = cfg.limits
        self.weights = cfg.weights
        if not variant.uses_frontiers:
            self.weights = replace(cfg.weights, rho_frontier=0.0)
        state = RobotState(sc.start[0], sc.start[1], sc.start_heading, 0.0, 0.0, sc.embodiment, sc.simulator.footprint_radius)
        self.sim = Simulator(sc.grid, sc.simulator, cfg.limits, state, np.random.default_rng(sim_ss))
        self.cmap = ClearanceMap(sc.grid)
        self.trace = TraceWriter(trace) if trace is not None else None

        self.table: TraversabilityTable = init_terrain_classes(self.backend, sc.grid, sc.weather)
        self.pool = ExemplarPool(sc.classes, sc.reasoning.pool_capacity)
        self.prompt = PromptTemplate()
        self.associator = ExemplarAssociator(sc.reasoning.window_s, sc.reasoning.patch_expiry_s)
        self.next_capture = 0.0
        self.last_remote_refresh = -math.inf
        self.dirty_labels: set[str] = set()

        self.graph: WaypointGraph | None = None
        self.plan: WaypointPlan | None = None
        self.replans = 0
        self.plan_queries = 0
        if variant.uses_global_plan:
            self.graph = build_waypoint_graph(
                sc.grid, cfg.global_.spacing, sc.start, sc.goal, margin=sc.simulator.footprint_radius
            )
            self.plan = self._query_plan(self.graph)
            self.plan.cursor = 1

        self.frontiers: FrontierSet | None = None
        self.energy = ImuEnergyAccumulator()
        self.path_length = 0.0
        self.trajectory = [sc.start]
        self.violations = 0
        self.status = TrialStatus("running", 0.0)

    # -- planning -------------------------------------------------------------

    def _query_plan(self, graph: WaypointGraph) -> WaypointPlan:
        self.plan_queries += 1
        marked = mark_aerial(self.sc.grid, graph, self.table)
        return plan_global(
            self.backend,
            marked,
            self.sc.objective,
            self.table.copy(),
            graph.markers[graph.start_id],
            self.sc.goal,
            self.sc.planner.global_.retries,
        )

    def _replan_job(self, graph: WaypointGraph) -> tuple[WaypointGraph, WaypointPlan]:
        return graph, self._query_plan(graph)

    def apply_table(self, new: TraversabilityTable) -> bool:
        """Swap in a refreshed table; re-query the plan if an on-path class moved. True if re-queried."""
        prev, self.table = self.table, new
        if self.plan is None or self.graph is None or self.plan_job.busy():
            return False
        if not should_replan(prev, new, self.plan, self.graph, self.sc.planner.global_.replan_threshold):
            return False
        graph = reanchor_start(self.graph, self.sc.grid, self.sim.state.position)
        self.replans += 1
        done = self.plan_job.submit(self._replan_job, graph)
        if done is not None:
            self._install_plan(*done)
        return True

    def _install_plan(self, graph: WaypointGraph, plan: WaypointPlan) -> None:
        self.graph, self.plan = graph, plan
        plan.cursor = 1

    def current_goal(self) -> tuple[float, float]:
        if self.plan is None or self.graph is None:
            return self.sc.goal
        ids, radius = self.plan.ids, self.sc.planner.global_.waypoint_radius
        pos = self.sim.state.position
        while self.plan.cursor < len(ids) - 1 and math.dist(pos, self.graph.markers[ids[self.plan.cursor]]) <= radius:
            self.plan.cursor += 1
        if self.plan.cursor >= len(ids) - 1:
            return self.sc.goal
        return self.graph.markers[ids[self.plan.cursor]]

    # -- perception and reasoning ----------------------------------------------

    def _capture(self) -> None:
        rp = self.sc.reasoning
        s = self.sim.state
        if self.sim.t + 1e-9 < self.next_capture:
            return
        self.next_capture += rp.capture_period
        c = (s.x + rp.capture_distance * math.cos(s.theta), s.y + rp.capture_distance * math.sin(s.theta))
        if not self.sc.grid.in_bounds(*c):
            return
        try:
            aerial = patch_descriptor(self.sc.grid, c, rp.patch_size, "aerial")
        except OutOfBoundsError:
            return
        if aerial.purity + 1e-12 < rp.min_purity:
            return
        front = patch_descriptor(self.sc.grid, c, rp.patch_size, "front")
        self.associator.add(PatchEvent(aerial, front, self.sim.t, (s.x, s.y, s.theta)))

    def _reason(self) -> None:
        if self.backend.kind != "remote":
            if self.dirty_labels:
                labels = sorted(self.dirty_labels)
                self.dirty_labels.clear()
                self.apply_table(refresh_table(self.table, self.backend, self.pool, self.prompt, self.sim.t, self.sc.weather, labels))
            return
        done = self.refresh_job.poll()
        if done is not None:
            self.apply_table(done)
        if (
            self.dirty_labels
            and not self.refresh_job.busy()
            and self.sim.t - self.last_remote_refresh >= self.sc.reasoning.remote_min_interval
        ):
            labels = sorted(self.dirty_labels)
            self.dirty_labels.clear()
            self.last_remote_refresh = self.sim.t
            self.refresh_job.submit(
                refresh_table, self.table.copy(), self.backend, self.pool, self.prompt, self.sim.t, self.sc.weather, labels
            )

    def _update_frontiers(self) -> None:
        if not self.variant.uses_frontiers:
            return
        fp = self.sc.planner.frontier
        if self.sim.ticks % fp.classify_every == 0 or self.frontiers is None:
            cands = extract_frontiers(self.sim.state, self.sc.grid, fp.lookahead, fp.half_angle)
            self.frontiers = (
                classify_frontiers(self.backend, cands, self.sc.grid, self.table, fp.patch_size, fp.tau_floor)
                if cands
                else None
            )
        elif self.frontiers is not None:
            self.frontiers = with_taus(self.frontiers, self.table, fp.tau_floor)

    # -- main loop --------------------------------------------------------------

    def tick(self) -> TrialStatus:
        if self.status.terminal:
            return self.status
        done = self.plan_job.poll(self.sc.planner.global_.deadline_s)
        if done is not None:
            self._install_plan(*done)
        if self.variant.learns:
            self._capture()
        self._update_frontiers()
        goal = self.current_goal()
        decision = select_command(self.sim.state, goal, self.sc.grid, self.frontiers, self.weights, self.limits, self.cmap)
        s = self.sim.state
        try:
            check_command(self.limits, (s.v, s.omega), decision.cmd)
        except CommandError:
            self.violations += 1
        prev = s.position
        sample = self.sim.advance(decision.cmd)
        tau = indicator(sample, self.sc.calibration.sinkage, self.sc.calibration.slip)
        self.sim.record(sample, tau)
        self.energy = imu_accumulate(self.energy, sample)
        pos = self.sim.state.position
        self.path_length += math.dist(prev, pos)
        self.trajectory.append(pos)
        if self.variant.learns:
            # measurements belong to the pose they were taken from
            for ex in self.associator.observe(sample.t, prev[0], prev[1], tau):
                self.pool.add(ex)
                self.dirty_labels.add(ex.label)
            self._reason()
        self.status = self.sim.status(self.sc.goal, self.sc.timeout_s)
        if self.trace is not None:
            self.trace.write(self.sim.state, decision.cmd, sample, tau, self.status)
        return self.status

    def run(self) -> TrialResult:
        t0 = time.perf_counter()
        try:
            while not self.tick().terminal:
                pass
        finally:
            self.plan_job.close()
            self.refresh_job.close()
        return TrialResult(
            scenario=self.sc.name,
            variant=self.variant.kind,
            seed=self.seed,
            status=self.status.state,
            sim_time=self.status.t,
            path_length=self.path_length,
            straight_line=self.sc.straight_line,
            imu_energy=self.energy.total,
            replans=self.replans,
            command_violations=self.violations,
            wall_time=time.perf_counter() - t0,
            trajectory=self.trajectory,
            final_table=dict(self.table.values),
        )


def run_trial(
    sc: ScenarioConfig,
    variant: MethodVariant | str,
    seed: int,
    backend: VlmBackend | None = None,
    trace: IO[str] | None = None,
) -> TrialResult:
    if isinstance(variant, str):
        variant = MethodVariant(parse_variant(variant))
    return Trial(sc, variant, seed, backend, trace).run()


@dataclass(frozen=True)
class SummaryRow:
    variant: str
    success_rate: float
    norm_traj_length: float
    imu_energy: float  # NaN when no trial succeeded
    n_trials: int


def summarize(results: Sequence[TrialResult]) -> list[SummaryRow]:
    rows = []
    for kind in dict.fromkeys(r.variant for r in results):
        rs = [r for r in results if r.variant == kind]
        ok = [r for r in rs if r.success]
        rows.append(
            SummaryRow(
                variant=kind,
                success_rate=len(ok) / len(rs),
                norm_traj_length=float(np.mean([r.norm_traj_length for r in rs])),
                imu_energy=float(np.mean([r.imu_energy for r in ok])) if ok else math.nan,
                n_trials=len(rs),
            )
        )
    return rows


@dataclass
class BatchResult:
    results: list[TrialResult]
    summary: list[SummaryRow]

    def row(self, variant: str) -> SummaryRow:
        kind = parse_variant(variant)
        return next(r for r in self.summary if r.variant == kind)


def _trial_job(args) -> TrialResult:
    sc, variant, seed, trace_dir = args
    if trace_dir is None:
        return run_trial(sc, variant, seed)
    path = Path(trace_dir) / f"{sc.name}_{variant.kind}_{seed}.jsonl"
    with path.open("w") as fh:
        return run_trial(sc, variant, seed, trace=fh)


def run_batch(
    sc: ScenarioConfig,
    variants: Iterable[MethodVariant | str],
    n_trials: int,
    base_seed: int = 0,
    workers: int = 1,
    trace_dir: str | Path | None = None,
) -> BatchResult:
    """Every variant runs seeds ``base_seed .. base_seed + n_trials - 1``."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    vs = [MethodVariant(parse_variant(v)) if isinstance(v, str) else v for v in variants]
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(sc, v, base_seed + i, trace_dir) for v in vs for i in range(n_trials)]
    if workers > 1 and all(v.backend == "mock" for v in vs):
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_trial_job, jobs))
    else:
        results = [_trial_job(j) for j in jobs]
    return BatchResult(results, summarize(results))


# -- outputs ------------------------------------------------------------------


def write_results(results: Sequence[TrialResult], path: Path) -> None:
    with path.open("w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def write_summary(rows: Sequence[SummaryRow], path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            imu = "" if math.isnan(r.imu_energy) else repr(r.imu_energy)
            w.writerow([r.variant, repr(r.success_rate), repr(r.norm_traj_length), imu])


def plot_trajectories(sc: ScenarioConfig, results: Sequence[TrialResult], path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .render import grid_rgb

    w, h = sc.grid.size_m
    fig, ax = plt.subplots(figsize=(8, 8 * h / w))
    ax.imshow(grid_rgb(sc.grid), origin="lower", extent=(0, w, 0, h))
    colors = dict(zip(VARIANTS, ("tab:blue", "tab:orange", "tab:purple", "tab:red")))
    seen = set()
    for r in results:
        xs, ys = zip(*r.trajectory)
        label = None if r.variant in seen else r.variant
        seen.add(r.variant)
        ax.plot(xs, ys, color=colors.get(r.variant, "k"), lw=1.2, alpha=0.8, label=label)
    ax.plot(*sc.start, marker="*", ms=16, color="lime", mec="k")
    ax.plot(*sc.goal, marker="*", ms=16, color="red", mec="k")
    ax.set_xlim(0, w)
    ax.set_ylim(0, h)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="upper left", fontsize=8)
    ax.set_title(sc.name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_marked_image(sc: ScenarioConfig, path: Path) -> None:
    graph = build_waypoint_graph(
        sc.grid, sc.planner.global_.spacing, sc.start, sc.goal, margin=sc.simulator.footprint_radius
    )
    table = TraversabilityTable.from_priors(sc.classes)
    mark_aerial(sc.grid, graph, table).raster().save(path)


def emit_outputs(
    sc: ScenarioConfig,
    batch: BatchResult,
    out_dir: str | Path,
    plot: bool = False,
    marked_image: str | Path | None = None,
) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "results.jsonl", out / "summary.csv"]
    write_results(batch.results, written[0])
    write_summary(batch.summary, written[1])
    if plot:
        p = out / "trajectories.png"
        plot_trajectories(sc, batch.results, p)
        written.append(p)
    if marked_image is not None:
        p = Path(marked_image)
        write_marked_image(sc, p)
        written.append(p)
    return written
