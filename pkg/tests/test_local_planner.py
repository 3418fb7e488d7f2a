import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CONCRETE, GRASS, MUD, make_grid
from gronav.backends import MockBackend
from gronav.local_planner import (
    ClearanceMap,
    FrontierSet,
    admissible_velocities,
    base_objective,
    classify_frontiers,
    extract_frontiers,
    frontier_cost,
    frontier_cost_detail,
    frontier_costs,
    rollout,
    select_command,
    select_command_dwa,
)
from gronav.reasoning import TraversabilityTable
from gronav.world import KinematicLimits, PlannerWeights, RobotState

LIM = KinematicLimits()
W = PlannerWeights()


def state(x=10.0, y=10.0, th=0.0, v=0.0, w=0.0):
    return RobotState(x, y, th, v, w, "legged")


def open_grid(n=40, res=0.5):
    return make_grid(np.zeros((n, n)), [CONCRETE], resolution=res)


def fset(points, taus, names=None):
    names = names or tuple(f"f{i}" for i in range(len(points)))
    return FrontierSet(tuple(names), tuple(points), ("x",) * len(points), tuple(taus))


def test_admissible_window_from_rest():
    vs, ws = admissible_velocities(LIM, (0.0, 0.0))
    assert vs.min() == 0.0 and vs.max() == pytest.approx(0.1)
    assert ws.min() == pytest.approx(-0.2) and ws.max() == pytest.approx(0.2)
    assert len(vs) == 11 * 21
    fast = replace(LIM, a_max=2.0)
    vs, _ = admissible_velocities(fast, (0.0, 0.0))
    assert vs.max() == pytest.approx(0.2)


def test_admissible_box_clip_and_symmetry():
    vs, ws = admissible_velocities(LIM, (LIM.v_max, 0.3))
    assert vs.max() <= LIM.v_max
    uniq = np.unique(ws)
    assert np.array_equal(uniq - 0.3, -(uniq[::-1] - 0.3)) or np.allclose(uniq - 0.3, -(uniq[::-1] - 0.3), atol=1e-15)
    _, ws = admissible_velocities(LIM, (0.5, 0.0))
    uniq = np.unique(ws)
    assert np.array_equal(uniq, -uniq[::-1])


def test_rollout_cases():
    ro = rollout(state(0, 0), 1.0, 0.0, 2.0, 0.1)
    assert ro.endpoint == pytest.approx((2.0, 0.0), abs=1e-12)
    ro = rollout(state(3, 4), 0.0, 1.0, math.pi, 0.1)
    assert ro.endpoint == pytest.approx((3.0, 4.0), abs=1e-12)
    assert ro.thetas[-1] == pytest.approx(math.pi)
    ro = rollout(state(0, 0), 1.0, 1.0, math.pi / 2, 0.01)
    assert ro.endpoint == pytest.approx((1.0, 1.0), abs=1e-12)
    # every pose sits on the circle of radius v/w centred at (0, 1)
    assert np.allclose(np.hypot(ro.xs, ro.ys - 1.0), 1.0, atol=1e-12)


def _rk4_endpoint(x, y, th, v, w, horizon, h=1e-3):
    f = lambda s: np.array([v * math.cos(s[2]), v * math.sin(s[2]), w])
    s = np.array([x, y, th], dtype=float)
    n = int(round(horizon / h))
    for _ in range(n):
        k1 = f(s)
        k2 = f(s + h / 2 * k1)
        k3 = f(s + h / 2 * k2)
        k4 = f(s + h * k3)
        s = s + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return s[0], s[1]


@settings(max_examples=25, deadline=None)
@given(st.floats(0, 1), st.floats(-1, 1), st.floats(-math.pi, math.pi), st.sampled_from([0.5, 1.0, 2.0, 3.0]))
def test_rollout_matches_numerical_integration(v, w, th, horizon):
    ro = rollout(state(0, 0, th), v, w, horizon, 0.01)
    assert ro.endpoint == pytest.approx(_rk4_endpoint(0, 0, th, v, w, horizon), abs=1e-6)


def test_base_objective_cases():
    grid = open_grid(80, 0.5)  # 40 m square, far from any wall
    goal = (35.0, 20.0)
    ro = rollout(state(20.0, 20.0), LIM.v_max, 0.0, 2.0, 0.1)
    assert base_objective(ro, goal, grid, LIM, W) == 0.0
    head_only = replace(W, rho_dist=0.0, rho_vel=0.0)
    ro = rollout(state(20.0, 20.0, -math.pi / 2), 0.0, 0.0, 2.0, 0.1)
    assert base_objective(ro, goal, grid, LIM, head_only) == pytest.approx(0.5, abs=1e-12)
    vel_only = replace(W, rho_head=0.0, rho_dist=0.0)
    ro = rollout(state(20.0, 20.0), 0.25, 0.0, 2.0, 0.1)
    assert base_objective(ro, goal, grid, LIM, vel_only) == pytest.approx(0.3 * 0.75, abs=1e-12)


def test_base_objective_rejects_collisions():
    obst = np.zeros((40, 40), bool)
    obst[18:22, 24:26] = True  # wall at x 12-13 m
    grid = make_grid(np.zeros((40, 40)), [CONCRETE], resolution=0.5, obstacles=obst)
    ro = rollout(state(10.0, 10.0), 1.0, 0.0, 3.0, 0.1)
    assert base_objective(ro, (18.0, 10.0), grid, LIM, W) == math.inf
    ro = rollout(state(10.0, 10.0, math.pi), 1.0, 0.0, 2.0, 0.1)
    assert math.isfinite(base_objective(ro, (18.0, 10.0), grid, LIM, W))


def test_clearance_is_conservative():
    obst = np.zeros((20, 20), bool)
    obst[10, 10] = True
    grid = make_grid(np.zeros((20, 20)), [CONCRETE], obstacles=obst)
    cmap = ClearanceMap(grid)
    rng = np.random.default_rng(0)
    xs, ys = rng.uniform(0, 20, 500), rng.uniform(0, 20, 500)
    got = cmap.at(xs, ys)
    # true distance to the obstacle square [10, 11]^2 or the map border
    dx = np.maximum(np.maximum(10 - xs, xs - 11), 0)
    dy = np.maximum(np.maximum(10 - ys, ys - 11), 0)
    true = np.minimum(np.hypot(dx, dy), np.minimum.reduce([xs, ys, 20 - xs, 20 - ys]))
    assert (got <= true + 1e-9).all()


def test_extract_frontiers_geometry_and_clipping():
    grid = open_grid(40, 0.5)
    pts = dict(extract_frontiers(state(5.0, 10.0), grid))
    assert pts["center"] == pytest.approx((8.0, 10.0))
    assert pts["left"] == pytest.approx((5 + 3 * math.cos(math.pi / 6), 10 + 1.5))
    assert pts["right"] == pytest.approx((5 + 3 * math.cos(math.pi / 6), 10 - 1.5))
    near_top = extract_frontiers(state(5.0, 19.0), grid)
    assert [n for n, _ in near_top] == ["center", "right"]
    obst = np.zeros((40, 40), bool)
    obst[:, 14:] = True  # wall from x = 7 m
    walled = make_grid(np.zeros((40, 40)), [CONCRETE], resolution=0.5, obstacles=obst)
    assert extract_frontiers(state(5.0, 10.0), walled) == []


def test_no_frontiers_falls_back_to_dwa():
    grid = open_grid()
    s = state(5.0, 10.0, 0.0, 0.5)
    empty = FrontierSet((), (), (), ())
    assert select_command(s, (18.0, 10.0), grid, empty, W, LIM) == select_command_dwa(s, (18.0, 10.0), grid, W, LIM)


def test_classify_frontiers_oracle_floor_and_confusion():
    classes = [CONCRETE, MUD]
    cells = np.ones((40, 40), dtype=np.int64)
    grid = make_grid(cells, classes, resolution=0.5)
    table = TraversabilityTable.from_priors(classes)
    cands = extract_frontiers(state(5.0, 10.0), grid)
    fs = classify_frontiers(MockBackend(classes, 0.0), cands, grid, table)
    assert fs.labels == ("muddy grass",) * 3
    assert fs.taus == (table["muddy grass"],) * 3
    table.values["muddy grass"] = 0.0
    fs = classify_frontiers(MockBackend(classes, 0.0), cands, grid, table)
    assert fs.taus == (0.05,) * 3
    fs = classify_frontiers(MockBackend(classes, 1.0, np.random.default_rng(0)), cands, grid, table)
    assert fs.labels == ("concrete",) * 3
    with pytest.raises(ValueError):
        classify_frontiers(MockBackend(classes), [], grid, table)


def test_frontier_cost_cases():
    ro = rollout(state(0, 0), 1.0, 0.0, 2.0, 0.1)
    assert frontier_cost(ro, fset([(2.0, 0.0), (5.0, 5.0)], [0.9, 0.1])) == 0.0
    ro = rollout(state(0, 0), 0.0, 0.0, 2.0, 0.1)
    assert frontier_cost(ro, fset([(1.0, 0.0), (0.0, 2.0)], [0.9, 0.1])) == pytest.approx(0.2)
    tie = FrontierSet(("right", "left", "center"), ((1, 0), (0, 1), (-1, 0)), ("a",) * 3, (0.5,) * 3)
    assert frontier_cost_detail((0.0, 0.0), tie) == (0.5, "center")
    with pytest.raises(ValueError):
        frontier_cost(ro, FrontierSet((), (), (), ()))


def random_case(rng):
    s = state(*rng.uniform(0, 20, 2), rng.uniform(-math.pi, math.pi))
    ro = rollout(s, rng.uniform(0, 1), rng.uniform(-1, 1), 2.0, 0.1)
    n = int(rng.integers(1, 4))
    pts = [tuple(p) for p in rng.uniform(0, 20, (n, 2))]
    taus = list(rng.uniform(0.05, 1.0, n))
    return ro, fset(pts, taus)


def brute_phi(endpoint, frontiers):
    products = []
    for (px, py), tau in zip(frontiers.points, frontiers.taus):
        products.append(math.dist(endpoint, (px, py)) * tau)
    return sorted(products)[0]


def test_frontier_cost_matches_exhaustive_min():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        ro, fs = random_case(rng)
        assert frontier_cost(ro, fs) == brute_phi(ro.endpoint, fs)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.floats(-20, 20), st.floats(-20, 20), st.floats(0.05, 1.0)), min_size=1, max_size=3),
       st.floats(-20, 20), st.floats(-20, 20), st.integers(0, 2), st.floats(0, 1))
def test_phi_nonnegative_and_monotone_in_tau(frontiers, ex, ey, k, bump):
    pts = [(x, y) for x, y, _ in frontiers]
    taus = [t for _, _, t in frontiers]
    base = frontier_cost_detail((ex, ey), fset(pts, taus))[0]
    assert base >= 0.0
    k %= len(taus)
    taus2 = list(taus)
    taus2[k] = min(1.0, taus2[k] + bump)
    assert frontier_cost_detail((ex, ey), fset(pts, taus2))[0] >= base


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(-20, 20), st.integers(-20, 20), st.integers(1, 20)), min_size=1, max_size=3),
       st.integers(-20, 20), st.integers(-20, 20), st.sampled_from([0.5, 2.0, 4.0, 10.0]))
def test_phi_argmin_invariant_under_scaling(frontiers, ex, ey, c):
    pts = [(float(x), float(y)) for x, y, _ in frontiers]
    taus = [t / 20 for _, _, t in frontiers]
    names = ("center", "left", "right")[: len(pts)]
    a = frontier_cost_detail((ex, ey), fset(pts, taus, names))[1]
    b = frontier_cost_detail((ex, ey), fset(pts, [t * c for t in taus], names))[1]
    assert a == b


def test_vectorised_phi_agrees():
    rng = np.random.default_rng(5)
    for _ in range(50):
        _, fs = random_case(rng)
        ex, ey = rng.uniform(0, 20, 30), rng.uniform(0, 20, 30)
        got = frontier_costs(ex, ey, fs)
        want = [brute_phi((a, b), fs) for a, b in zip(ex, ey)]
        assert np.allclose(got, want, rtol=0, atol=1e-12)


def test_rho4_zero_reduces_to_dwa():
    rng = np.random.default_rng(11)
    obst = rng.random((40, 40)) < 0.04
    grid = make_grid(np.zeros((40, 40)), [CONCRETE], resolution=0.5, obstacles=obst)
    cmap = ClearanceMap(grid)
    no_frontier = replace(W, rho_frontier=0.0)
    for _ in range(100):
        s = state(*rng.uniform(2, 18, 2), rng.uniform(-math.pi, math.pi), rng.uniform(0, 1), rng.uniform(-1, 1))
        goal = tuple(rng.uniform(0, 20, 2))
        _, fs = random_case(rng)
        a = select_command(s, goal, grid, fs, no_frontier, LIM, cmap)
        b = select_command_dwa(s, goal, grid, no_frontier, LIM, cmap)
        assert a == b


def test_veers_left_around_hazardous_centre():
    classes = [CONCRETE, MUD]
    cells = np.zeros((40, 80), dtype=np.int64)
    cells[16:24, 20:40] = 1  # mud straight ahead
    grid = make_grid(cells, classes, resolution=0.5)
    s = state(5.0, 10.0, 0.0, 0.5, 0.0)
    goal = (35.0, 10.0)
    c = 3 * math.cos(math.pi / 6)
    fs = FrontierSet(("center", "left", "right"), ((8.0, 10.0), (5 + c, 11.5), (5 + c, 8.5)),
                     ("muddy grass", "concrete", "muddy grass"), (0.9, 0.2, 0.9))
    weights = replace(W, rho_frontier=10.0)
    cmap = ClearanceMap(grid)
    got = select_command(s, goal, grid, fs, weights, LIM, cmap)
    assert got.omega > 0
    # exhaustive evaluation of the same sample grid
    vs, ws = admissible_velocities(LIM, (s.v, s.omega))
    best = None
    for v, w in zip(vs.tolist(), ws.tolist()):
        ro = rollout(s, v, w, weights.horizon, LIM.dt)
        g = base_objective(ro, goal, grid, LIM, weights, s.footprint_radius, cmap) + 10.0 * brute_phi(ro.endpoint, fs)
        key = (g, -v, abs(w), w)
        best = key if best is None or key < best else best
    assert (got.v, got.omega) == (-best[1], best[3])
    assert got.cost == pytest.approx(best[0], abs=1e-9)
    # without the frontier term the planner heads straight for the goal
    assert select_command(s, goal, grid, fs, replace(W, rho_frontier=0.0), LIM, cmap).omega == 0.0


def test_symmetric_world_goes_straight():
    grid = open_grid(40, 0.5)
    s = state(5.0, 10.0, 0.0, 0.5, 0.0)
    c = 3 * math.cos(math.pi / 6)
    fs = FrontierSet(("center", "left", "right"), ((8.0, 10.0), (5 + c, 11.5), (5 + c, 8.5)), ("a",) * 3, (0.5, 0.2, 0.2))
    assert select_command(s, (18.0, 10.0), grid, fs, W, LIM).omega == 0.0


def test_blocked_emits_braking_stop():
    obst = np.ones((20, 20), bool)
    obst[9:11, 9:11] = False
    grid = make_grid(np.zeros((20, 20)), [CONCRETE], obstacles=obst)
    d = select_command(state(10.0, 10.0, 0.0, 0.5, 0.5), (15.0, 10.0), grid, None, W, LIM)
    assert d.blocked and d.cost == math.inf
    assert d.cmd == pytest.approx((0.4, 0.3))


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 1), st.floats(-1, 1), st.floats(-math.pi, math.pi), st.floats(0, 3))
def test_selected_command_is_admissible(v, w, th, rho4):
    grid = open_grid(40, 0.5)
    s = state(10.0, 10.0, th, v, w)
    fs = FrontierSet(("center",), ((12.0, 10.0),), ("a",), (0.5,))
    d = select_command(s, (18.0, 4.0), grid, fs, replace(W, rho_frontier=rho4), LIM)
    assert 0.0 <= d.v <= LIM.v_max and abs(d.omega) <= LIM.omega_max
    assert abs(d.v - v) <= LIM.a_max * LIM.dt + 1e-12
    assert abs(d.omega - w) <= LIM.alpha_max * LIM.dt + 1e-12
