import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CONCRETE, GRASS, SAND, make_grid, make_scenario
from gronav.scenarios import BUNDLED, bundled_path, flat_scenario
from gronav.world import (
    OutOfBoundsError,
    ScenarioParseError,
    ScenarioValidationError,
    dumps_scenario,
    load_scenario,
    patch_descriptor,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    terrain_at,
    validate_scenario,
    wrap_angle,
)


def brute_histogram(grid, center, size):
    # count every cell whose centre lies in the closed square
    h = size / 2
    counts = {}
    for r in range(grid.height):
        for c in range(grid.width):
            x, y = (c + 0.5) * grid.resolution, (r + 0.5) * grid.resolution
            if abs(x - center[0]) <= h and abs(y - center[1]) <= h:
                lab = grid.classes[grid.cells[r, c]].label
                counts[lab] = counts.get(lab, 0) + 1
    total = sum(counts.values())
    return {k: v / total for k, v in counts.items()}


def test_bundled_scenario1_classes():
    sc = load_scenario(bundled_path("scenario1"))
    assert set(sc.grid.labels) == {"dry grass", "muddy grass", "concrete"}
    assert sc.embodiment == "legged"


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_scenarios_load(name):
    sc = load_scenario(bundled_path(name))
    assert sc.name == name
    assert sc.straight_line == pytest.approx(32.0)


def test_after_rain_variant_keeps_labels_with_higher_prior():
    dry = load_scenario(bundled_path("scenario1"))
    wet = load_scenario(bundled_path("scenario1_after_rain"))
    assert dry.grid.labels == wet.grid.labels
    assert "rain" in wet.weather
    assert wet.grid.class_by_label("muddy grass").prior_tau > dry.grid.class_by_label("muddy grass").prior_tau
    assert wet.grid.class_by_label("muddy grass").slipperiness > dry.grid.class_by_label("muddy grass").slipperiness


def test_goal_on_obstacle_is_rejected():
    obst = np.zeros((10, 10), bool)
    obst[5, 8] = True
    grid = make_grid(np.zeros((10, 10)), [CONCRETE], obstacles=obst)
    with pytest.raises(ScenarioValidationError) as exc:
        validate_scenario(make_scenario(grid, (1.5, 1.5), (8.5, 5.5)))
    assert any("obstacle" in v for v in exc.value.violations)


def test_minimal_single_class_grid(tmp_path):
    grid = make_grid(np.zeros((10, 10)), [CONCRETE])
    sc = make_scenario(grid, (1.0, 2.0), (4.0, 6.0))
    p = tmp_path / "s.json"
    save_scenario(sc, p)
    loaded = load_scenario(p)
    assert loaded.straight_line == 5.0
    assert loaded == sc


def test_validation_collects_every_violation():
    sc = scenario_to_dict(flat_scenario())
    sc["classes"][0]["prior_tau"] = 1.5
    sc["goal"] = list(sc["start"])
    sc["timeout_s"] = -1
    with pytest.raises(ScenarioValidationError) as exc:
        scenario_from_dict(sc)
    assert len(exc.value.violations) == 3


def test_parse_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ScenarioParseError):
        load_scenario(p)
    d = scenario_to_dict(flat_scenario())
    del d["grid"]
    with pytest.raises(ScenarioParseError):
        scenario_from_dict(d)
    d = scenario_to_dict(flat_scenario())
    d["planner"]["weights"]["rho_bogus"] = 1
    with pytest.raises(ScenarioParseError):
        scenario_from_dict(d)


def test_round_trip_is_bit_exact(tmp_path):
    for name in BUNDLED:
        text = bundled_path(name).read_text()
        sc = load_scenario(bundled_path(name))
        assert dumps_scenario(sc) == text
        p = tmp_path / f"{name}.json"
        save_scenario(sc, p)
        assert p.read_text() == text


def test_terrain_at_cell_centre_and_tie_rule(two_class_grid):
    g = two_class_grid
    assert terrain_at(g, (0.25, 0.25)).label == "concrete"
    assert terrain_at(g, (7.75, 4.75)).label == "dry grass"
    # x = 5.0 is the boundary between column 9 (concrete) and 10 (grass)
    assert terrain_at(g, (5.0, 1.0)).label == "concrete"
    assert g.cell_of(5.0, 1.0) == (1, 9)
    assert g.cell_of(0.0, 0.0) == (0, 0)
    assert g.cell_of(10.0, 5.0) == (9, 19)


def test_terrain_at_out_of_bounds(two_class_grid):
    with pytest.raises(OutOfBoundsError):
        terrain_at(two_class_grid, (-1.0, 0.0))


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 10), st.floats(0, 5))
def test_terrain_at_total_and_deterministic(x, y):
    g = make_grid(np.arange(200).reshape(10, 20) % 2, [CONCRETE, GRASS], resolution=0.5)
    a = terrain_at(g, (x, y))
    assert a == terrain_at(g, (x, y))
    rows, cols, inside = g.cell_indices(np.array([x]), np.array([y]))
    assert inside[0] and (rows[0], cols[0]) == g.cell_of(x, y)


def test_homogeneous_patch():
    g = make_grid(np.zeros((40, 40)), [SAND], resolution=0.5)
    p = patch_descriptor(g, (10.0, 10.0), 5.0)
    assert p.class_histogram == {"sand": 1.0}
    assert p.purity == 1.0


def test_straddling_patch_matches_brute_force():
    cells = np.zeros((100, 100), dtype=np.int64)
    cells[:, 50:] = 1
    g = make_grid(cells, [CONCRETE, GRASS], resolution=0.1)
    p = patch_descriptor(g, (5.0, 5.0), 5.0)
    expect = brute_histogram(g, (5.0, 5.0), 5.0)
    assert p.class_histogram == pytest.approx(expect, abs=1e-12)
    assert p.class_histogram["concrete"] == pytest.approx(0.5, abs=0.02)


def test_patch_overlapping_edge_uses_in_bounds_cells():
    g = make_grid(np.zeros((10, 10)), [CONCRETE])
    p = patch_descriptor(g, (-1.0, 5.0), 5.0)
    assert sum(p.class_histogram.values()) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(OutOfBoundsError):
        patch_descriptor(g, (-10.0, 5.0), 5.0)


@settings(max_examples=150, deadline=None)
@given(
    st.integers(0, 2**31 - 1),
    st.floats(-2, 12),
    st.floats(-2, 12),
    st.floats(0.6, 8),
)
def test_patch_histogram_matches_brute_force(seed, cx, cy, size):
    rng = np.random.default_rng(seed)
    g = make_grid(rng.integers(0, 3, (10, 10)), [CONCRETE, GRASS, SAND])
    try:
        p = patch_descriptor(g, (cx, cy), size)
    except OutOfBoundsError:
        assert brute_histogram_empty(g, (cx, cy), size)
        return
    assert math.isclose(sum(p.class_histogram.values()), 1.0, abs_tol=1e-9)
    assert p.class_histogram == pytest.approx(brute_histogram(g, (cx, cy), size), abs=1e-12)


def brute_histogram_empty(grid, center, size):
    h = size / 2
    return not any(
        abs((c + 0.5) * grid.resolution - center[0]) <= h and abs((r + 0.5) * grid.resolution - center[1]) <= h
        for r in range(grid.height)
        for c in range(grid.width)
    )


@given(st.floats(-50, 50))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


def test_scenario_json_is_plain(tmp_path):
    d = json.loads(dumps_scenario(flat_scenario()))
    assert set(d) >= {"grid", "classes", "start", "goal", "embodiment", "weather", "objective", "planner", "calibration", "simulator", "timeout_s"}
