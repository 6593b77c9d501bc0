import json
import math

import numpy as np
import pytest

from panelloc.errors import ConfigError
from panelloc.geometry import point_on_wall
from panelloc.scenario import (
    DEFAULT_N_STEPS,
    RadioConfig,
    Scenario,
    default_scenario,
    gen_trajectory,
    load_scenario,
    place_panels,
    save_scenario,
    scenario_from_dict,
)

ROOM = (0.0, 0.0, 30.0, 30.0)


def _expected_positions(j):
    """Perimeter-arithmetic oracle: walk the boundary clockwise from (0, 30)."""
    L = 120.0
    out = []
    for k in range(j):
        s = ((k + 0.5) * L / j - L / 2.0) % L
        if s < 30:
            out.append((s, 30.0))
        elif s < 60:
            out.append((30.0, 30.0 - (s - 30)))
        elif s < 90:
            out.append((30.0 - (s - 60), 0.0))
        else:
            out.append((0.0, s - 90))
    return sorted(out, key=lambda p: _arc(p))


def _arc(p):
    x, y = p
    if y == 30.0 and x < 30.0:
        return x
    if x == 30.0:
        return 30 + (30 - y)
    if y == 0.0:
        return 60 + (30 - x)
    return 90 + y


def test_place_panels_j4_wall_centers():
    panels = place_panels(4, ROOM)
    got = sorted(tuple(p.position) for p in panels)
    assert got == sorted([(15.0, 30.0), (30.0, 15.0), (15.0, 0.0), (0.0, 15.0)])
    # inward-facing: top panel looks down, bottom panel looks up, etc.
    by_pos = {tuple(p.position): p.orientation_rad for p in panels}
    assert by_pos[(15.0, 30.0)] == pytest.approx(-math.pi / 2)
    assert by_pos[(15.0, 0.0)] == pytest.approx(math.pi / 2)
    assert by_pos[(0.0, 15.0)] == pytest.approx(0.0)
    assert by_pos[(30.0, 15.0)] == pytest.approx(math.pi)


def test_place_panels_j2_upper_corners():
    panels = place_panels(2, ROOM)
    got = [tuple(p.position) for p in panels]
    assert got == [(0.0, 30.0), (30.0, 30.0)]


def test_place_panels_j1_perimeter_start():
    panels = place_panels(1, ROOM)
    assert tuple(panels[0].position) == (0.0, 30.0)


@pytest.mark.parametrize("j", [1, 3, 4, 8, 12, 24, 48])
def test_place_panels_matches_perimeter_oracle(j):
    panels = place_panels(j, ROOM)
    assert len(panels) == j
    got = [tuple(np.round(p.position, 9)) for p in panels]
    assert got == [tuple(np.round(p, 9)) for p in _expected_positions(j)]


def test_place_panels_on_boundary():
    scn = default_scenario(j=24)
    for p in scn.panels:
        assert any(point_on_wall(p.position, w, tol=1e-9) for w in scn.room)


def test_place_panels_j48_twelve_per_wall():
    panels = place_panels(48, ROOM)
    top = sum(1 for p in panels if p.position[1] == 30.0)
    bottom = sum(1 for p in panels if p.position[1] == 0.0)
    left = sum(1 for p in panels if p.position[0] == 0.0 and 0 < p.position[1] < 30)
    right = sum(1 for p in panels if p.position[0] == 30.0 and 0 < p.position[1] < 30)
    assert (top, right, bottom, left) == (12, 12, 12, 12)


def test_place_panels_invalid_count():
    with pytest.raises(ValueError):
        place_panels(0, ROOM)


def test_gen_trajectory_uniform_motion():
    pos, vel = gen_trajectory([(5, 5), (25, 5)], speed=1.0, dt=1.0, n_steps=5)
    assert np.allclose(pos[:, 0], [5, 6, 7, 8, 9])
    assert np.allclose(pos[:, 1], 5.0)
    assert np.allclose(vel, [[1.0, 0.0]] * 5)


def test_gen_trajectory_cyclic_wrap():
    # 2-waypoint cycle has total length 40; positions repeat with period 40
    pos, _ = gen_trajectory([(0, 0), (20, 0)], speed=1.0, dt=1.0, n_steps=85)
    assert np.allclose(pos[0], pos[40])
    assert np.allclose(pos[3], pos[83])


def test_gen_trajectory_speed_invariant():
    pos, vel = gen_trajectory([(5, 5), (25, 5), (25, 25)], speed=1.3, dt=0.1, n_steps=300)
    speeds = np.linalg.norm(vel, axis=1)
    on_segment = np.abs(speeds - 1.3) < 1e-9
    assert on_segment.mean() > 0.95  # violated only at waypoint turns
    gap = pos[1:] - pos[:-1] - vel[:-1] * 0.1
    assert np.max(np.linalg.norm(gap, axis=1)) <= 0.5


def test_gen_trajectory_waypoint_outside_room():
    with pytest.raises(ValueError):
        gen_trajectory([(5, 5), (35, 5)], speed=1.0, dt=1.0, n_steps=5, room=ROOM)


def test_default_scenario_paper_values():
    scn = default_scenario()
    assert scn.n_steps == DEFAULT_N_STEPS == 526
    assert scn.radio.carrier_hz == 28e9
    assert scn.radio.bandwidth_hz == 400e6
    assert scn.radio.array_side == 5
    assert scn.radio.element_spacing_m == pytest.approx(scn.radio.wavelength / 4)
    assert scn.n_panels == 24


def test_load_scenario_empty_file(tmp_path):
    path = tmp_path / "empty.json"
    path.write_text("")
    scn = load_scenario(path)
    assert scn.n_steps == 526
    assert scn.radio.carrier_hz == 28e9
    assert scn.n_panels == 24
    assert len(scn.interior) == 2


def test_load_scenario_bad_bandwidth(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"radio": {"bandwidth_hz": -1}}))
    with pytest.raises(ConfigError, match="bandwidth_hz must be positive"):
        load_scenario(path)


def test_load_scenario_j48(tmp_path):
    path = tmp_path / "j48.json"
    path.write_text(json.dumps({"panels": {"count": 48}}))
    scn = load_scenario(path)
    assert scn.n_panels == 48
    oracle = place_panels(48, ROOM)
    for got, want in zip(scn.panels, oracle):
        assert np.allclose(got.position, want.position, atol=1e-9)


def test_load_scenario_unknown_key_rejected(tmp_path):
    path = tmp_path / "unk.json"
    path.write_text(json.dumps({"roomz": {}}))
    with pytest.raises(ConfigError, match="roomz"):
        load_scenario(path)
    path.write_text(json.dumps({"radio": {"carrier_ghz": 28}}))
    with pytest.raises(ConfigError, match="carrier_ghz"):
        load_scenario(path)


def test_scenario_round_trip(tmp_path):
    scn = default_scenario(j=6, n_steps=50)
    path = tmp_path / "scn.json"
    save_scenario(scn, path)
    back = load_scenario(path)
    assert back.n_panels == scn.n_panels
    assert np.array_equal(back.positions, scn.positions)
    assert np.array_equal(back.velocities, scn.velocities)
    for a, b in zip(back.panels, scn.panels):
        assert np.array_equal(a.position, b.position)
        assert a.orientation_rad == b.orientation_rad
    assert back.radio == scn.radio
    assert back.dt_s == scn.dt_s
    for wa, wb in zip(back.walls, scn.walls):
        assert np.array_equal(wa.a, wb.a) and np.array_equal(wa.b, wb.b)
        assert wa.reflective == wb.reflective


def test_scenario_rejects_inconsistent_track():
    scn = default_scenario(j=2, n_steps=20)
    bad_vel = scn.velocities.copy()
    bad_vel[3] += 30.0
    with pytest.raises(ConfigError, match="near-constant-velocity"):
        Scenario(scn.room, scn.interior, scn.panels, scn.positions, bad_vel, scn.dt_s, scn.radio)


def test_radioconfig_validation():
    with pytest.raises(ConfigError):
        RadioConfig(array_side=0)
    with pytest.raises(ConfigError):
        RadioConfig(carrier_hz=-1)
