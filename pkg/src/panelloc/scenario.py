"""Scene construction: room, panel placement, agent trajectory, config files.

The default scene is a 30 x 30 m room bounded by four reflective outer walls
with two non-reflective interior walls, panels evenly distributed along the
outer walls, and a rectangular-loop trajectory that passes through the
corridor between the interior walls so that line-of-sight conditions vary
over time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .geometry import Wall, point_on_wall

SPEED_OF_LIGHT = 299_792_458.0

DEFAULT_CARRIER_HZ = 28e9
DEFAULT_BANDWIDTH_HZ = 400e6
DEFAULT_ARRAY_SIDE = 5
DEFAULT_SNR_REF_DB = 30.0
DEFAULT_N_STEPS = 526
DEFAULT_DT_S = 0.1
DEFAULT_PANEL_COUNT = 24
DEFAULT_ROOM_SIZE = 30.0
# Interior walls are a declared default (the floor plan they stand in for
# gives no coordinates); they create time-varying occlusion along the loop.
DEFAULT_INTERIOR = (((10.0, 10.0), (20.0, 10.0)), ((10.0, 20.0), (20.0, 20.0)))
DEFAULT_WAYPOINTS = ((5.0, 15.0), (25.0, 15.0), (25.0, 25.0), (5.0, 25.0))


@dataclass(frozen=True)
class RadioConfig:
    """Radio front-end parameters shared by all panels."""

    carrier_hz: float = DEFAULT_CARRIER_HZ
    bandwidth_hz: float = DEFAULT_BANDWIDTH_HZ
    array_side: int = DEFAULT_ARRAY_SIDE
    element_spacing_m: Optional[float] = None  # defaults to quarter wavelength
    snr_ref_db: float = DEFAULT_SNR_REF_DB  # per-element SNR at 1 m, dB

    def __post_init__(self):
        if self.carrier_hz <= 0:
            raise ConfigError("radio.carrier_hz must be positive")
        if self.bandwidth_hz <= 0:
            raise ConfigError("radio.bandwidth_hz must be positive")
        if int(self.array_side) < 1:
            raise ConfigError("radio.array_side must be >= 1")
        object.__setattr__(self, "array_side", int(self.array_side))
        if self.element_spacing_m is None:
            object.__setattr__(self, "element_spacing_m", self.wavelength / 4.0)
        elif self.element_spacing_m <= 0:
            raise ConfigError("radio.element_spacing_m must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def n_elements(self) -> int:
        return self.array_side * self.array_side


@dataclass(frozen=True)
class Panel:
    position: np.ndarray
    orientation_rad: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        object.__setattr__(self, "orientation_rad", float(self.orientation_rad))


@dataclass(frozen=True)
class Scenario:
    """Immutable scene: walls, panels and the ground-truth agent track."""

    room: tuple[Wall, ...]
    interior: tuple[Wall, ...]
    panels: tuple[Panel, ...]
    positions: np.ndarray  # (n_steps, 2) true agent positions
    velocities: np.ndarray  # (n_steps, 2) true agent velocities
    dt_s: float
    radio: RadioConfig

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        vel = np.asarray(self.velocities, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape != vel.shape:
            raise ConfigError("trajectory positions/velocities must be matching (n, 2) arrays")
        if pos.shape[0] < 1:
            raise ConfigError("trajectory must contain at least one step")
        if len(self.panels) < 1:
            raise ConfigError("panels must contain at least one panel")
        if self.dt_s <= 0:
            raise ConfigError("dt_s must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)
        object.__setattr__(self, "room", tuple(self.room))
        object.__setattr__(self, "interior", tuple(self.interior))
        object.__setattr__(self, "panels", tuple(self.panels))
        # near-constant-velocity sanity bound on consecutive samples
        if pos.shape[0] > 1:
            gap = pos[1:] - pos[:-1] - vel[:-1] * self.dt_s
            worst = float(np.max(np.linalg.norm(gap, axis=1)))
            if worst > 0.5:
                raise ConfigError(f"trajectory is not near-constant-velocity (max residual {worst:.3f} m)")

    @property
    def walls(self) -> tuple[Wall, ...]:
        return self.room + self.interior

    @property
    def n_steps(self) -> int:
        return self.positions.shape[0]

    @property
    def n_panels(self) -> int:
        return len(self.panels)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        xs = [w.a[0] for w in self.room] + [w.b[0] for w in self.room]
        ys = [w.a[1] for w in self.room] + [w.b[1] for w in self.room]
        return min(xs), min(ys), max(xs), max(ys)


def room_walls(width: float, height: float) -> tuple[Wall, ...]:
    """Four reflective outer walls of an axis-aligned room anchored at the origin."""
    if width <= 0 or height <= 0:
        raise ConfigError("room.width and room.height must be positive")
    c = [(0.0, 0.0), (width, 0.0), (width, height), (0.0, height)]
    return tuple(Wall(c[i], c[(i + 1) % 4], reflective=True) for i in range(4))


def _perimeter_point(s: float, rect: tuple[float, float, float, float]) -> tuple[np.ndarray, float]:
    """Point and inward-facing orientation at clockwise arc length ``s`` from the upper-left corner."""
    x0, y0, x1, y1 = rect
    w, h = x1 - x0, y1 - y0
    s = s % (2.0 * (w + h))
    if s < w:  # top wall, heading right
        return np.array([x0 + s, y1]), -math.pi / 2.0
    s -= w
    if s < h:  # right wall, heading down
        return np.array([x1, y1 - s]), math.pi
    s -= h
    if s < w:  # bottom wall, heading left
        return np.array([x1 - s, y0]), math.pi / 2.0
    s -= w
    return np.array([x0, y0 + s]), 0.0  # left wall, heading up


def place_panels(j: int, room: tuple[float, float, float, float]) -> list[Panel]:
    """Place ``j`` inward-facing panels evenly along the room perimeter.

    Slots are spaced by equal arc length with a symmetric half-slot offset so
    that a single panel sits at the upper-left perimeter start and four panels
    sit at the wall centers.  j=2 is special-cased to the upper-left and
    upper-right corners.
    """
    if j <= 0:
        raise ValueError("panel count must be positive")
    if j > 64:
        raise ValueError("panel count must be at most 64")
    x0, y0, x1, y1 = room
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    if j == 2:
        corners = [np.array([x0, y1]), np.array([x1, y1])]
        return [Panel(c, math.atan2(cy - c[1], cx - c[0])) for c in corners]
    L = 2.0 * ((x1 - x0) + (y1 - y0))
    out = []
    for k in range(j):
        s = ((k + 0.5) * L / j - L / 2.0) % L
        pos, orient = _perimeter_point(s, room)
        corner = (abs(pos[0] - x0) < 1e-9 or abs(pos[0] - x1) < 1e-9) and (
            abs(pos[1] - y0) < 1e-9 or abs(pos[1] - y1) < 1e-9
        )
        if corner:
            orient = math.atan2(cy - pos[1], cx - pos[0])
        out.append((s, Panel(pos, orient)))
    out.sort(key=lambda t: t[0])
    return [p for _, p in out]


def _validate_waypoints(waypoints: np.ndarray, room: Optional[tuple[float, float, float, float]], walls: Sequence[Wall]):
    if room is None:
        return
    x0, y0, x1, y1 = room
    for i, p in enumerate(waypoints):
        if not (x0 < p[0] < x1 and y0 < p[1] < y1):
            raise ValueError(f"waypoint {i} at ({p[0]}, {p[1]}) lies outside the room")
        for w in walls:
            if point_on_wall(p, w, tol=1e-9):
                raise ValueError(f"waypoint {i} at ({p[0]}, {p[1]}) lies on a wall")


def gen_trajectory(
    waypoints,
    speed: float,
    dt: float,
    n_steps: int,
    room: Optional[tuple[float, float, float, float]] = None,
    walls: Sequence[Wall] = (),
) -> tuple[np.ndarray, np.ndarray]:
    """Sample a constant-speed track along the cyclic waypoint polyline.

    Returns (positions, velocities), each (n_steps, 2).  Velocities are the
    forward finite difference of positions (the final entry repeats its
    predecessor).  Tracks longer than one lap wrap around the waypoint cycle.
    """
    pts = np.asarray(waypoints, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
        raise ValueError("need at least two 2-D waypoints")
    if speed <= 0:
        raise ValueError("speed must be positive")
    if dt <= 0 or n_steps < 1:
        raise ValueError("dt must be positive and n_steps >= 1")
    _validate_waypoints(pts, room, walls)
    if np.allclose(pts[0], pts[-1]):
        cyc = pts
    else:
        cyc = np.vstack([pts, pts[0]])
    seg = np.diff(cyc, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    keep = seg_len > 1e-12
    seg, seg_len = seg[keep], seg_len[keep]
    starts = cyc[:-1][keep]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    s = np.mod(np.arange(n_steps) * speed * dt, total)
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg_len) - 1)
    frac = (s - cum[idx]) / seg_len[idx]
    positions = starts[idx] + seg[idx] * frac[:, None]
    velocities = np.empty_like(positions)
    if n_steps > 1:
        velocities[:-1] = (positions[1:] - positions[:-1]) / dt
        velocities[-1] = velocities[-2]
    else:
        velocities[0] = seg[0] / seg_len[0] * speed
    return positions, velocities


def default_scenario(
    j: int = DEFAULT_PANEL_COUNT,
    n_steps: int = DEFAULT_N_STEPS,
    dt_s: float = DEFAULT_DT_S,
    radio: Optional[RadioConfig] = None,
    waypoints=DEFAULT_WAYPOINTS,
    speed: Optional[float] = None,
    interior=DEFAULT_INTERIOR,
) -> Scenario:
    """Build the default scene; with no arguments this reproduces the stock setup."""
    radio = radio or RadioConfig()
    room = room_walls(DEFAULT_ROOM_SIZE, DEFAULT_ROOM_SIZE)
    rect = (0.0, 0.0, DEFAULT_ROOM_SIZE, DEFAULT_ROOM_SIZE)
    interior_walls = tuple(Wall(a, b, reflective=False) for a, b in interior)
    if speed is None:
        pts = np.asarray(waypoints, dtype=float)
        cyc = np.vstack([pts, pts[0]])
        lap = float(np.sum(np.linalg.norm(np.diff(cyc, axis=0), axis=1)))
        speed = lap / (n_steps * dt_s)  # one full lap over the run
    positions, velocities = gen_trajectory(
        waypoints, speed, dt_s, n_steps, room=rect, walls=room + interior_walls
    )
    return Scenario(
        room=room,
        interior=interior_walls,
        panels=tuple(place_panels(j, rect)),
        positions=positions,
        velocities=velocities,
        dt_s=dt_s,
        radio=radio,
    )


_TOP_KEYS = {"room", "interior_walls", "panels", "trajectory", "dt_s", "radio"}
_RADIO_KEYS = {"carrier_hz", "bandwidth_hz", "array_side", "element_spacing_m", "snr_ref_db"}


def _reject_unknown(d: dict, allowed: set, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")


def scenario_from_dict(cfg: dict) -> Scenario:
    if not isinstance(cfg, dict):
        raise ConfigError("scenario config must be a JSON object")
    _reject_unknown(cfg, _TOP_KEYS, "scenario")

    room_cfg = cfg.get("room", {})
    _reject_unknown(room_cfg, {"width", "height"}, "room")
    width = float(room_cfg.get("width", DEFAULT_ROOM_SIZE))
    height = float(room_cfg.get("height", DEFAULT_ROOM_SIZE))
    room = room_walls(width, height)
    rect = (0.0, 0.0, width, height)

    if "interior_walls" in cfg:
        interior = []
        for i, wcfg in enumerate(cfg["interior_walls"]):
            _reject_unknown(wcfg, {"a", "b", "reflective"}, f"interior_walls[{i}]")
            try:
                interior.append(Wall(wcfg["a"], wcfg["b"], reflective=bool(wcfg.get("reflective", False))))
            except KeyError as e:
                raise ConfigError(f"interior_walls[{i}] missing key {e}") from None
        interior = tuple(interior)
    else:
        interior = tuple(Wall(a, b, reflective=False) for a, b in DEFAULT_INTERIOR)

    radio_cfg = cfg.get("radio", {})
    _reject_unknown(radio_cfg, _RADIO_KEYS, "radio")
    radio = RadioConfig(**radio_cfg)

    panels_cfg = cfg.get("panels", {"count": DEFAULT_PANEL_COUNT})
    if isinstance(panels_cfg, dict):
        _reject_unknown(panels_cfg, {"count"}, "panels")
        panels = tuple(place_panels(int(panels_cfg.get("count", DEFAULT_PANEL_COUNT)), rect))
    else:
        panels = []
        for i, pcfg in enumerate(panels_cfg):
            _reject_unknown(pcfg, {"position", "orientation_rad"}, f"panels[{i}]")
            try:
                panels.append(Panel(pcfg["position"], pcfg["orientation_rad"]))
            except KeyError as e:
                raise ConfigError(f"panels[{i}] missing key {e}") from None
        panels = tuple(panels)

    dt_s = float(cfg.get("dt_s", DEFAULT_DT_S))
    traj_cfg = cfg.get("trajectory", {})
    _reject_unknown(traj_cfg, {"waypoints", "speed_mps", "n_steps", "points"}, "trajectory")
    if "points" in traj_cfg:
        if set(traj_cfg) - {"points"}:
            raise ConfigError("trajectory: 'points' excludes waypoint keys")
        arr = np.asarray(traj_cfg["points"], dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ConfigError("trajectory.points must be rows of [x, y, vx, vy]")
        positions, velocities = arr[:, :2], arr[:, 2:]
    else:
        waypoints = traj_cfg.get("waypoints", DEFAULT_WAYPOINTS)
        n_steps = int(traj_cfg.get("n_steps", DEFAULT_N_STEPS))
        speed = traj_cfg.get("speed_mps")
        if speed is None:
            pts = np.asarray(waypoints, dtype=float)
            cyc = np.vstack([pts, pts[0]])
            lap = float(np.sum(np.linalg.norm(np.diff(cyc, axis=0), axis=1)))
            speed = lap / (n_steps * dt_s)
        try:
            positions, velocities = gen_trajectory(
                waypoints, float(speed), dt_s, n_steps, room=rect, walls=room + interior
            )
        except ValueError as e:
            raise ConfigError(f"trajectory: {e}") from None

    return Scenario(
        room=room,
        interior=interior,
        panels=panels,
        positions=positions,
        velocities=velocities,
        dt_s=dt_s,
        radio=radio,
    )


def load_scenario(path) -> Scenario:
    """Load and validate a scenario JSON file; an empty file means all defaults."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        cfg = {}
    else:
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"scenario file {path}: invalid JSON ({e})") from None
    return scenario_from_dict(cfg)


def scenario_to_dict(scn: Scenario) -> dict:
    """Full-fidelity dict (explicit panels and trajectory) for round-tripping."""
    x0, y0, x1, y1 = scn.bounds
    return {
        "room": {"width": x1 - x0, "height": y1 - y0},
        "interior_walls": [
            {"a": list(w.a), "b": list(w.b), "reflective": w.reflective} for w in scn.interior
        ],
        "panels": [
            {"position": list(p.position), "orientation_rad": p.orientation_rad} for p in scn.panels
        ],
        "trajectory": {"points": np.hstack([scn.positions, scn.velocities]).tolist()},
        "dt_s": scn.dt_s,
        "radio": {
            "carrier_hz": scn.radio.carrier_hz,
            "bandwidth_hz": scn.radio.bandwidth_hz,
            "array_side": scn.radio.array_side,
            "element_spacing_m": scn.radio.element_spacing_m,
            "snr_ref_db": scn.radio.snr_ref_db,
        },
    }


def save_scenario(scn: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scn), indent=2), encoding="utf-8")
