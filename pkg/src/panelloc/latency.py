"""Parametric per-timestep latency model for the daisy chain.

Per-panel compute cost is affine in the particle count and linear in the
number of association branches (measurements plus the miss branch); link cost
follows the wire-format payload size.  Anchor prediction overlaps the next
step at each panel and is therefore excluded from the critical path.  The
default coefficient profile is illustrative and fully overridable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

MESSAGE_HEADER_BYTES = 16
MESSAGE_RECORD_BYTES = 20
MESSAGE_CRC_BYTES = 4


def message_bytes(n_particles: int) -> int:
    """Wire size of one agent message: header + 20 bytes/particle + CRC."""
    return MESSAGE_HEADER_BYTES + MESSAGE_RECORD_BYTES * n_particles + MESSAGE_CRC_BYTES


@dataclass(frozen=True)
class LatencyParams:
    clock_hz: float = 250e6
    cycles_predict_per_particle: float = 4.0
    cycles_update_per_particle_per_meas: float = 12.0
    cycles_resample_per_particle: float = 6.0
    cycles_fixed_per_panel: float = 1e4
    link_bits_per_s: float = 10e9
    link_fixed_s: float = 2e-6

    def __post_init__(self):
        if self.clock_hz <= 0:
            raise ValueError("clock_hz must be positive")
        for name in (
            "cycles_predict_per_particle",
            "cycles_update_per_particle_per_meas",
            "cycles_resample_per_particle",
            "cycles_fixed_per_panel",
            "link_bits_per_s",
            "link_fixed_s",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @classmethod
    def from_json(cls, path) -> "LatencyParams":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class LatencyReport:
    panel_seconds: tuple[float, ...]
    link_seconds: tuple[float, ...]

    @property
    def total_seconds(self) -> float:
        return sum(self.panel_seconds) + sum(self.link_seconds)


def panel_latency(n_particles: int, n_meas: int, params: LatencyParams) -> float:
    """Critical-path compute time of one panel for one timestep."""
    cycles = (
        params.cycles_fixed_per_panel
        + n_particles * (params.cycles_predict_per_particle + params.cycles_resample_per_particle)
        + n_particles * (n_meas + 1) * params.cycles_update_per_particle_per_meas
    )
    return cycles / params.clock_hz


def link_latency(n_particles: int, params: LatencyParams) -> float:
    """Serialization time of one agent message plus the fixed link overhead."""
    if params.link_bits_per_s <= 0:
        raise ValueError("link_bits_per_s must be positive")
    bits = 8.0 * (MESSAGE_RECORD_BYTES * n_particles + MESSAGE_HEADER_BYTES + MESSAGE_CRC_BYTES)
    return bits / params.link_bits_per_s + params.link_fixed_s


def chain_latency(
    j: int, n_meas_per_panel: Sequence[int], n_particles: int, params: LatencyParams
) -> LatencyReport:
    """Per-timestep chain latency: all panels in series plus J-1 hops and one loopback."""
    if len(n_meas_per_panel) != j:
        raise ValueError("n_meas_per_panel must have one entry per panel")
    panels = tuple(panel_latency(n_particles, m, params) for m in n_meas_per_panel)
    links = tuple(link_latency(n_particles, params) for _ in range(j))
    return LatencyReport(panel_seconds=panels, link_seconds=links)
