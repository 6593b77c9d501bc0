"""Deterministic random-stream derivation.

Every random draw in a simulation is taken from a generator keyed by
``(global_seed, run, time, panel, purpose)``.  Keyed derivation (rather than
one shared sequential stream) makes the in-process runner and a set of
independent socket nodes consume *identical* randomness, which is what the
transport-equivalence tests rely on.  It also makes Monte-Carlo runs safe to
execute concurrently.
"""

from __future__ import annotations

from enum import IntEnum

import numpy as np


class Purpose(IntEnum):
    """Stable stream identifiers; values are part of the determinism contract."""

    INIT = 0
    MEASUREMENT = 1
    AGENT_PREDICT = 2
    ANCHOR_PREDICT = 3
    HOP_JITTER = 4
    RESAMPLE = 5


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return an independent generator for an integer key path under ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key)))


class StreamFactory:
    """Mints per-(time, panel, purpose) generators for one (seed, run) pair."""

    def __init__(self, seed: int, run: int):
        self.seed = int(seed)
        self.run = int(run)

    def get(self, time_index: int, panel_id: int, purpose: Purpose) -> np.random.Generator:
        # time_index -1 is used for pre-first-step initialisation draws
        return stream(self.seed, self.run, time_index + 1, panel_id, int(purpose))
