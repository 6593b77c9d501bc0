"""Monte-Carlo evaluation: repeated runs, RMSE statistics, parameter sweeps.

Runs are keyed by (seed, run index) so executing them concurrently or
serially gives byte-identical output; a run is flagged divergent when its
final-step position error exceeds 5 m.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .chain import RunSetup, TrackResult, run_track_inprocess
from .latency import LatencyParams, chain_latency
from .measurement import ClutterParams, NoiseModel
from .scenario import Scenario
from .spa import MotionModel, SpaConfig

log = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD_M = 5.0
DEFAULT_N_RUNS = 20

# stock evaluation grids
GRID_J = (2, 4, 8, 12, 24, 48)
GRID_N_A = (25, 49, 100, 144, 289)
GRID_N_P = (2048, 4096, 8192, 16384)
GRID_B_W = (40e6, 400e6)


@dataclass
class RunResult:
    """One Monte-Carlo run: truth, estimates and per-anchor existence tracks."""

    run_id: int
    truth: np.ndarray  # (n_steps, 2)
    estimates: np.ndarray  # (n_steps, 4)
    anchor_ids: list[int]
    r_probs: np.ndarray  # (n_steps, n_anchors)
    m_counts: np.ndarray  # (n_steps, n_panels)
    estimate_lines: list[str] = field(default_factory=list)

    @property
    def errors(self) -> np.ndarray:
        return np.linalg.norm(self.estimates[:, :2] - self.truth, axis=1)

    @property
    def diverged(self) -> bool:
        return bool(self.errors[-1] > DIVERGENCE_THRESHOLD_M)


def _single_run(setup: RunSetup) -> RunResult:
    track: TrackResult = run_track_inprocess(setup)
    truth = setup.scenario.positions[: setup.n_steps]
    return RunResult(
        run_id=setup.run,
        truth=truth,
        estimates=track.estimates,
        anchor_ids=track.anchor_ids,
        r_probs=track.r_probs,
        m_counts=track.m_counts,
        estimate_lines=track.estimate_lines,
    )


def run_monte_carlo(
    scn: Scenario,
    cfg: SpaConfig,
    n_runs: int = DEFAULT_N_RUNS,
    seed: int = 0,
    clutter: Optional[ClutterParams] = None,
    noise: Optional[NoiseModel] = None,
    motion: Optional[MotionModel] = None,
    n_steps: Optional[int] = None,
    workers: int = 1,
) -> list[RunResult]:
    """Independent runs with streams keyed (seed, run); deterministic."""
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    setups = [
        RunSetup(
            scenario=scn,
            spa_cfg=cfg,
            clutter=clutter or ClutterParams(),
            noise=noise,
            motion=motion,
            seed=seed,
            run=r,
            n_steps=n_steps,
        )
        for r in range(n_runs)
    ]
    if workers <= 1:
        results = [_single_run(s) for s in setups]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_single_run, setups))
    results.sort(key=lambda r: r.run_id)
    return results


def rmse_over_time(results: Sequence[RunResult]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-timestep RMSE plus the 80% band ([10%, 90%] sample quantiles)."""
    if not results:
        raise ValueError("need at least one run result")
    errs = np.stack([r.errors for r in results])  # (runs, steps)
    rmse = np.sqrt(np.mean(errs * errs, axis=0))
    q10 = np.quantile(errs, 0.10, axis=0)
    q90 = np.quantile(errs, 0.90, axis=0)
    return rmse, q10, q90


def rmse_scalar(results: Sequence[RunResult]) -> float:
    """Root mean square over the pooled (run x timestep) error samples."""
    if not results:
        raise ValueError("need at least one run result")
    errs = np.concatenate([r.errors for r in results])
    return float(np.sqrt(np.mean(errs * errs)))


def pooled_quantiles(results: Sequence[RunResult], qs=(0.10, 0.90)) -> tuple[float, ...]:
    errs = np.concatenate([r.errors for r in results])
    return tuple(float(np.quantile(errs, q)) for q in qs)


def mean_chain_latency(results: Sequence[RunResult], n_particles: int, params: LatencyParams) -> float:
    """Average modelled per-timestep chain latency over all runs and steps."""
    totals = []
    for r in results:
        for counts in r.m_counts:
            totals.append(chain_latency(len(counts), list(counts), n_particles, params).total_seconds)
    return float(np.mean(totals))


@dataclass(frozen=True)
class SweepSpec:
    """Cross-product evaluation grid; defaults mirror the stock configurations."""

    j_grid: tuple[int, ...] = GRID_J
    n_a_grid: tuple[int, ...] = GRID_N_A
    n_p_grid: tuple[int, ...] = GRID_N_P
    b_w_grid: tuple[float, ...] = GRID_B_W
    modes: tuple[str, ...] = ("los",)
    n_runs: int = DEFAULT_N_RUNS
    seed: int = 0
    n_steps: Optional[int] = None

    def __post_init__(self):
        for name in ("j_grid", "n_a_grid", "n_p_grid", "b_w_grid", "modes"):
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must be nonempty")
        for n_a in self.n_a_grid:
            if int(math.isqrt(n_a)) ** 2 != n_a:
                raise ValueError(f"array size {n_a} is not a perfect square")

    @classmethod
    def from_json(cls, path) -> "SweepSpec":
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
        kwargs = {}
        for key, attr in [
            ("J", "j_grid"),
            ("N_a", "n_a_grid"),
            ("N_p", "n_p_grid"),
            ("B_w", "b_w_grid"),
            ("mode", "modes"),
        ]:
            if key in cfg:
                kwargs[attr] = tuple(cfg.pop(key))
        for key in ("n_runs", "seed", "n_steps"):
            if key in cfg:
                kwargs[key] = cfg.pop(key)
        if cfg:
            raise ValueError(f"sweep spec: unknown key(s) {sorted(cfg)}")
        return cls(**kwargs)


SWEEP_COLUMNS = ["J", "N_a", "N_p", "B_w", "mode", "rmse", "q10", "q90", "diverged_count", "mean_chain_latency_s", "status"]


def run_sweep(
    spec: SweepSpec,
    scenario_factory=None,
    latency_params: Optional[LatencyParams] = None,
    workers: int = 1,
) -> list[dict]:
    """Evaluate every grid point; per-point failures become error rows."""
    from .scenario import RadioConfig, default_scenario

    latency_params = latency_params or LatencyParams()
    rows = []
    for mode in spec.modes:
        for b_w in spec.b_w_grid:
            for n_a in spec.n_a_grid:
                for j in spec.j_grid:
                    for n_p in spec.n_p_grid:
                        row = {
                            "J": j,
                            "N_a": n_a,
                            "N_p": n_p,
                            "B_w": b_w,
                            "mode": mode,
                            "rmse": "",
                            "q10": "",
                            "q90": "",
                            "diverged_count": "",
                            "mean_chain_latency_s": "",
                            "status": "ok",
                        }
                        try:
                            if scenario_factory is not None:
                                scn = scenario_factory(j=j, n_a=n_a, b_w=b_w)
                            else:
                                scn = default_scenario(
                                    j=j,
                                    radio=RadioConfig(bandwidth_hz=b_w, array_side=int(math.isqrt(n_a))),
                                )
                            cfg = SpaConfig(n_particles=n_p, mode=mode)
                            results = run_monte_carlo(
                                scn, cfg, n_runs=spec.n_runs, seed=spec.seed, n_steps=spec.n_steps, workers=workers
                            )
                            q10, q90 = pooled_quantiles(results)
                            row.update(
                                rmse=repr(rmse_scalar(results)),
                                q10=repr(q10),
                                q90=repr(q90),
                                diverged_count=sum(r.diverged for r in results),
                                mean_chain_latency_s=repr(mean_chain_latency(results, n_p, latency_params)),
                            )
                        except Exception as e:  # noqa: BLE001 - sweep must continue
                            log.warning("sweep point %s failed: %s", row, e)
                            row["status"] = f"error: {e.__class__.__name__}"
                        rows.append(row)
    return rows


def write_sweep_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


TIMESERIES_COLUMNS = ["run", "time", "true_x", "true_y", "est_x", "est_y", "error_m"]


def write_timeseries_csv(results: Sequence[RunResult], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMESERIES_COLUMNS)
        for r in results:
            errs = r.errors
            for n in range(r.truth.shape[0]):
                writer.writerow(
                    [
                        r.run_id,
                        n,
                        repr(float(r.truth[n, 0])),
                        repr(float(r.truth[n, 1])),
                        repr(float(r.estimates[n, 0])),
                        repr(float(r.estimates[n, 1])),
                        repr(float(errs[n])),
                    ]
                )


RMSE_TIME_COLUMNS = ["time", "rmse", "q10", "q90"]


def write_rmse_time_csv(results: Sequence[RunResult], path) -> None:
    rmse, q10, q90 = rmse_over_time(results)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RMSE_TIME_COLUMNS)
        for n in range(rmse.shape[0]):
            writer.writerow([n, repr(float(rmse[n])), repr(float(q10[n])), repr(float(q90[n]))])
