"""Statistical measurement model and synthetic measurement generation.

A measurement is a (distance, angle-of-arrival, normalized amplitude) triple;
the amplitude is the square root of the component SNR.  Noise scales follow
the standard flat-spectrum / array-aperture Fisher-information expressions,
detection is amplitude-thresholded with a Rician model, and clutter is
Poisson-distributed with truncated-Rayleigh amplitudes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import scipy.special as sc
from scipy.interpolate import PchipInterpolator
from scipy.stats import rice

from .geometry import aoa_at_panel, los_visible, single_bounce_path, wrap_angle
from .rng import Purpose, StreamFactory
from .scenario import SPEED_OF_LIGHT, RadioConfig, Scenario

_SQRT2 = math.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
PD_CLAMP = 0.999


@dataclass(frozen=True)
class Measurement:
    d: float  # meters
    aoa: float  # radians, panel frame, (-pi, pi]
    u: float  # normalized amplitude, >= detection threshold


@dataclass
class MeasurementSet:
    """All detected path parameters at one panel and one time step.

    ``kinds`` is debug-only truth tagging ("los" / "bounce" / "fa") aligned
    with ``items``; inference code must not look at it.
    """

    panel_id: int
    time_index: int
    items: list[Measurement]
    kinds: Optional[list[str]] = None

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class ClutterParams:
    mu_fa: float = 1.0  # mean false alarms per panel per step
    d_max: float = 50.0  # clutter range support, meters
    u_th: float = 1.5  # amplitude detection threshold

    def __post_init__(self):
        if self.mu_fa < 0:
            raise ValueError("mu_fa must be nonnegative")
        if self.d_max <= 0 or self.u_th <= 0:
            raise ValueError("d_max and u_th must be positive")


@dataclass(frozen=True)
class NoiseModel:
    radio: RadioConfig
    reflection_loss_db: float = 6.0
    aoa_floor: float = 0.1  # lower bound on the incidence cosine factor

    def __post_init__(self):
        if self.reflection_loss_db < 0:
            raise ValueError("reflection_loss_db must be nonnegative")


def path_amplitude(d: float, is_reflection: bool, radio: RadioConfig, loss_db: float = 6.0):
    """Normalized amplitude sqrt(SNR) of a path of length ``d``.

    Free-space 20 log10(d) decay from the 1 m per-element reference, coherent
    array gain 10 log10(N_a), minus ``loss_db`` for reflected paths.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("path length must be positive")
    snr_db = radio.snr_ref_db + 10.0 * np.log10(radio.n_elements) - 20.0 * np.log10(d)
    if is_reflection:
        snr_db = snr_db - loss_db
    out = np.sqrt(10.0 ** (snr_db / 10.0))
    return float(out) if np.ndim(d) == 0 else out


def range_std(u, bandwidth_hz: float):
    """Range error std from the flat-spectrum delay CRLB: sqrt(3/2) c / (pi B u)."""
    u = np.asarray(u, dtype=float)
    out = math.sqrt(1.5) * SPEED_OF_LIGHT / (math.pi * bandwidth_hz * u)
    return float(out) if np.ndim(u) == 0 else out


def _rms_aperture(radio: RadioConfig) -> float:
    """Root-sum-square horizontal element offset of one M-element row."""
    m = radio.array_side
    return radio.element_spacing_m * math.sqrt(m * (m * m - 1) / 12.0)


def aoa_std(u, radio: RadioConfig, incidence, floor: float = 0.1):
    """AoA error std from the array-aperture CRLB with a floored cosine factor.

    A side-1 array carries no angular information; the std is infinite then.
    """
    u = np.asarray(u, dtype=float)
    a = _rms_aperture(radio)
    if a == 0.0:
        out = np.full_like(u, np.inf)
        return float(out) if np.ndim(u) == 0 else out
    cosf = np.maximum(np.abs(np.cos(np.asarray(incidence, dtype=float))), floor)
    out = radio.wavelength / (2.0 * _SQRT2 * math.pi * u * cosf * a)
    return float(out) if np.ndim(u) == 0 and np.ndim(incidence) == 0 else out


def marcum_q1(a, b):
    """First-order Marcum Q function Q1(a, b), absolute error below 1e-9.

    Evaluated as a Poisson-weighted sum of regularized upper incomplete gamma
    terms.  Valid for 0 <= a, b <= 50.
    """
    a_arr = np.asarray(a, dtype=float)
    b_arr = np.asarray(b, dtype=float)
    if np.any(a_arr < 0) or np.any(b_arr < 0) or np.any(a_arr > 50) or np.any(b_arr > 50):
        raise ValueError("marcum_q1 requires 0 <= a, b <= 50")
    scalar = a_arr.ndim == 0 and b_arr.ndim == 0
    a_f, b_f = np.broadcast_arrays(np.atleast_1d(a_arr), np.atleast_1d(b_arr))
    x = a_f.ravel() ** 2 / 2.0
    y = b_f.ravel() ** 2 / 2.0
    kmax = int(np.max(x) + 10.0 * math.sqrt(max(np.max(x), 1.0)) + 30.0)
    k = np.arange(kmax + 1)
    out = np.empty_like(x)
    # group by distinct y so the gamma tail row is shared
    for yv in np.unique(y):
        rows = y == yv
        gtail = sc.gammaincc(k + 1, yv)
        xs = x[rows]
        with np.errstate(divide="ignore", invalid="ignore"):
            logp = k[None, :] * np.log(xs[:, None]) - xs[:, None] - sc.gammaln(k + 1)[None, :]
        logp[xs == 0, :] = -np.inf
        logp[xs == 0, 0] = 0.0
        out[rows] = np.exp(logp) @ gtail
    out = np.clip(out, 0.0, 1.0).reshape(a_f.shape)
    return float(out.ravel()[0]) if scalar else out


@lru_cache(maxsize=8)
def _tail_table(u_th: float) -> PchipInterpolator:
    """Monotone interpolant of the Rician tail mass Q1(sqrt2 u, sqrt2 u_th) over u."""
    hi = u_th + 12.0
    grid = np.linspace(0.0, hi, 4097)
    vals = marcum_q1(_SQRT2 * grid, _SQRT2 * u_th)
    return PchipInterpolator(grid, vals, extrapolate=False)


def los_tail_mass(u, u_th: float):
    """P(measured amplitude >= u_th | path amplitude u), unclamped."""
    u_arr = np.asarray(u, dtype=float)
    table = _tail_table(float(u_th))
    hi = u_th + 12.0  # beyond this the tail mass is 1 to within float precision
    if u_arr.ndim == 0:
        v = float(table(float(u_arr))) if float(u_arr) < hi else 1.0
        return min(max(v, 0.0), 1.0)
    vals = np.ones_like(u_arr)
    m = u_arr < hi
    vals[m] = np.clip(table(u_arr[m]), 0.0, 1.0)
    return vals


def detection_prob(u, u_th: float):
    """Detection probability of a path with amplitude ``u``, clamped at 0.999."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr < 0):
        raise ValueError("amplitude must be nonnegative")
    out = np.minimum(los_tail_mass(u_arr, u_th), PD_CLAMP)
    return float(out) if np.ndim(u) == 0 else out


def log_amplitude_likelihood(z_u, u, u_th: float):
    """Log density of a detected amplitude ``z_u`` given path amplitude ``u``.

    Truncated Rician with unit per-component noise variance, renormalized over
    [u_th, inf).  Broadcasts over its inputs.
    """
    z = np.asarray(z_u, dtype=float)
    uu = np.asarray(u, dtype=float)
    log_tail = np.log(los_tail_mass(uu, u_th))
    arg = 2.0 * uu * z
    return math.log(2.0) + np.log(z) - (z - uu) ** 2 + np.log(sc.i0e(arg)) - log_tail


def amplitude_likelihood(z_u: float, u: float, u_th: float) -> float:
    if np.any(np.asarray(z_u) < u_th):
        raise ValueError("amplitude below the detection threshold")
    out = np.exp(log_amplitude_likelihood(z_u, u, u_th))
    return float(out) if np.ndim(z_u) == 0 and np.ndim(u) == 0 else out


def fa_amplitude_density(z_u, u_th: float):
    """Truncated unit-noise Rayleigh density of false-alarm amplitudes."""
    z = np.asarray(z_u, dtype=float)
    if np.any(z < u_th):
        raise ValueError("amplitude below the detection threshold")
    out = 2.0 * z * np.exp(-(z * z - u_th * u_th))
    return float(out) if np.ndim(z_u) == 0 else out


def log_fa_amplitude_density(z_u, u_th: float):
    z = np.asarray(z_u, dtype=float)
    return math.log(2.0) + np.log(z) - (z * z - u_th * u_th)


def _draw_truncated_rician(gen: np.random.Generator, u: float, u_th: float) -> float:
    """Inverse-CDF draw of a Rician amplitude conditioned on exceeding u_th."""
    b = _SQRT2 * u
    scale = 1.0 / _SQRT2
    q0 = rice.cdf(u_th, b, scale=scale) if u > 0 else 1.0 - math.exp(-(u_th * u_th))
    q = q0 + gen.random() * (1.0 - q0)
    q = min(q, 1.0 - 1e-16)
    z = float(rice.ppf(q, b, scale=scale))
    return max(z, u_th)


def _draw_truncated_rayleigh(gen: np.random.Generator, u_th: float) -> float:
    return math.sqrt(u_th * u_th - math.log(1.0 - gen.random()))


class _TruePath(object):
    __slots__ = ("kind", "d", "aoa", "u")

    def __init__(self, kind, d, aoa, u):
        self.kind, self.d, self.aoa, self.u = kind, d, aoa, u


def true_paths(scn: Scenario, n: int, panel_id: int, noise: NoiseModel) -> list[_TruePath]:
    """Geometric truth at time ``n`` for one panel: visible LoS and bounce paths."""
    panel = scn.panels[panel_id - 1]
    agent = scn.positions[n]
    paths = []
    if los_visible(agent, panel.position, scn.walls):
        d = float(np.linalg.norm(agent - panel.position))
        aoa = aoa_at_panel(panel.position, panel.orientation_rad, agent)
        paths.append(_TruePath("los", d, aoa, path_amplitude(d, False, scn.radio, noise.reflection_loss_db)))
    for w in scn.walls:
        if not w.reflective:
            continue
        bp = single_bounce_path(agent, panel.position, w, scn.walls)
        if bp is None:
            continue
        aoa = aoa_at_panel(panel.position, panel.orientation_rad, bp.reflection_point)
        paths.append(
            _TruePath("bounce", bp.distance, aoa, path_amplitude(bp.distance, True, scn.radio, noise.reflection_loss_db))
        )
    return paths


def synthesize_panel(
    scn: Scenario,
    n: int,
    panel_id: int,
    gen: np.random.Generator,
    clutter: ClutterParams,
    noise: NoiseModel,
    noise_free: bool = False,
) -> MeasurementSet:
    """Synthesize one panel's measurement set for time step ``n``.

    Visible true paths are detected with probability p_d(u), perturbed by
    Fisher-information noise and given truncated-Rician amplitudes; Poisson
    false alarms are appended; item order is shuffled.  With ``noise_free``
    detection is certain, parameters are exact and no clutter is added.
    """
    items: list[Measurement] = []
    kinds: list[str] = []
    for path in true_paths(scn, n, panel_id, noise):
        if noise_free:
            items.append(Measurement(path.d, path.aoa, path.u))
            kinds.append(path.kind)
            continue
        if gen.random() >= detection_prob(path.u, clutter.u_th):
            continue
        sd = range_std(path.u, scn.radio.bandwidth_hz)
        sphi = aoa_std(path.u, scn.radio, path.aoa, noise.aoa_floor)
        d = max(path.d + gen.normal(0.0, sd), 0.0)
        if math.isfinite(sphi):
            aoa = wrap_angle(path.aoa + gen.normal(0.0, sphi))
        else:
            aoa = wrap_angle(gen.uniform(-math.pi, math.pi))
        z_u = _draw_truncated_rician(gen, path.u, clutter.u_th)
        items.append(Measurement(d, aoa, z_u))
        kinds.append(path.kind)
    if not noise_free:
        for _ in range(gen.poisson(clutter.mu_fa)):
            items.append(
                Measurement(
                    gen.uniform(0.0, clutter.d_max),
                    gen.uniform(-math.pi / 2.0, math.pi / 2.0),
                    _draw_truncated_rayleigh(gen, clutter.u_th),
                )
            )
            kinds.append("fa")
        order = gen.permutation(len(items))
        items = [items[i] for i in order]
        kinds = [kinds[i] for i in order]
    return MeasurementSet(panel_id=panel_id, time_index=n, items=items, kinds=kinds)


def synthesize_timestep(
    scn: Scenario,
    n: int,
    streams: StreamFactory,
    clutter: ClutterParams,
    noise: NoiseModel,
    noise_free: bool = False,
) -> list[MeasurementSet]:
    """Measurement sets for all panels at time ``n``; deterministic per (seed, run, n, panel)."""
    if not 0 <= n < scn.n_steps:
        raise ValueError(f"time index {n} outside the trajectory")
    return [
        synthesize_panel(scn, n, j, streams.get(n, j, Purpose.MEASUREMENT), clutter, noise, noise_free)
        for j in range(1, scn.n_panels + 1)
    ]


def dump_measurements(path, rows: Sequence[tuple[int, MeasurementSet]]) -> None:
    """Write a debug CSV of (run, measurement set) pairs with truth tags."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run", "time", "panel", "kind", "d", "aoa", "u"])
        for run, ms in rows:
            kinds = ms.kinds or ["?"] * len(ms.items)
            for item, kind in zip(ms.items, kinds):
                writer.writerow([run, ms.time_index, ms.panel_id, kind, repr(item.d), repr(item.aoa), repr(item.u)])
