"""Per-panel particle sum-product inference.

One panel's update works on a stacked state: agent particle i is paired with
amplitude particle i, so evaluating the probabilistic-data-association
likelihood once per (particle, measurement) pair gives both the agent
reweighting and the anchor (amplitude, existence) evidence at O(N (M+1))
cost.  Weights live in the log domain throughout; normalization is done with
a max shift.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .errors import DegeneracyError, ProtocolError
from .geometry import Wall, mirror_point, wrap_angle
from .measurement import (
    ClutterParams,
    MeasurementSet,
    NoiseModel,
    aoa_std,
    detection_prob,
    log_amplitude_likelihood,
    log_fa_amplitude_density,
    range_std,
)

log = logging.getLogger(__name__)

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
# Existence probabilities are kept strictly below one so the nonexistence
# branch always leaves a likelihood floor under every particle.
R_PROB_CAP = 0.999

# cumulative (particle, association-branch) evaluation count; diagnostic for
# the linear-complexity claim, approximate under concurrent use
LIKELIHOOD_EVALS = 0


class AgentState(NamedTuple):
    p: np.ndarray  # position, meters
    v: np.ndarray  # velocity, m/s


@dataclass
class ParticleCloud:
    """Weighted agent-state particles; the carrier of every chain message."""

    states: np.ndarray  # (n, 4) columns [x, y, vx, vy]
    log_weights: np.ndarray  # (n,)
    time_index: int = 0
    origin_panel: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != 4:
            raise ValueError("states must be (n, 4)")
        if self.log_weights.shape != (self.states.shape[0],):
            raise ValueError("log_weights must match the particle count")

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def normalized(self) -> "ParticleCloud":
        return replace(self, log_weights=_normalize_log(self.log_weights))


@dataclass
class AnchorBelief:
    """Amplitude particles plus LoS-existence probability for one anchor."""

    u_particles: np.ndarray  # (n,)
    log_weights: np.ndarray  # (n,)
    r_prob: float
    anchor_id: int
    anchor_pos: np.ndarray

    def __post_init__(self):
        self.u_particles = np.asarray(self.u_particles, dtype=float)
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        self.anchor_pos = np.asarray(self.anchor_pos, dtype=float).reshape(2)
        if self.u_particles.shape != self.log_weights.shape:
            raise ValueError("u_particles and log_weights must match")
        if not 0.0 <= self.r_prob <= 1.0:
            raise ValueError("r_prob must lie in [0, 1]")
        if np.any(self.u_particles < 0):
            raise ValueError("amplitude particles must be nonnegative")

    def u_hat(self) -> float:
        w = np.exp(_normalize_log(self.log_weights))
        return float(w @ self.u_particles)


@dataclass(frozen=True)
class AnchorSite:
    """Geometry of one anchor as seen from its panel.

    A physical anchor predicts range/bearing straight to the agent; a virtual
    anchor (mirror image across ``wall``) predicts the reflected-path length
    via its mirror position and the arrival bearing via the mirrored agent.
    """

    anchor_id: int
    panel_id: int
    position: np.ndarray
    panel_position: np.ndarray
    orientation_rad: float
    wall: Optional[Wall] = None

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        object.__setattr__(self, "panel_position", np.asarray(self.panel_position, dtype=float).reshape(2))

    def predict_geometry(self, positions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Predicted (distance, local AoA) for agent positions (n, 2)."""
        pos = np.atleast_2d(np.asarray(positions, dtype=float))
        d = np.linalg.norm(pos - self.position, axis=1)
        src = mirror_point(pos, self.wall) if self.wall is not None else pos
        rel = src - self.panel_position
        phi = wrap_angle(np.arctan2(rel[:, 1], rel[:, 0]) - self.orientation_rad)
        return d, phi


@dataclass(frozen=True)
class MotionModel:
    dt: float = 0.1
    sigma_acc: float = 3.0  # white-acceleration std, m/s^2
    sigma_reg: float = 0.01  # inter-panel position regularization std, m

    def __post_init__(self):
        if self.dt <= 0 or self.sigma_acc < 0 or self.sigma_reg < 0:
            raise ValueError("motion-model parameters must be nonnegative, dt positive")


@dataclass(frozen=True)
class SpaConfig:
    n_particles: int = 4096
    p_de: float = 0.5  # existence detection threshold
    mode: str = "los"  # "los" or "mpc"
    p_survive: float = 0.99
    p_birth: float = 0.05
    birth_range: tuple[float, float] = (1.5, 40.0)
    amplitude_walk_std: float = 0.5
    init_vel_std: float = 0.5
    # per-hop resampling triggers below this effective-sample-size fraction;
    # the final belief of a timestep is always resampled
    resample_ess_frac: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.p_de < 1.0:
            raise ValueError("p_de must lie in (0, 1)")
        if self.n_particles < 64:
            raise ValueError("n_particles must be at least 64")
        if self.mode not in ("los", "mpc"):
            raise ValueError("mode must be 'los' or 'mpc'")
        if not (0.0 <= self.p_survive <= 1.0 and 0.0 <= self.p_birth <= 1.0):
            raise ValueError("p_survive and p_birth must lie in [0, 1]")
        if not self.birth_range[0] < self.birth_range[1]:
            raise ValueError("birth_range must be increasing")


class UpdateNorms(NamedTuple):
    """Normalization bookkeeping from a measurement update (diagnostic)."""

    log_evidence: float


def _normalize_log(logw: np.ndarray) -> np.ndarray:
    m = np.max(logw)
    if not np.isfinite(m):
        raise DegeneracyError("all particle weights are zero")
    return logw - (m + math.log(np.sum(np.exp(logw - m))))


def systematic_resample(weights: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """Indices of a systematic resampling pass over normalized ``weights``."""
    n = weights.shape[0]
    positions = (np.arange(n) + gen.random()) / n
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="left")


def init_agent_cloud(bounds, n: int, gen: np.random.Generator, vel_std: float = 0.5) -> ParticleCloud:
    """Uniform position prior over the room with small Gaussian velocities."""
    x0, y0, x1, y1 = bounds
    states = np.empty((n, 4))
    states[:, 0] = gen.uniform(x0, x1, n)
    states[:, 1] = gen.uniform(y0, y1, n)
    states[:, 2:] = gen.normal(0.0, vel_std, (n, 2))
    return ParticleCloud(states, np.full(n, -math.log(n)), time_index=-1)


def init_anchor_belief(site: AnchorSite, cfg: SpaConfig, gen: np.random.Generator) -> AnchorBelief:
    lo, hi = cfg.birth_range
    u = gen.uniform(lo, hi, cfg.n_particles)
    return AnchorBelief(
        u_particles=u,
        log_weights=np.full(cfg.n_particles, -math.log(cfg.n_particles)),
        r_prob=0.5,
        anchor_id=site.anchor_id,
        anchor_pos=site.position,
    )


def predict_agent(prev_belief: ParticleCloud, mm: MotionModel, gen: np.random.Generator) -> ParticleCloud:
    """Constant-velocity time prediction with white-acceleration process noise."""
    acc = gen.normal(0.0, mm.sigma_acc, (prev_belief.n, 2))
    states = prev_belief.states.copy()
    states[:, :2] += states[:, 2:] * mm.dt + 0.5 * acc * mm.dt * mm.dt
    states[:, 2:] += acc * mm.dt
    return ParticleCloud(
        states,
        prev_belief.log_weights.copy(),
        time_index=prev_belief.time_index + 1,
        origin_panel=prev_belief.origin_panel,
    )


def inter_panel_predict(
    msg: ParticleCloud,
    mm: MotionModel,
    gen: np.random.Generator,
    expected_time_index: Optional[int] = None,
) -> ParticleCloud:
    """Regularize a forwarded agent message with small position jitter."""
    if expected_time_index is not None and msg.time_index != expected_time_index:
        raise ProtocolError(
            f"inter-panel message carries time {msg.time_index}, expected {expected_time_index}"
        )
    states = msg.states.copy()
    states[:, :2] += gen.normal(0.0, mm.sigma_reg, (msg.n, 2))
    return ParticleCloud(states, msg.log_weights.copy(), msg.time_index, msg.origin_panel)


def predict_anchor(prev: AnchorBelief, cfg: SpaConfig, gen: np.random.Generator) -> AnchorBelief:
    """Time prediction of the (amplitude, existence) anchor state.

    Existence follows the survive/birth Markov chain.  Amplitude particles are
    resampled to uniform weights (preventing weight degeneracy), random-walked
    and floored at zero, and a birth fraction is redrawn from the birth range.
    """
    w = np.exp(_normalize_log(prev.log_weights))
    idx = systematic_resample(w, gen)
    u = prev.u_particles[idx]
    n = u.shape[0]
    u = np.maximum(u + gen.normal(0.0, cfg.amplitude_walk_std, n), 0.0)
    born = gen.random(n) < cfg.p_birth
    if np.any(born):
        u[born] = gen.uniform(cfg.birth_range[0], cfg.birth_range[1], int(born.sum()))
    r = cfg.p_survive * prev.r_prob + cfg.p_birth * (1.0 - prev.r_prob)
    return AnchorBelief(
        u_particles=u,
        log_weights=np.full(n, -math.log(n)),
        r_prob=float(r),
        anchor_id=prev.anchor_id,
        anchor_pos=prev.anchor_pos,
    )


def pda_log_likelihood(
    positions: np.ndarray,
    us: np.ndarray,
    meas: MeasurementSet,
    site: AnchorSite,
    noise: NoiseModel,
    clutter: ClutterParams,
) -> np.ndarray:
    """Log data-association likelihood per stacked particle.

    Marginalizes the association variable: the miss branch contributes
    (1 - p_d(u)), and each measurement contributes the detection likelihood
    ratio against the clutter density.  Noise scales are evaluated from the
    *measured* amplitudes.
    """
    global LIKELIHOOD_EVALS
    us = np.asarray(us, dtype=float)
    LIKELIHOOD_EVALS += us.shape[0] * (len(meas.items) + 1)
    pd = np.asarray(detection_prob(us, clutter.u_th))
    log_miss = np.log1p(-pd)
    if len(meas.items) == 0:
        return log_miss
    d_pred, phi_pred = site.predict_geometry(positions)
    z_d = np.array([m.d for m in meas.items])
    z_phi = np.array([m.aoa for m in meas.items])
    z_u = np.array([m.u for m in meas.items])
    sig_d = range_std(z_u, noise.radio.bandwidth_hz)
    sig_phi = np.asarray(aoa_std(z_u, noise.radio, z_phi, noise.aoa_floor))

    dd = (z_d[None, :] - d_pred[:, None]) / sig_d[None, :]
    log_nd = -0.5 * dd * dd - np.log(sig_d)[None, :] - _LOG_SQRT_2PI
    dphi = wrap_angle(z_phi[None, :] - phi_pred[:, None])
    finite = np.isfinite(sig_phi)
    if np.all(finite):
        log_nphi = -0.5 * (dphi / sig_phi[None, :]) ** 2 - np.log(sig_phi)[None, :] - _LOG_SQRT_2PI
    else:
        # no angular information: treat the AoA factor as uniform on the circle
        log_nphi = np.empty_like(dphi)
        log_nphi[:, finite] = (
            -0.5 * (dphi[:, finite] / sig_phi[finite][None, :]) ** 2
            - np.log(sig_phi[finite])[None, :]
            - _LOG_SQRT_2PI
        )
        log_nphi[:, ~finite] = -math.log(2.0 * math.pi)
    log_amp = log_amplitude_likelihood(z_u[None, :], us[:, None], clutter.u_th)
    log_clutter = (
        math.log(max(clutter.mu_fa, 1e-12))  # zero clutter rate floored to keep the ratio finite
        + log_fa_amplitude_density(z_u, clutter.u_th)
        - math.log(clutter.d_max)
        - math.log(math.pi)
    )
    terms = np.log(pd)[:, None] + log_nd + log_nphi + log_amp - log_clutter[None, :]
    return np.logaddexp(log_miss, logsumexp(terms, axis=1))


def pda_likelihood(
    particle,
    u,
    meas: MeasurementSet,
    anchor_pos,
    orientation: float,
    noise: NoiseModel,
    clutter: ClutterParams,
    panel_pos=None,
    wall: Optional[Wall] = None,
):
    """Association likelihood of one (or a stack of) agent particle(s).

    ``particle`` is a state [x, y, vx, vy] or just a position [x, y]; pass
    ``wall`` (and the hosting ``panel_pos``) to evaluate a virtual anchor.
    """
    if np.any(np.asarray(u) < 0):
        raise ValueError("amplitude must be nonnegative")
    arr = np.atleast_2d(np.asarray(particle, dtype=float))[:, :2]
    us = np.atleast_1d(np.asarray(u, dtype=float))
    site = AnchorSite(
        anchor_id=0,
        panel_id=0,
        position=anchor_pos,
        panel_position=anchor_pos if panel_pos is None else panel_pos,
        orientation_rad=orientation,
        wall=wall,
    )
    out = np.exp(pda_log_likelihood(arr, us, meas, site, noise, clutter))
    return float(out[0]) if np.ndim(particle) == 1 and np.ndim(u) == 0 else out


def measurement_update(
    alpha_x: ParticleCloud,
    anchor: AnchorBelief,
    meas: MeasurementSet,
    site: AnchorSite,
    noise: NoiseModel,
    clutter: ClutterParams,
) -> tuple[ParticleCloud, np.ndarray, UpdateNorms]:
    """Stacked-state measurement update at one anchor.

    Returns the reweighted agent message, the per-amplitude-particle log
    evidence (association likelihood corrected for the agent weights, with
    the nonexistence branch defined as one), and the normalization record.
    """
    if alpha_x.n != anchor.u_particles.shape[0]:
        raise ValueError(
            f"agent cloud has {alpha_x.n} particles but anchor carries {anchor.u_particles.shape[0]}"
        )
    log_lam = pda_log_likelihood(alpha_x.states[:, :2], anchor.u_particles, meas, site, noise, clutter)
    r = anchor.r_prob
    if r <= 0.0:
        log_gain = np.zeros(alpha_x.n)
    else:
        log_gain = np.logaddexp(math.log(r) + log_lam, math.log1p(-r) if r < 1.0 else -np.inf)
    logw = alpha_x.log_weights + log_gain
    log_evidence = float(logsumexp(logw))
    if not np.isfinite(log_evidence):
        raise DegeneracyError("measurement update produced zero total weight")
    gamma = ParticleCloud(
        alpha_x.states,
        logw - log_evidence,
        time_index=alpha_x.time_index,
        origin_panel=site.panel_id,
    )
    # one-sample estimate of the agent-marginalized anchor message, importance
    # corrected so non-uniform agent weights are honoured
    log_kappa = log_lam + alpha_x.log_weights + math.log(alpha_x.n)
    return gamma, log_kappa, UpdateNorms(log_evidence=log_evidence)


def existence_update(anchor: AnchorBelief, log_kappa: np.ndarray, norms: Optional[UpdateNorms] = None) -> AnchorBelief:
    """Fold the measurement evidence into the anchor belief.

    The existence posterior odds multiply by the weight-averaged evidence
    (the nonexistence branch is identically one); amplitude particles are
    reweighted by the same evidence.
    """
    logw = _normalize_log(anchor.log_weights)
    with np.errstate(over="ignore"):
        log_kmean = float(logsumexp(logw + log_kappa))
    if log_kmean == -np.inf:
        log.warning("anchor %d: evidence vanished, existence collapses to 0", anchor.anchor_id)
        return replace(anchor, r_prob=0.0)
    r = anchor.r_prob
    if r <= 0.0:
        r_new = 0.0
        new_logw = _normalize_log(logw + log_kappa)
    else:
        r_new = float(expit(math.log(r) - math.log1p(-r) + log_kmean)) if r < 1.0 else 1.0
        new_logw = _normalize_log(logw + log_kappa)
    return replace(anchor, r_prob=min(r_new, R_PROB_CAP), log_weights=new_logw)


def mmse_estimates(
    belief: ParticleCloud, anchors: Sequence[AnchorBelief], p_de: float
) -> tuple[AgentState, list[tuple[int, float]]]:
    """Posterior-mean agent state plus (id, mean amplitude) of detected anchors."""
    w = np.exp(_normalize_log(belief.log_weights))
    mean = w @ belief.states
    detected = [(a.anchor_id, a.u_hat()) for a in anchors if a.r_prob > p_de]
    return AgentState(p=mean[:2], v=mean[2:]), detected


def resample_regularize(cloud: ParticleCloud, gen: np.random.Generator) -> ParticleCloud:
    """Systematic resampling to uniform weights plus kernel jitter.

    The jitter bandwidth is the weighted per-dimension sample std scaled by
    n^(-1/6), the Silverman-style factor for the 2-D position blocks.
    """
    logw = _normalize_log(cloud.log_weights)
    w = np.exp(logw)
    mean = w @ cloud.states
    var = w @ (cloud.states - mean) ** 2
    std = np.sqrt(np.maximum(var, 0.0))
    idx = systematic_resample(w, gen)
    n = cloud.n
    bandwidth = n ** (-1.0 / 6.0) * std
    states = cloud.states[idx] + gen.standard_normal((n, 4)) * bandwidth
    return ParticleCloud(
        states,
        np.full(n, -math.log(n)),
        time_index=cloud.time_index,
        origin_panel=cloud.origin_panel,
    )


def effective_sample_size(cloud: ParticleCloud) -> float:
    w = np.exp(_normalize_log(cloud.log_weights))
    return float(1.0 / np.sum(w * w))
