"""Distributed LoS-based belief-propagation localization for panelized D-MIMO."""

from .geometry import Wall, aoa_at_panel, los_visible, mirror_point, segment_intersects, single_bounce_path
from .measurement import (
    ClutterParams,
    Measurement,
    MeasurementSet,
    NoiseModel,
    amplitude_likelihood,
    aoa_std,
    detection_prob,
    fa_amplitude_density,
    marcum_q1,
    path_amplitude,
    range_std,
    synthesize_timestep,
)
from .scenario import Panel, RadioConfig, Scenario, default_scenario, gen_trajectory, load_scenario, place_panels, save_scenario
from .spa import (
    AgentState,
    AnchorBelief,
    AnchorSite,
    MotionModel,
    ParticleCloud,
    SpaConfig,
    existence_update,
    inter_panel_predict,
    measurement_update,
    mmse_estimates,
    pda_likelihood,
    predict_agent,
    predict_anchor,
    resample_regularize,
)
from .chain import ChainMessage, PanelNode, RunSetup, decode_message, encode_message, run_timestep, run_track, serve_panel
from .latency import LatencyParams, LatencyReport, chain_latency, link_latency, panel_latency
from .harness import RunResult, SweepSpec, rmse_over_time, rmse_scalar, run_monte_carlo, run_sweep

__version__ = "0.1.0"
