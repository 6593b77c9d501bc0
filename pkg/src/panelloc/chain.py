"""Daisy-chain runtime: panel nodes, wire format, in-process and TCP transports.

Topology per timestep: the head panel time-predicts the agent belief, every
panel folds in its local measurements and forwards the updated agent message
to its successor, and the tail emits the belief and the position estimate.
The collector loops the final belief back to the head for the next step.

Wire format of an agent-message frame (all little-endian):

    magic   u32 = 0x444D424C
    version u16 = 1
    panel   u16   sender panel id
    time    u32   time index
    count   u32   particle count
    records count x 5 float32: px, py, vx, vy, weight (normalized, linear)
    crc     u32   CRC32 of all preceding bytes

Frames travel length-prefixed (u32 frame length, then the frame).  Each
agent-message frame is followed by a UTF-8 JSON meta frame carrying the
per-panel anchor reports (and, from the tail, the estimate) downstream, so
the collector can emit complete estimate records without any central
aggregation of particle data.  Float32 quantization is applied at every
panel boundary in both transports, which makes their outputs bit-identical.
"""

from __future__ import annotations

import json
import logging
import math
import socket
import struct
import threading
import time as _time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import spa
from .errors import (
    BadMagicError,
    ChainAbortedError,
    ConfigError,
    CrcMismatchError,
    OutOfOrderError,
    TruncatedFrameError,
    UnsupportedVersionError,
)
from .measurement import ClutterParams, MeasurementSet, NoiseModel, synthesize_panel
from .rng import Purpose, StreamFactory
from .scenario import Scenario, load_scenario, scenario_from_dict
from .spa import AnchorBelief, AnchorSite, MotionModel, ParticleCloud, SpaConfig

log = logging.getLogger(__name__)

MAGIC = 0x444D424C
VERSION = 1
_HEADER = struct.Struct("<IHHII")
_CRC = struct.Struct("<I")
_LEN = struct.Struct("<I")


@dataclass
class ChainMessage:
    time_index: int
    sender: int
    payload: ParticleCloud


def encode_message(msg: ChainMessage) -> bytes:
    """Serialize an agent message to the fixed binary layout."""
    cloud = msg.payload
    w = np.exp(spa._normalize_log(cloud.log_weights))
    records = np.empty((cloud.n, 5), dtype="<f4")
    records[:, :4] = cloud.states
    records[:, 4] = w
    body = _HEADER.pack(MAGIC, VERSION, msg.sender, msg.time_index, cloud.n) + records.tobytes()
    return body + _CRC.pack(zlib.crc32(body))


def decode_message(buf: bytes) -> ChainMessage:
    """Parse and validate an agent-message frame."""
    if len(buf) < _HEADER.size + _CRC.size:
        raise TruncatedFrameError(f"frame of {len(buf)} bytes is shorter than any valid message")
    magic, version, panel_id, time_index, n = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic 0x{magic:08X}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    expected = _HEADER.size + 20 * n + _CRC.size
    if len(buf) != expected:
        raise TruncatedFrameError(f"frame has {len(buf)} bytes, expected {expected}")
    (crc,) = _CRC.unpack_from(buf, expected - _CRC.size)
    if crc != zlib.crc32(buf[: expected - _CRC.size]):
        raise CrcMismatchError("checksum mismatch")
    records = np.frombuffer(buf, dtype="<f4", count=5 * n, offset=_HEADER.size).reshape(n, 5)
    states = records[:, :4].astype(float)
    w = records[:, 4].astype(float)
    total = w.sum()
    if total <= 0:
        raise TruncatedFrameError("message carries no probability mass")
    if abs(total - 1.0) > 1e-6:
        log.debug("decode: weight drift %.3g exceeds the float32 quantization budget", abs(total - 1.0))
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    # float32 quantization drift is removed here so every decoded cloud is
    # exactly normalized
    cloud = ParticleCloud(states, logw, time_index=time_index, origin_panel=panel_id).normalized()
    return ChainMessage(time_index=time_index, sender=panel_id, payload=cloud)


def quantize_roundtrip(msg: ChainMessage) -> ChainMessage:
    """Apply exactly the float32 quantization a wire crossing would apply."""
    return decode_message(encode_message(msg))


def format_estimate_line(time_index: int, x_hat, detected_ids: Sequence[int]) -> str:
    """One JSON-lines estimate record, identical across transports."""
    return json.dumps(
        {
            "time": int(time_index),
            "x": float(x_hat[0]),
            "y": float(x_hat[1]),
            "vx": float(x_hat[2]),
            "vy": float(x_hat[3]),
            "detected": [int(i) for i in detected_ids],
        },
        separators=(",", ":"),
    )


def anchor_sites(scn: Scenario, panel_id: int, mode: str) -> list[AnchorSite]:
    """Anchor set of one panel: its physical anchor plus, in mpc mode, the
    virtual anchors mirrored across every reflective wall not hosting it."""
    panel = scn.panels[panel_id - 1]
    sites = [
        AnchorSite(
            anchor_id=panel_id * 100,
            panel_id=panel_id,
            position=panel.position,
            panel_position=panel.position,
            orientation_rad=panel.orientation_rad,
        )
    ]
    if mode == "mpc":
        from .geometry import mirror_point

        slot = 1
        for w in scn.walls:
            if not w.reflective:
                continue
            va = mirror_point(panel.position, w)
            if np.linalg.norm(va - panel.position) < 1e-9:
                continue  # panel lies on this wall
            sites.append(
                AnchorSite(
                    anchor_id=panel_id * 100 + slot,
                    panel_id=panel_id,
                    position=va,
                    panel_position=panel.position,
                    orientation_rad=panel.orientation_rad,
                    wall=w,
                )
            )
            slot += 1
    return sites


@dataclass
class RunSetup:
    """Everything a panel (local or remote) needs to run deterministically."""

    scenario: Scenario
    spa_cfg: SpaConfig = field(default_factory=SpaConfig)
    clutter: ClutterParams = field(default_factory=ClutterParams)
    noise: Optional[NoiseModel] = None
    motion: Optional[MotionModel] = None
    seed: int = 0
    run: int = 0
    n_steps: Optional[int] = None

    def __post_init__(self):
        if self.noise is None:
            self.noise = NoiseModel(radio=self.scenario.radio)
        if self.motion is None:
            self.motion = MotionModel(dt=self.scenario.dt_s)
        if self.n_steps is None:
            self.n_steps = self.scenario.n_steps
        if self.n_steps > self.scenario.n_steps:
            raise ConfigError(f"n_steps={self.n_steps} exceeds the trajectory length")

    @classmethod
    def from_config(cls, cfg: dict, base_dir: Path = Path(".")) -> tuple["RunSetup", int, int]:
        """Build from a panel-config dict; returns (setup, panel_id, n_panels)."""
        allowed = {"scenario", "panel_id", "n_panels", "seed", "run", "n_steps", "mode", "spa", "clutter", "noise", "motion"}
        unknown = set(cfg) - allowed
        if unknown:
            raise ConfigError(f"panel config: unknown key(s) {sorted(unknown)}")
        scn_cfg = cfg.get("scenario", {})
        if isinstance(scn_cfg, str):
            scn = load_scenario(base_dir / scn_cfg)
        else:
            scn = scenario_from_dict(scn_cfg)
        spa_kwargs = dict(cfg.get("spa", {}))
        if "mode" in cfg:
            spa_kwargs["mode"] = cfg["mode"]
        setup = cls(
            scenario=scn,
            spa_cfg=SpaConfig(**spa_kwargs),
            clutter=ClutterParams(**cfg.get("clutter", {})),
            noise=NoiseModel(radio=scn.radio, **cfg.get("noise", {})),
            motion=MotionModel(dt=scn.dt_s, **cfg.get("motion", {})) if "motion" in cfg else None,
            seed=int(cfg.get("seed", 0)),
            run=int(cfg.get("run", 0)),
            n_steps=cfg.get("n_steps"),
        )
        panel_id = int(cfg.get("panel_id", 1))
        n_panels = int(cfg.get("n_panels", scn.n_panels))
        return setup, panel_id, n_panels


class PanelNode:
    """State and per-timestep processing of one panel.

    The same object backs both transports: the in-process runner calls
    :meth:`process` directly, a socket server calls it between frame
    decode/encode.  Anchor predictions for the next step are computed eagerly
    right after the panel finishes its local update (they are off the chain's
    critical path).
    """

    def __init__(self, panel_id: int, setup: RunSetup, n_panels: Optional[int] = None):
        self.panel_id = panel_id
        self.setup = setup
        self.n_panels = n_panels if n_panels is not None else setup.scenario.n_panels
        if not 1 <= panel_id <= self.n_panels:
            raise ConfigError(f"panel_id {panel_id} outside 1..{self.n_panels}")
        self.is_head = panel_id == 1
        self.is_tail = panel_id == self.n_panels
        self.streams = StreamFactory(setup.seed, setup.run)
        self.sites = anchor_sites(setup.scenario, panel_id, setup.spa_cfg.mode)
        self.anchors = {
            s.anchor_id: spa.init_anchor_belief(s, setup.spa_cfg, self.streams.get(-1, panel_id, Purpose.INIT))
            for s in self.sites
        }
        self._predicted: Optional[dict[int, AnchorBelief]] = None
        self._predicted_time = -1
        self.last_time = -1

    def initial_belief(self) -> ParticleCloud:
        """Uniform-over-room prior; only the head panel uses it (locally)."""
        gen = self.streams.get(-1, 0, Purpose.INIT)
        return spa.init_agent_cloud(
            self.setup.scenario.bounds, self.setup.spa_cfg.n_particles, gen, self.setup.spa_cfg.init_vel_std
        )

    def _predict_anchors(self, time_index: int, trace: Optional[list]) -> dict[int, AnchorBelief]:
        gen = self.streams.get(time_index, self.panel_id, Purpose.ANCHOR_PREDICT)
        out = {aid: spa.predict_anchor(b, self.setup.spa_cfg, gen) for aid, b in self.anchors.items()}
        if trace is not None:
            trace.append((_time.perf_counter(), self.panel_id, f"anchor_predict[{time_index}]"))
        return out

    def process(
        self,
        cloud: ParticleCloud,
        time_index: int,
        measurements: Optional[MeasurementSet] = None,
        trace: Optional[list] = None,
    ) -> tuple[ParticleCloud, dict]:
        """Run the panel's stage of one timestep.

        ``cloud`` is the previous-step belief at the head, or the incoming
        agent message elsewhere.  Returns the forwarded message and the
        panel report (anchor states, estimate at the tail, measurement count).
        """
        cfg = self.setup
        if time_index <= self.last_time:
            raise OutOfOrderError(f"duplicate time index {time_index}")
        if measurements is None:
            measurements = synthesize_panel(
                cfg.scenario,
                time_index,
                self.panel_id,
                self.streams.get(time_index, self.panel_id, Purpose.MEASUREMENT),
                cfg.clutter,
                cfg.noise,
            )
        if measurements.time_index != time_index or measurements.panel_id != self.panel_id:
            raise ChainAbortedError(self.panel_id, "measurement set does not match this panel/step")

        if self.is_head:
            if cloud.time_index != time_index - 1:
                raise OutOfOrderError(
                    f"head received belief for time {cloud.time_index}, expected {time_index - 1}"
                )
            current = spa.predict_agent(cloud, cfg.motion, self.streams.get(time_index, self.panel_id, Purpose.AGENT_PREDICT))
            if trace is not None:
                trace.append((_time.perf_counter(), self.panel_id, "agent_predict"))
        else:
            current = spa.inter_panel_predict(
                cloud,
                cfg.motion,
                self.streams.get(time_index, self.panel_id, Purpose.HOP_JITTER),
                expected_time_index=time_index,
            )
            if trace is not None:
                trace.append((_time.perf_counter(), self.panel_id, "hop_jitter"))

        if self._predicted_time == time_index and self._predicted is not None:
            predicted = self._predicted
        else:
            predicted = self._predict_anchors(time_index, trace)

        new_anchors = {}
        for site in self.sites:
            gamma, log_kappa, norms = spa.measurement_update(
                current, predicted[site.anchor_id], measurements, site, cfg.noise, cfg.clutter
            )
            new_anchors[site.anchor_id] = spa.existence_update(predicted[site.anchor_id], log_kappa, norms)
            current = gamma
            if trace is not None:
                trace.append((_time.perf_counter(), self.panel_id, f"update[{site.anchor_id}]"))
        self.anchors = new_anchors

        report = {
            "panel": self.panel_id,
            "n_meas": len(measurements),
            "anchors": [
                [aid, float(self.anchors[aid].r_prob), self.anchors[aid].u_hat(),
                 bool(self.anchors[aid].r_prob > cfg.spa_cfg.p_de)]
                for aid in sorted(self.anchors)
            ],
        }
        if self.is_tail:
            x_hat, _ = spa.mmse_estimates(current, list(self.anchors.values()), cfg.spa_cfg.p_de)
            report["estimate"] = [float(x_hat.p[0]), float(x_hat.p[1]), float(x_hat.v[0]), float(x_hat.v[1])]

        # Per-hop resampling only on weight degeneracy: unconditional per-hop
        # kernel jitter compounds across panels and overdisperses the velocity
        # marginal.  The final belief is always resampled so the loopback
        # message stays well-conditioned.
        ess = spa.effective_sample_size(current)
        if self.is_tail or ess < cfg.spa_cfg.resample_ess_frac * current.n:
            out = spa.resample_regularize(current, self.streams.get(time_index, self.panel_id, Purpose.RESAMPLE))
            if trace is not None:
                trace.append((_time.perf_counter(), self.panel_id, "resample"))
        else:
            out = current
        self.last_time = time_index

        # pipelining hook: next-step anchor prediction starts immediately
        if time_index + 1 < cfg.n_steps:
            self._predicted = self._predict_anchors(time_index + 1, trace)
            self._predicted_time = time_index + 1
        return out, report


def build_chain(setup: RunSetup, n_panels: Optional[int] = None) -> list[PanelNode]:
    n = n_panels if n_panels is not None else setup.scenario.n_panels
    return [PanelNode(j, setup, n) for j in range(1, n + 1)]


def run_timestep(
    chain: Sequence[PanelNode],
    prev_belief: ParticleCloud,
    measurements: Optional[Sequence[MeasurementSet]],
    transport: str = "in-process",
) -> tuple[ParticleCloud, np.ndarray, list[AnchorBelief], list]:
    """Run one timestep over the whole chain in process.

    Float32 quantization is applied between panels exactly as the socket
    transport would.  Returns (belief for the loopback, estimate [x y vx vy],
    all anchor beliefs in panel order, timing trace).  The socket transport is
    driven by the long-running node machinery (:func:`serve_panel`,
    :class:`Collector`, :func:`run_track`), not by this function.
    """
    if transport != "in-process":
        raise ValueError("run_timestep executes in process; use run_track(transport='socket') for sockets")
    trace: list = []
    time_index = prev_belief.time_index + 1
    cloud = prev_belief
    x_hat = None
    for i, panel in enumerate(chain):
        meas = measurements[i] if measurements is not None else None
        try:
            cloud, report = panel.process(cloud, time_index, meas, trace)
        except (OutOfOrderError, ChainAbortedError):
            raise
        except Exception as e:  # noqa: BLE001 - annotate the failing panel
            raise ChainAbortedError(panel.panel_id, str(e)) from e
        if panel.is_tail:
            x_hat = np.array(report["estimate"])
        trace.append((_time.perf_counter(), panel.panel_id, "send"))
        if not panel.is_tail:
            try:
                cloud = quantize_roundtrip(ChainMessage(time_index, panel.panel_id, cloud)).payload
            except Exception as e:  # noqa: BLE001
                raise ChainAbortedError(panel.panel_id, f"link failure: {e}") from e
    anchors = [b for panel in chain for _, b in sorted(panel.anchors.items())]
    return cloud, x_hat, anchors, trace


@dataclass
class TrackResult:
    """Per-run output of a whole-track chain execution."""

    estimates: np.ndarray  # (n_steps, 4)
    estimate_lines: list[str]
    anchor_ids: list[int]
    r_probs: np.ndarray  # (n_steps, n_anchors)
    m_counts: np.ndarray  # (n_steps, n_panels)


def _detected_ids(reports: Sequence[dict]) -> list[int]:
    return [a[0] for rep in reports for a in rep["anchors"] if a[3]]


def run_track_inprocess(setup: RunSetup, n_panels: Optional[int] = None) -> TrackResult:
    chain = build_chain(setup, n_panels)
    n_steps = setup.n_steps
    belief = chain[0].initial_belief()
    streams = StreamFactory(setup.seed, setup.run)
    anchor_ids = [s.anchor_id for panel in chain for s in panel.sites]
    estimates = np.empty((n_steps, 4))
    r_probs = np.empty((n_steps, len(anchor_ids)))
    m_counts = np.empty((n_steps, len(chain)), dtype=int)
    lines = []
    for n in range(n_steps):
        measurements = [
            synthesize_panel(
                setup.scenario,
                n,
                p.panel_id,
                streams.get(n, p.panel_id, Purpose.MEASUREMENT),
                setup.clutter,
                setup.noise,
            )
            for p in chain
        ]
        trace: list = []
        cloud = belief
        reports = []
        for i, panel in enumerate(chain):
            cloud, report = panel.process(cloud, n, measurements[i], trace)
            reports.append(report)
            if not panel.is_tail:
                cloud = quantize_roundtrip(ChainMessage(n, panel.panel_id, cloud)).payload
        estimates[n] = reports[-1]["estimate"]
        lines.append(format_estimate_line(n, estimates[n], _detected_ids(reports)))
        col = 0
        for rep in reports:
            m_counts[n, rep["panel"] - 1] = rep["n_meas"]
            for aid, r, _uh, _det in rep["anchors"]:
                r_probs[n, col] = r
                col += 1
        # loopback crossing: tail -> collector -> head
        belief = quantize_roundtrip(ChainMessage(n, chain[-1].panel_id, cloud)).payload
    return TrackResult(estimates, lines, anchor_ids, r_probs, m_counts)


# ---------------------------------------------------------------------------
# socket transport
# ---------------------------------------------------------------------------

_RETRY_DELAYS = (0.05, 0.1, 0.2)  # bounded backoff, 3 attempts


def _send_frame(sock: socket.socket, frame: bytes) -> None:
    sock.sendall(_LEN.pack(len(frame)) + frame)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            raise ConnectionError("peer closed the connection")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def _recv_frame(sock: socket.socket) -> bytes:
    (length,) = _LEN.unpack(_recv_exact(sock, 4))
    if length > 64 * 1024 * 1024:
        raise TruncatedFrameError(f"frame length {length} is implausible")
    return _recv_exact(sock, length)


def _connect_with_retry(address: tuple[str, int], what: str) -> socket.socket:
    last = None
    for delay in _RETRY_DELAYS:
        try:
            return socket.create_connection(address, timeout=10.0)
        except OSError as e:
            last = e
            _time.sleep(delay)
    raise ConnectionError(f"could not connect to {what} at {address}: {last}")


class PanelServer:
    """Long-running socket node wrapping one :class:`PanelNode`.

    Listens for its upstream neighbour, connects downstream, then relays one
    (agent message, meta) frame pair per timestep through the local panel
    update.  Duplicate time indices are rejected idempotently; downstream
    delivery retries with bounded backoff before aborting the timestep.
    """

    def __init__(self, bind: tuple[str, int], next_hop: tuple[str, int], panel_id: int, setup: RunSetup, n_panels: Optional[int] = None):
        self.node = PanelNode(panel_id, setup, n_panels)
        self.next_hop = next_hop
        self._listener = socket.create_server(bind)
        self._listener.settimeout(30.0)
        self.address = self._listener.getsockname()
        self._thread = threading.Thread(target=self._run, name=f"panel-{panel_id}", daemon=True)
        self.error: Optional[BaseException] = None
        self._stop = threading.Event()
        self._up: Optional[socket.socket] = None
        self._down: Optional[socket.socket] = None

    def start(self) -> "PanelServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        """Hard-stop the node (used for fault injection in tests)."""
        self._stop.set()
        for s in (self._listener, self._up, self._down):
            try:
                if s is not None:
                    s.close()
            except OSError:
                pass

    def join(self, timeout: float = 30.0) -> None:
        self._thread.join(timeout)

    def _send_downstream(self, down: socket.socket, frames: list[bytes]) -> socket.socket:
        try:
            for f in frames:
                _send_frame(down, f)
            return down
        except OSError:
            pass
        for delay in _RETRY_DELAYS:
            _time.sleep(delay)
            try:
                down.close()
                down = socket.create_connection(self.next_hop, timeout=10.0)
                for f in frames:
                    _send_frame(down, f)
                return down
            except OSError:
                continue
        raise ChainAbortedError(self.node.panel_id, "downstream link failed after 3 retries")

    def _run(self) -> None:
        node = self.node
        up = down = None
        try:
            down = self._down = _connect_with_retry(self.next_hop, "next hop")
            start = 0
            if node.is_head:
                # head owns step 0: no upstream frame exists yet
                cloud = node.initial_belief()
                down = self._down = self._step(down, cloud, 0, [])
                start = 1
            up, _ = self._listener.accept()
            self._up = up
            up.settimeout(60.0)
            for n in range(start, node.setup.n_steps):
                while True:
                    msg = decode_message(_recv_frame(up))
                    meta = json.loads(_recv_frame(up).decode("utf-8"))
                    expected = n - 1 if node.is_head else n
                    if msg.time_index < expected:
                        log.info("panel %d: ignoring duplicate frame for time %d", node.panel_id, msg.time_index)
                        continue  # idempotent rejection by time index
                    if msg.time_index > expected:
                        raise OutOfOrderError(
                            f"panel {node.panel_id} got time {msg.time_index}, expected {expected}"
                        )
                    break
                down = self._down = self._step(down, msg.payload, n, meta.get("reports", []))
        except BaseException as e:  # noqa: BLE001 - surfaced via .error
            if not self._stop.is_set():
                self.error = e
                log.warning("panel %d stopped: %s", self.node.panel_id, e)
        finally:
            for s in (up, down, self._listener):
                try:
                    if s is not None:
                        s.close()
                except OSError:
                    pass

    def _step(self, down: socket.socket, cloud: ParticleCloud, n: int, reports: list) -> socket.socket:
        out, report = self.node.process(cloud, n)
        reports = reports + [report]
        frames = [
            encode_message(ChainMessage(n, self.node.panel_id, out)),
            json.dumps({"kind": "meta", "time": n, "reports": reports}, separators=(",", ":")).encode("utf-8"),
        ]
        return self._send_downstream(down, frames)


class Collector:
    """Consumes the tail output, emits JSON-lines estimates, feeds the head.

    One estimate line is written per timestep; on a receive timeout an error
    record is emitted instead and the run stops (an aborted timestep).
    """

    def __init__(self, bind: tuple[str, int], head: tuple[str, int], n_steps: int, step_timeout: float = 30.0):
        self.head = head
        self.n_steps = n_steps
        self.step_timeout = step_timeout
        self._listener = socket.create_server(bind)
        self._listener.settimeout(step_timeout)
        self.address = self._listener.getsockname()
        self.lines: list[str] = []
        self.error: Optional[str] = None
        self._thread = threading.Thread(target=self._run, name="collector", daemon=True)

    def start(self) -> "Collector":
        self._thread.start()
        return self

    def join(self, timeout: float = 120.0) -> None:
        self._thread.join(timeout)

    def _run(self) -> None:
        up = down = None
        try:
            down = _connect_with_retry(self.head, "head panel")
            up, _ = self._listener.accept()
            up.settimeout(self.step_timeout)
            for n in range(self.n_steps):
                try:
                    frame = _recv_frame(up)
                    meta = json.loads(_recv_frame(up).decode("utf-8"))
                except (OSError, ConnectionError) as e:
                    self.error = f"timestep {n} aborted: {e}"
                    self.lines.append(json.dumps({"time": n, "error": "timestep aborted"}, separators=(",", ":")))
                    return
                reports = meta.get("reports", [])
                estimate = reports[-1]["estimate"]
                self.lines.append(format_estimate_line(n, estimate, _detected_ids(reports)))
                if n + 1 < self.n_steps:
                    # relay the belief verbatim to the head for step n+1
                    _send_frame(down, frame)
                    _send_frame(down, json.dumps({"kind": "meta", "time": n, "reports": []}, separators=(",", ":")).encode("utf-8"))
        except BaseException as e:  # noqa: BLE001
            self.error = str(e)
        finally:
            for s in (up, down, self._listener):
                try:
                    if s is not None:
                        s.close()
                except OSError:
                    pass


def run_track_sockets(setup: RunSetup, n_panels: Optional[int] = None, host: str = "127.0.0.1", step_timeout: float = 30.0) -> list[str]:
    """Run a whole track over a local TCP daisy chain; returns estimate lines."""
    n = n_panels if n_panels is not None else setup.scenario.n_panels
    collector = Collector((host, 0), head=("", 0), n_steps=setup.n_steps, step_timeout=step_timeout)
    servers: list[PanelServer] = []
    # build tail-first so every next-hop listener exists before it is dialled
    next_addr = collector.address
    for panel_id in range(n, 0, -1):
        srv = PanelServer((host, 0), next_addr, panel_id, setup, n)
        servers.append(srv)
        next_addr = srv.address
    collector.head = next_addr  # head is the last server built
    try:
        for srv in servers:
            srv.start()
        collector.start()
        collector.join()
        for srv in servers:
            srv.join(timeout=10.0)
    finally:
        for srv in servers:
            srv.stop()
    if collector.error and not collector.lines:
        raise ChainAbortedError(0, collector.error)
    return collector.lines


def run_track(setup: RunSetup, transport: str = "in-process", **kwargs):
    """Track-level entry point: 'in-process' returns a TrackResult, 'socket' the estimate lines."""
    if transport == "in-process":
        return run_track_inprocess(setup, **kwargs)
    if transport == "socket":
        return run_track_sockets(setup, **kwargs)
    raise ValueError(f"unknown transport {transport!r}")


def serve_panel(bind: tuple[str, int], panel_config: dict | str | Path, next_hop: Optional[tuple[str, int]] = None) -> PanelServer:
    """Start a long-running panel node from a panel-config mapping or JSON file."""
    if not isinstance(panel_config, dict):
        path = Path(panel_config)
        cfg = json.loads(path.read_text(encoding="utf-8"))
        setup, panel_id, n_panels = RunSetup.from_config(cfg, base_dir=path.parent)
    else:
        setup, panel_id, n_panels = RunSetup.from_config(panel_config)
    if next_hop is None:
        raise ConfigError("serve_panel requires a next-hop address")
    return PanelServer(bind, next_hop, panel_id, setup, n_panels).start()
