import json
import math
import socket
import struct
import threading
import time

import numpy as np
import pytest

from panelloc.chain import (
    ChainMessage,
    Collector,
    PanelServer,
    RunSetup,
    build_chain,
    decode_message,
    encode_message,
    quantize_roundtrip,
    run_timestep,
    run_track_inprocess,
    run_track_sockets,
    _LEN,
    _recv_frame,
    _send_frame,
)
from panelloc.errors import (
    BadMagicError,
    ChainAbortedError,
    CrcMismatchError,
    OutOfOrderError,
    TruncatedFrameError,
    UnsupportedVersionError,
)
from panelloc.measurement import synthesize_panel
from panelloc.rng import Purpose, StreamFactory
from panelloc.scenario import default_scenario
from panelloc.spa import ParticleCloud, SpaConfig


def _cloud(n=4, time_index=3, seed=0):
    gen = np.random.default_rng(seed)
    states = gen.normal(10.0, 2.0, (n, 4))
    logw = np.log(gen.dirichlet(np.ones(n)))
    return ParticleCloud(states, logw, time_index=time_index, origin_panel=2)


def _setup(j=3, n_steps=6, n_particles=256, seed=11, mode="los"):
    scn = default_scenario(j=j)
    return RunSetup(
        scenario=scn,
        spa_cfg=SpaConfig(n_particles=n_particles, mode=mode),
        seed=seed,
        run=0,
        n_steps=n_steps,
    )


# ------------------------------------------------------------- wire format


def test_message_length_single_particle():
    msg = ChainMessage(7, 2, _cloud(n=1))
    assert len(encode_message(msg)) == 40


def test_message_length_affine():
    for n in (1, 5, 100):
        msg = ChainMessage(0, 1, _cloud(n=n))
        assert len(encode_message(msg)) == 16 + 20 * n + 4


def test_encode_decode_round_trip():
    msg = ChainMessage(9, 4, _cloud(n=50, time_index=9))
    out = decode_message(encode_message(msg))
    assert out.time_index == 9 and out.sender == 4
    # float32 quantization is idempotent
    again = decode_message(encode_message(ChainMessage(9, 4, out.payload)))
    assert np.array_equal(again.payload.states, out.payload.states)
    assert np.allclose(np.exp(again.payload.log_weights), np.exp(out.payload.log_weights), atol=1e-9)


def test_decode_flipped_byte_crc():
    buf = bytearray(encode_message(ChainMessage(1, 1, _cloud(n=8))))
    for pos in (5, 17, 60, len(buf) - 6):
        bad = bytearray(buf)
        bad[pos] ^= 0x40
        with pytest.raises((CrcMismatchError, BadMagicError, UnsupportedVersionError, TruncatedFrameError)):
            decode_message(bytes(bad))


def test_decode_bad_magic():
    buf = bytearray(encode_message(ChainMessage(1, 1, _cloud(n=2))))
    buf[0] ^= 0xFF
    with pytest.raises(BadMagicError):
        decode_message(bytes(buf))


def test_decode_unsupported_version():
    cloud = _cloud(n=2)
    body = struct.pack("<IHHII", 0x444D424C, 2, 1, 1, 2)
    records = np.zeros((2, 5), dtype="<f4")
    records[:, 4] = 0.5
    body += records.tobytes()
    import zlib

    frame = body + struct.pack("<I", zlib.crc32(body))
    with pytest.raises(UnsupportedVersionError):
        decode_message(frame)


def test_decode_truncated():
    buf = encode_message(ChainMessage(1, 1, _cloud(n=4)))
    with pytest.raises(TruncatedFrameError):
        decode_message(buf[:-3])
    with pytest.raises(TruncatedFrameError):
        decode_message(buf[:10])


def test_weight_renormalization_on_decode():
    cloud = _cloud(n=64)
    out = decode_message(encode_message(ChainMessage(0, 1, cloud)))
    assert abs(np.exp(out.payload.log_weights).sum() - 1.0) < 1e-9


# --------------------------------------------------------- in-process chain


def test_run_timestep_single_panel_matches_manual_composition():
    setup = _setup(j=1, n_steps=3)
    chain = build_chain(setup)
    belief = chain[0].initial_belief()
    meas = [
        synthesize_panel(
            setup.scenario, 0, 1, StreamFactory(11, 0).get(0, 1, Purpose.MEASUREMENT), setup.clutter, setup.noise
        )
    ]
    out, x_hat, anchors, trace = run_timestep(chain, belief, meas)

    manual = build_chain(_setup(j=1, n_steps=3))[0]
    manual_out, report = manual.process(manual.initial_belief(), 0, meas[0])
    assert np.array_equal(out.states, manual_out.states)
    assert np.allclose(x_hat, report["estimate"])


def test_run_timestep_rejects_socket_transport():
    setup = _setup(j=1)
    chain = build_chain(setup)
    with pytest.raises(ValueError):
        run_timestep(chain, chain[0].initial_belief(), None, transport="socket")


def test_run_timestep_message_count_and_order():
    setup = _setup(j=4, n_steps=2)
    chain = build_chain(setup)
    belief = chain[0].initial_belief()
    out, x_hat, anchors, trace = run_timestep(chain, belief, None)
    sends = [p for _, p, stage in trace if stage == "send"]
    assert sends == [1, 2, 3, 4]  # exactly J messages carry the agent belief
    order = [p for _, p, _ in trace]
    assert order == sorted(order)  # strict 1..J processing order


def test_run_timestep_pipelined_anchor_prediction():
    setup = _setup(j=3, n_steps=4)
    chain = build_chain(setup)
    belief = chain[0].initial_belief()
    _, _, _, trace = run_timestep(chain, belief, None)
    for j in (1, 2):
        t_pred = [t for t, p, stage in trace if p == j and stage == "anchor_predict[1]"]
        t_next = [t for t, p, stage in trace if p == j + 1]
        assert t_pred and t_next
        assert t_pred[0] < min(t_next)  # next-step prediction starts before the successor panel runs


def test_run_timestep_duplicate_time_rejected():
    setup = _setup(j=2, n_steps=4)
    chain = build_chain(setup)
    belief = chain[0].initial_belief()
    out, *_ = run_timestep(chain, belief, None)
    with pytest.raises(OutOfOrderError):
        run_timestep(chain, belief, None)  # same time index again


def test_track_inprocess_deterministic():
    a = run_track_inprocess(_setup(j=3, n_steps=5))
    b = run_track_inprocess(_setup(j=3, n_steps=5))
    assert a.estimate_lines == b.estimate_lines
    assert np.array_equal(a.estimates, b.estimates)


def test_mpc_mode_builds_virtual_anchors():
    setup = _setup(j=4, n_steps=2, mode="mpc")
    chain = build_chain(setup)
    # wall-center panels host one physical + three mirror anchors each
    assert all(len(p.sites) == 4 for p in chain)
    track = run_track_inprocess(setup)
    assert track.r_probs.shape[1] == 16


# -------------------------------------------------------------- socket chain


def test_socket_chain_three_nodes_ten_steps():
    setup = _setup(j=3, n_steps=10)
    lines = run_track_sockets(setup, step_timeout=60.0)
    assert len(lines) == 10
    times = [json.loads(l)["time"] for l in lines]
    assert times == list(range(10))


def test_transport_equivalence_small():
    setup = _setup(j=4, n_steps=8, n_particles=256, seed=3)
    inproc = run_track_inprocess(setup).estimate_lines
    socketl = run_track_sockets(_setup(j=4, n_steps=8, n_particles=256, seed=3), step_timeout=60.0)
    assert inproc == socketl  # bit-identical JSON lines


def test_socket_kill_middle_node_aborts():
    setup = _setup(j=3, n_steps=400, n_particles=128)
    collector = Collector(("127.0.0.1", 0), head=("", 0), n_steps=400, step_timeout=3.0)
    servers = []
    next_addr = collector.address
    for panel_id in (3, 2, 1):
        srv = PanelServer(("127.0.0.1", 0), next_addr, panel_id, setup, 3)
        servers.append(srv)
        next_addr = srv.address
    collector.head = next_addr
    try:
        for srv in servers:
            srv.start()
        collector.start()
        time.sleep(1.0)
        servers[1].stop()  # kill panel 2 mid-run
        collector.join(timeout=30.0)
    finally:
        for srv in servers:
            srv.stop()
    assert collector.error is not None
    assert any("error" in json.loads(l) for l in collector.lines)


def test_socket_duplicate_frame_idempotent():
    # drive panel 2 of a 2-panel chain by hand: duplicates must be dropped
    setup = _setup(j=2, n_steps=2, n_particles=128)
    tail_sink = socket.create_server(("127.0.0.1", 0))
    tail_sink.settimeout(30.0)
    srv = PanelServer(("127.0.0.1", 0), tail_sink.getsockname(), 2, setup, 2).start()
    feeder = socket.create_connection(srv.address, timeout=10.0)

    head = build_chain(setup)[0]
    belief = head.initial_belief()
    out0, _ = head.process(belief, 0)
    frame0 = encode_message(ChainMessage(0, 1, out0))
    meta0 = json.dumps({"kind": "meta", "time": 0, "reports": []}).encode()
    sink_conn, _ = None, None
    try:
        for _ in range(2):  # duplicate delivery of time 0
            _send_frame(feeder, frame0)
            _send_frame(feeder, meta0)
        out1, _ = head.process(quantize_roundtrip(ChainMessage(0, 1, out0)).payload, 1)
        _send_frame(feeder, encode_message(ChainMessage(1, 1, out1)))
        _send_frame(feeder, meta0.replace(b'"time":0', b'"time":1'))
        sink_conn, _ = tail_sink.accept()
        sink_conn.settimeout(30.0)
        got_times = []
        for _ in range(2):  # one output per distinct input time
            msg = decode_message(_recv_frame(sink_conn))
            json.loads(_recv_frame(sink_conn))
            got_times.append(msg.time_index)
        assert got_times == [0, 1]
    finally:
        feeder.close()
        if sink_conn:
            sink_conn.close()
        tail_sink.close()
        srv.stop()
        srv.join(5.0)


def test_socket_out_of_order_frame_aborts_panel():
    setup = _setup(j=2, n_steps=5, n_particles=128)
    tail_sink = socket.create_server(("127.0.0.1", 0))
    srv = PanelServer(("127.0.0.1", 0), tail_sink.getsockname(), 2, setup, 2).start()
    feeder = socket.create_connection(srv.address, timeout=10.0)
    head = build_chain(setup)[0]
    out0, _ = head.process(head.initial_belief(), 0)
    frame = encode_message(ChainMessage(3, 1, out0))  # future time index
    meta = json.dumps({"kind": "meta", "time": 3, "reports": []}).encode()
    try:
        _send_frame(feeder, frame)
        _send_frame(feeder, meta)
        srv.join(10.0)
        assert isinstance(srv.error, OutOfOrderError)
    finally:
        feeder.close()
        tail_sink.close()
        srv.stop()
