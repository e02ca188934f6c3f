import socket
import threading
import time

import numpy as np
import pytest

from exogait.config import RunConfig
from exogait.runtime import (ControlLoop, protocol as proto, serve_loop,
                             serve_replay, write_session_log, read_session_log)
from exogait.synth import SubjectProfile


class Client:
    """Minimal blocking protocol client for tests."""

    def __init__(self, port, timeout=10.0):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=timeout)
        self.seq = 0

    def send(self, kind, **payload):
        self.seq += 1
        self.sock.sendall(proto.encode(kind, self.seq, **payload))

    def send_raw_version(self, kind, version, **payload):
        import json, struct
        self.seq += 1
        body = {"v": version, "kind": kind, "seq": self.seq}
        body.update(payload)
        blob = json.dumps(body).encode()
        self.sock.sendall(struct.pack(">I", len(blob)) + blob)

    def recv(self):
        return proto.read_frame(self.sock)

    def recv_until(self, kind, limit=400):
        for _ in range(limit):
            msg = self.recv()
            if msg is None:
                raise AssertionError("connection closed while waiting")
            if msg["kind"] == kind:
                return msg
        raise AssertionError(f"no {kind} message within {limit} frames")

    def close(self):
        self.sock.close()


class TestProtocol:
    def test_encode_decode_round_trip(self):
        frame = proto.encode("tick", 7, t=1.25, k=[1, 2, 3, 4])
        msg = proto.decode(frame[4:])
        assert msg["kind"] == "tick" and msg["seq"] == 7
        assert msg["v"] == proto.PROTOCOL_VERSION
        assert msg["k"] == [1, 2, 3, 4]

    def test_unknown_kind_rejected(self):
        with pytest.raises(proto.ProtocolError):
            proto.encode("shutdown", 1)
        with pytest.raises(proto.ProtocolError):
            proto.decode(b'{"kind": "nope", "v": 1, "seq": 1}')

    def test_missing_fields_rejected(self):
        with pytest.raises(proto.ProtocolError):
            proto.decode(b'{"kind": "tick"}')


@pytest.fixture
def live_server(stub_bundle):
    cfg = RunConfig(duration_s=30.0, seed=9, lockstep=True)
    loop = ControlLoop(stub_bundle, cfg, profile=SubjectProfile("SV", rng_seed=9),
                       mc_samples=16)
    server = serve_loop(loop, port=0)
    server.start()
    th = threading.Thread(target=lambda: loop.run_lockstep(pace=2.0),
                          daemon=True)
    th.start()
    yield loop, server
    server.stop()


class TestLiveService:
    def test_hello_snapshot_then_ticks(self, live_server):
        loop, server = live_server
        c = Client(server.port)
        hello = c.recv()
        assert hello["kind"] == "hello"
        assert hello["v"] == proto.PROTOCOL_VERSION
        snap = c.recv()
        assert snap["kind"] == "snapshot"
        assert snap["feature_names"][0] == "cos_gp_L"
        assert "feature_ranges" in snap
        tick = c.recv_until("tick")
        assert len(tick["self_mu"]) == 12
        assert len(tick["k"]) == 4
        c.close()

    def test_override_round_trip_within_two_periods(self, live_server):
        loop, server = live_server
        c = Client(server.port)
        c.recv(); c.recv()
        before = c.recv_until("tick")
        c.send("override_set", features={"c_L": 0.33})
        ack = c.recv_until("override_set")
        assert ack["features"] == {"c_L": 0.33}
        deadline = before["t"] + 5.0
        while True:
            tick = c.recv_until("tick")
            if tick["override"].get("c_L") == 0.33:
                applied_at = tick["t"]
                break
            assert tick["t"] < deadline, "override never echoed"
        idx = 8  # c_L
        assert tick["applied_mu"][idx] == pytest.approx(0.33, abs=1e-6)
        # clearing restores the self-selected estimate
        c.send("override_clear")
        c.recv_until("override_clear")
        for _ in range(60):
            tick = c.recv_until("tick")
            if not tick["override"]:
                break
        assert tick["applied_mu"][idx] == pytest.approx(tick["self_mu"][idx],
                                                        abs=1e-9)
        c.close()

    def test_malformed_override_rejected_without_side_effect(self, live_server):
        loop, server = live_server
        c = Client(server.port)
        c.recv(); c.recv()
        c.send("override_set", features={"warp_factor": 9.0})
        err = c.recv_until("error")
        assert err["code"] == "rejected"
        tick = c.recv_until("tick")
        assert tick["override"] == {}
        c.close()

    def test_version_mismatch_gets_error(self, live_server):
        loop, server = live_server
        c = Client(server.port)
        c.recv(); c.recv()
        c.send_raw_version("override_set", version=99, features={"c_L": 0.2})
        err = c.recv_until("error")
        assert err["code"] == "version_mismatch"
        c.close()

    def test_second_subscriber_gets_snapshot(self, live_server):
        loop, server = live_server
        c1 = Client(server.port)
        c1.recv(); c1.recv(); c1.recv_until("tick")
        c2 = Client(server.port)
        assert c2.recv()["kind"] == "hello"
        snap = c2.recv()
        assert snap["kind"] == "snapshot"
        assert snap["last_tick"] is not None
        c1.close(); c2.close()


class TestReplay:
    def test_replay_streams_recorded_ticks(self, stub_bundle, tmp_path):
        cfg = RunConfig(duration_s=2.0, seed=3, lockstep=True)
        loop = ControlLoop(stub_bundle, cfg,
                           profile=SubjectProfile("RP", rng_seed=3),
                           mc_samples=16)
        loop.run_lockstep()
        path = tmp_path / "log.csv"
        write_session_log(loop.ticks, path)
        log = read_session_log(path)
        server, feeder = serve_replay(log, port=0, speed=50.0)
        server.start()
        c = Client(server.port)
        hello = c.recv()
        snap = c.recv()
        assert snap["session"] == "replay"
        assert snap["n_ticks"] == len(log)
        feeder.start()
        first = c.recv_until("tick")
        assert first["t"] == pytest.approx(loop.ticks[0].t, abs=1e-5)
        c.send("override_set", features={"c_L": 0.1})
        err = c.recv_until("error")
        assert err["code"] == "rejected"
        c.close()
        server.stop()
