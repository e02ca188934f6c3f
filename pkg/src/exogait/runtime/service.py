"""Telemetry and override service over a TCP stream socket.

On connect a client receives ``hello`` (protocol version), then a
``snapshot`` of the current session, then ``tick`` messages decimated to
the telemetry rate.  Clients may send ``override_set`` / ``override_clear``
at any point; changes are swapped in atomically before the next inference.
Malformed or version-skewed messages get an ``error`` reply and leave the
run untouched.  Replay mode serves a recorded session log instead of a
live loop, at real-time or scaled speed.
"""

from __future__ import annotations

import socket
import socketserver
import threading
import time

import numpy as np

from .. import impedance as imp
from ..kinematics import FEATURE_NAMES, InvalidInputError
from . import protocol as proto
from .log import SessionLog


def tick_payload(tick):
    return {
        "t": round(tick.t, 6),
        "self_mu": [round(float(v), 6) for v in tick.self_mu],
        "self_sigma": [round(float(v), 6) for v in tick.self_sigma],
        "applied_mu": [round(float(v), 6) for v in tick.applied_mu],
        "kin_mu": [round(float(v), 6) for v in tick.kin_mu],
        "kin_sigma": [round(float(v), 6) for v in tick.kin_sigma],
        "theta": [round(float(v), 6) for v in tick.theta],
        "theta_dot": [round(float(v), 6) for v in tick.theta_dot],
        "theta_d": [round(float(v), 6) for v in tick.theta_d],
        "theta_dot_d": [round(float(v), 6) for v in tick.theta_dot_d],
        "k": [round(float(v), 4) for v in tick.k],
        "d": [round(float(v), 4) for v in tick.d],
        "power": [round(float(v), 5) for v in tick.power],
        "latency_ms": round(float(tick.latency_ms), 3),
        "segment": tick.segment,
        "mode": tick.mode,
        "safe_stop": bool(tick.safe_stop),
        "override": dict(tick.override),
        "delta_phase": float(tick.delta_phase),
        "tick_seq": int(tick.seq),
    }


class _LiveSource:
    """Bridges a running ControlLoop to the service."""

    def __init__(self, loop):
        self.loop = loop

    def snapshot(self):
        last = tick_payload(self.loop.ticks[-1]) if self.loop.ticks else None
        imp_cfg = self.loop.bundle.impedance
        return {
            "session": "live",
            "feature_names": list(FEATURE_NAMES),
            "overridable": list(imp.OVERRIDABLE),
            "feature_ranges": self.loop.bundle.feature_ranges,
            "k_s": list(imp_cfg.k_s), "d_s": list(imp_cfg.d_s),
            "sigma_max_theta": list(imp_cfg.sigma_max_theta),
            "sigma_max_theta_dot": list(imp_cfg.sigma_max_theta_dot),
            "rates": {"sensor_hz": self.loop.cfg.sensor_rate_hz,
                      "inference_hz": self.loop.cfg.inference_rate_hz,
                      "telemetry_hz": self.loop.cfg.telemetry_rate_hz},
            "override": dict(self.loop.get_override().features),
            "delta_phase": self.loop.get_override().delta_phase,
            "last_tick": last,
        }

    def apply_override(self, features, delta_phase):
        cur = self.loop.get_override()
        merged = dict(cur.features)
        merged.update(features)
        ov = imp.TherapistOverride(
            features=merged,
            delta_phase=cur.delta_phase if delta_phase is None else delta_phase)
        self.loop.set_override(ov)
        return ov

    def clear_override(self, names):
        self.loop.clear_override(names)
        return self.loop.get_override()


class TelemetryServer:
    """Threaded fan-out of pipeline ticks plus override intake."""

    def __init__(self, source, host="127.0.0.1", port=0, telemetry_hz=20.0):
        self.source = source
        self.telemetry_hz = telemetry_hz
        self._clients = []
        self._clients_lock = threading.Lock()
        self._seq = 0

        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                outer._serve_client(self.request)

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((host, port), Handler)
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True)

    def start(self):
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- tick fan-out --------------------------------------------------------

    def publish(self, tick):
        """Forward a pipeline tick to all subscribers (rate-decimated)."""
        with self._clients_lock:
            clients = list(self._clients)
        for client in clients:
            client.offer(tick)

    def _serve_client(self, sock):
        client = _ClientState(self, sock)
        with self._clients_lock:
            self._clients.append(client)
        try:
            client.run()
        finally:
            with self._clients_lock:
                if client in self._clients:
                    self._clients.remove(client)

    def next_seq(self):
        self._seq += 1
        return self._seq


class _ClientState:
    def __init__(self, server: TelemetryServer, sock):
        self.server = server
        self.sock = sock
        self.send_lock = threading.Lock()
        self._next_emit = -np.inf
        self.alive = True

    def _send(self, kind, **payload):
        frame = proto.encode(kind, self.server.next_seq(), **payload)
        with self.send_lock:
            self.sock.sendall(frame)

    def offer(self, tick):
        if not self.alive:
            return
        if tick.t < self._next_emit - 1e-12:
            return
        self._next_emit = tick.t + 1.0 / self.server.telemetry_hz
        try:
            self._send("tick", **tick_payload(tick))
        except OSError:
            self.alive = False

    def run(self):
        src = self.server.source
        try:
            self._send("hello", role="server", session=src.snapshot()["session"])
            self._send("snapshot", **src.snapshot())
        except OSError:
            return
        while self.alive:
            try:
                msg = proto.read_frame(self.sock)
            except proto.ProtocolError as exc:
                try:
                    self._send("error", code="bad_message", message=str(exc))
                except OSError:
                    pass
                continue
            except OSError:
                break
            if msg is None:
                break
            self._handle(msg)

    def _handle(self, msg):
        if msg["v"] != proto.PROTOCOL_VERSION:
            self._send("error", code="version_mismatch", reply_to=msg.get("seq"),
                       message=f"protocol {msg['v']} not supported "
                               f"(server speaks {proto.PROTOCOL_VERSION})")
            return
        kind = msg["kind"]
        try:
            if kind == "override_set":
                feats = msg.get("features", {})
                if not isinstance(feats, dict):
                    raise InvalidInputError("features must be a mapping")
                ov = self.server.source.apply_override(
                    {str(k): float(v) for k, v in feats.items()},
                    msg.get("delta_phase"))
                self._send("override_set", reply_to=msg.get("seq"),
                           features=dict(ov.features),
                           delta_phase=ov.delta_phase)
            elif kind == "override_clear":
                ov = self.server.source.clear_override(msg.get("features"))
                self._send("override_clear", reply_to=msg.get("seq"),
                           features=dict(ov.features),
                           delta_phase=ov.delta_phase)
            elif kind == "hello":
                pass
            else:
                raise InvalidInputError(f"clients may not send {kind!r}")
        except (InvalidInputError, ValueError, TypeError) as exc:
            try:
                self._send("error", code="rejected", reply_to=msg.get("seq"),
                           message=str(exc))
            except OSError:
                self.alive = False


def serve_loop(loop, host="127.0.0.1", port=0):
    """Attach a telemetry server to a ControlLoop; returns the server.

    The loop must be constructed with ``on_tick=server.publish`` or the
    caller wires it afterwards.
    """
    server = TelemetryServer(_LiveSource(loop), host=host, port=port,
                             telemetry_hz=loop.cfg.telemetry_rate_hz)
    loop.on_tick = server.publish
    return server


class _ReplayTick:
    """Adapter giving log rows the attribute surface of a PipelineTick."""

    def __init__(self, log: SessionLog, i):
        row = log.rows[i]
        idx = log._idx
        def get(name):
            return row[idx[name]]
        self.t = float(get("t"))
        self.self_mu = [float(get(f"self_mu_{n}")) for n in FEATURE_NAMES]
        self.self_sigma = [float(get(f"self_sigma_{n}")) for n in FEATURE_NAMES]
        self.applied_mu = [float(get(f"applied_mu_{n}")) for n in FEATURE_NAMES]
        self.kin_mu = [float(get(f"kin_mu_{i}")) for i in range(8)]
        self.kin_sigma = [float(get(f"kin_sigma_{i}")) for i in range(8)]
        self.theta = [float(get(f"theta_{i}")) for i in range(4)]
        self.theta_dot = [float(get(f"theta_dot_{i}")) for i in range(4)]
        self.theta_d = [float(get(f"theta_d_{i}")) for i in range(4)]
        self.theta_dot_d = [float(get(f"theta_dot_d_{i}")) for i in range(4)]
        self.k = [float(get(f"k_{i}")) for i in range(4)]
        self.d = [float(get(f"d_{i}")) for i in range(4)]
        self.power = [float(get(f"power_{i}")) for i in range(4)]
        self.latency_ms = float(get("latency_ms"))
        self.segment = get("segment")
        self.mode = get("mode")
        self.safe_stop = bool(int(get("safe_stop")))
        self.override = {}
        self.delta_phase = float(get("delta_phase"))
        self.activity = get("activity_label")
        self.seq = int(get("seq"))


class ReplaySource:
    def __init__(self, log: SessionLog):
        self.log = log

    def snapshot(self):
        first = _ReplayTick(self.log, 0) if len(self.log) else None
        return {
            "session": "replay",
            "feature_names": list(FEATURE_NAMES),
            "overridable": list(imp.OVERRIDABLE),
            "n_ticks": len(self.log),
            "t_end": float(self.log.t[-1]) if len(self.log) else 0.0,
            "last_tick": tick_payload(first) if first else None,
        }

    def apply_override(self, features, delta_phase):
        raise InvalidInputError("replay sessions do not accept overrides")

    def clear_override(self, names):
        raise InvalidInputError("replay sessions do not accept overrides")


def serve_replay(log: SessionLog, host="127.0.0.1", port=0, speed=1.0,
                 telemetry_hz=20.0):
    """Serve a recorded log; returns (server, feeder_thread).

    The feeder streams ticks at ``speed`` times real time; subscribers that
    join mid-replay receive the snapshot and then the remaining ticks.
    """
    server = TelemetryServer(ReplaySource(log), host=host, port=port,
                             telemetry_hz=telemetry_hz)

    def feed():
        if not len(log):
            return
        t0 = log.t[0]
        start = time.perf_counter()
        for i in range(len(log)):
            tick = _ReplayTick(log, i)
            lag = (tick.t - t0) / speed - (time.perf_counter() - start)
            if lag > 0:
                time.sleep(lag)
            server.publish(tick)

    feeder = threading.Thread(target=feed, daemon=True)
    return server, feeder
