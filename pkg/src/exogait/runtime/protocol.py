"""Telemetry/override wire protocol.

Frames are a 4-byte big-endian length followed by a UTF-8 JSON object.
Every message carries the protocol version ``v`` and a per-sender
monotonic sequence number ``seq``.  Kinds:

server to client: ``hello`` (version handshake), ``snapshot`` (full state
on join), ``tick`` (decimated pipeline tick), ``error``;
client to server: ``override_set``, ``override_clear``.

Units on the wire: angles rad, angular velocity rad/s, torques N*m,
power W, feature lengths m, feature velocity m/s, phase percent.
"""

from __future__ import annotations

import json
import struct

PROTOCOL_VERSION = 1
MAX_FRAME = 1 << 20

KINDS = ("hello", "snapshot", "tick", "override_set", "override_clear", "error")


class ProtocolError(Exception):
    pass


def encode(kind, seq, **payload):
    if kind not in KINDS:
        raise ProtocolError(f"unknown message kind {kind!r}")
    body = {"v": PROTOCOL_VERSION, "kind": kind, "seq": int(seq)}
    body.update(payload)
    blob = json.dumps(body, separators=(",", ":")).encode("utf-8")
    if len(blob) > MAX_FRAME:
        raise ProtocolError("message too large")
    return struct.pack(">I", len(blob)) + blob


def decode(blob):
    try:
        msg = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"unreadable message: {exc}") from exc
    if not isinstance(msg, dict) or "kind" not in msg:
        raise ProtocolError("message must be an object with a kind")
    if msg.get("kind") not in KINDS:
        raise ProtocolError(f"unknown message kind {msg.get('kind')!r}")
    if "v" not in msg or "seq" not in msg:
        raise ProtocolError("message must carry v and seq")
    return msg


def read_frame(sock):
    """Read one length-prefixed frame from a blocking socket.

    Returns None on clean EOF at a frame boundary.
    """
    header = _read_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME:
        raise ProtocolError(f"frame of {length} bytes exceeds limit")
    blob = _read_exact(sock, length)
    if blob is None:
        raise ProtocolError("connection closed mid-frame")
    return decode(blob)


def _read_exact(sock, n):
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if buf:
                raise ProtocolError("connection closed mid-frame")
            return None
        buf += chunk
    return buf
