"""Serve a pair of tracking callables behind the tracker-oracle wire protocol.

``run_adapter`` turns any ``init_fn``/``track_fn`` pair into a protocol
server reachable over stdio or a TCP endpoint, so the attack CLI can target
it with ``bridge:cmd:...`` / ``bridge:tcp:HOST:PORT`` tracker specs. One
connection, one thread, one request in flight — sessions are stateful and
order-dependent, so there is nothing to parallelize.
"""

from __future__ import annotations

import socket
import sys
from dataclasses import dataclass, field
from typing import BinaryIO, Callable

import numpy as np

from . import wire

# Frozen by the golden transcript; must match byte-for-byte.
_UNINITIALIZED = "uninitialized: init must precede track"


@dataclass(frozen=True)
class AdapterBinding:
    """A tracker exposed to the protocol.

    init_fn receives (frame, box) and returns nothing; track_fn receives a
    frame and returns the predicted (x, y, w, h) with w > 0 and h > 0.
    Frames arrive as uint8 arrays, HxW (grayscale) or HxWx3 (RGB). transport
    is "stdio" or a TCP endpoint — "tcp:HOST:PORT" or a (host, port) tuple.
    """

    init_fn: Callable[[np.ndarray, tuple[float, float, float, float]], None]
    track_fn: Callable[[np.ndarray], tuple[float, float, float, float]]
    transport: str | tuple[str, int] = "stdio"


@dataclass
class _Session:
    initialized: bool = field(default=False)


def _error(frame_id: int, category: str, message: str) -> dict:
    return {"kind": "error", "frame_id": frame_id, "category": category, "message": message}


def _frame_id(msg: dict) -> int:
    fid = msg.get("frame_id", -1)
    if isinstance(fid, bool) or not isinstance(fid, int):
        return -1
    return fid


def _exception_text(exc: Exception) -> str:
    return str(exc) or type(exc).__name__


def _respond(binding: AdapterBinding, session: _Session, msg: dict) -> dict:
    fid = _frame_id(msg)
    kind = msg.get("kind")
    if kind == "init":
        # A failed init must not leave a half-initialized session behind.
        session.initialized = False
        try:
            frame = wire.decode_image(msg["image"])
        except KeyError as e:
            return _error(fid, "protocol", f"missing field {e}")
        except wire.WireError as e:
            return _error(fid, "protocol", str(e))
        try:
            box = wire.decode_box(msg["box"])
        except KeyError as e:
            return _error(fid, "protocol", f"missing field {e}")
        except wire.WireError as e:
            return _error(fid, "remote", str(e))
        try:
            binding.init_fn(frame, box)
        except Exception as e:
            return _error(fid, "remote", _exception_text(e))
        session.initialized = True
        return {"kind": "ack", "frame_id": fid}
    if kind == "track":
        if not session.initialized:
            return _error(fid, "remote", _UNINITIALIZED)
        try:
            frame = wire.decode_image(msg["image"])
        except KeyError as e:
            return _error(fid, "protocol", f"missing field {e}")
        except wire.WireError as e:
            return _error(fid, "protocol", str(e))
        try:
            box = binding.track_fn(frame)
        except Exception as e:
            return _error(fid, "remote", _exception_text(e))
        try:
            wire.validate_box(box)
        except wire.WireError as e:
            return _error(fid, "remote", f"track_fn returned an invalid box: {e}")
        return {"kind": "box", "frame_id": fid, "box": wire.encode_box(box)}
    if kind == "reset":
        session.initialized = False
        return {"kind": "ack", "frame_id": fid}
    return _error(fid, "protocol", f"unknown kind {kind!r}")


def _write(wfile: BinaryIO, msg: dict) -> None:
    wfile.write(wire.encode_line(msg))
    wfile.flush()


def _read_line(rfile: BinaryIO) -> bytes | None:
    """Next non-blank line without its newline; None at end of stream."""
    for raw in iter(rfile.readline, b""):
        line = raw.rstrip(b"\r\n")
        if line:
            return line
    return None


def serve_stream(binding: AdapterBinding, rfile: BinaryIO, wfile: BinaryIO) -> None:
    """Serve one protocol session: hello exchange, then request/response.

    Returns when the stream closes. Handshake failures emit one protocol
    error and end the session; every later error is answered in-band and the
    session continues.
    """
    _write(wfile, wire.HELLO)
    hello_line = _read_line(rfile)
    if hello_line is None:
        return
    try:
        wire.decode_hello(hello_line)
    except wire.WireError as e:
        _write(wfile, _error(-1, "protocol", str(e)))
        return
    session = _Session()
    while (line := _read_line(rfile)) is not None:
        try:
            msg = wire.decode_line(line)
        except wire.WireError as e:
            _write(wfile, _error(-1, "protocol", str(e)))
            continue
        _write(wfile, _respond(binding, session, msg))


def run_adapter(binding: AdapterBinding) -> None:
    """Serve the binding on its transport until the stream closes."""
    transport = binding.transport
    if transport == "stdio":
        serve_stream(binding, sys.stdin.buffer, sys.stdout.buffer)
        return
    host, port = _parse_tcp(transport)
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as server:
        server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        server.bind((host, port))
        server.listen(1)
        conn, _ = server.accept()
        with conn, conn.makefile("rb") as rfile, conn.makefile("wb") as wfile:
            serve_stream(binding, rfile, wfile)


def _parse_tcp(transport) -> tuple[str, int]:
    if isinstance(transport, tuple) and len(transport) == 2:
        return str(transport[0]), int(transport[1])
    if isinstance(transport, str) and transport.startswith("tcp:"):
        host, sep, port = transport[4:].rpartition(":")
        if sep and host and port.isdigit():
            return host, int(port)
    raise ValueError(f"transport must be 'stdio', 'tcp:HOST:PORT', or (host, port), got {transport!r}")
