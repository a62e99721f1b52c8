"""Line-delimited JSON wire protocol for driving a tracker in another process.

One UTF-8 JSON object per newline-terminated line, at most one request in
flight per connection. The server writes a hello line on connect, the
client answers with its own hello, then requests flow strictly
request/response. Frames travel as base64 PNG (8-bit quantized with the
same rounding the engine uses for file export). Canonical encoding is
``json.dumps(..., sort_keys=True, separators=(",", ":"))``, which makes
byte-identical golden transcripts meaningful. See protocol/PROTOCOL.md
for the full message grammar.
"""

from __future__ import annotations

import base64
import io
import json
import os
import selectors
import shlex
import socket
import subprocess
import sys
import threading
import time
from typing import Callable

import numpy as np
from PIL import Image

from .core import (
    BoundingBox,
    ContractViolation,
    ImageBuffer,
    OracleError,
    dequantize,
    quantize_u8,
)
from .trackers import TrackerSession

PROTOCOL_NAME = "tracker-oracle"
PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 30.0


class TransportError(OracleError):
    """The connection failed: timeout, broken pipe, or malformed framing."""


class RemoteTrackerError(OracleError):
    """The remote side answered with a tracker-level error."""


def encode_line(message: dict) -> bytes:
    """Canonical wire form: sorted keys, no spaces, newline-terminated UTF-8."""
    return json.dumps(message, sort_keys=True, separators=(",", ":")).encode() + b"\n"


def decode_line(line: bytes) -> dict:
    msg = json.loads(line.decode("utf-8"))
    if not isinstance(msg, dict) or "kind" not in msg:
        raise ValueError("message must be a JSON object with a 'kind' field")
    return msg


def hello_message() -> dict:
    return {"kind": "hello", "protocol": PROTOCOL_NAME, "version": PROTOCOL_VERSION}


def image_to_wire(img: ImageBuffer) -> dict:
    """Quantize to 8 bits and pack as base64 PNG with explicit dimensions."""
    arr = quantize_u8(img)
    if arr.shape[2] == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return {
        "width": img.width,
        "height": img.height,
        "channels": img.channels,
        "png_base64": base64.b64encode(buf.getvalue()).decode("ascii"),
    }


def image_from_wire(payload: dict) -> ImageBuffer:
    raw = base64.b64decode(payload["png_base64"])
    with Image.open(io.BytesIO(raw)) as pil:
        arr = np.asarray(pil.convert("L" if payload["channels"] == 1 else "RGB"))
    img = dequantize(arr)
    if (img.width, img.height, img.channels) != (
        payload["width"],
        payload["height"],
        payload["channels"],
    ):
        raise ValueError(
            f"decoded image is {img.width}x{img.height}x{img.channels}, "
            f"header says {payload['width']}x{payload['height']}x{payload['channels']}"
        )
    return img


def box_to_wire(box: BoundingBox) -> dict:
    return {"x": box.x, "y": box.y, "w": box.w, "h": box.h}


def box_from_wire(payload: dict) -> BoundingBox:
    return BoundingBox(payload["x"], payload["y"], payload["w"], payload["h"])


# ---------------------------------------------------------------------------
# server

def _error(frame_id, category: str, message: str) -> dict:
    return {"kind": "error", "frame_id": frame_id, "category": category, "message": message}


def serve_stream(rfile, wfile, session_factory: Callable[[], TrackerSession]) -> None:
    """Serve one connection over binary file-like objects until EOF.

    Protocol errors (bad JSON, unknown kinds, missing fields) answer with
    category "protocol" and keep the connection alive; tracker faults
    answer with category "remote" and also keep it alive.
    """

    def reply(message: dict) -> None:
        wfile.write(encode_line(message))
        wfile.flush()

    reply(hello_message())
    first = rfile.readline()
    if not first:
        return
    try:
        msg = decode_line(first)
        if msg.get("kind") != "hello" or msg.get("protocol") != PROTOCOL_NAME:
            reply(_error(-1, "protocol", "expected a hello line"))
            return
        if msg.get("version") != PROTOCOL_VERSION:
            reply(_error(-1, "protocol", f"unsupported version {msg.get('version')!r}"))
            return
    except (ValueError, UnicodeDecodeError):
        # Fixed text: conformance transcripts compare bytes, so the message
        # must not depend on any particular JSON parser's error strings.
        reply(_error(-1, "protocol", "bad hello: invalid JSON"))
        return

    session: TrackerSession | None = None
    for line in iter(rfile.readline, b""):
        if not line.strip():
            continue
        try:
            msg = decode_line(line)
        except (ValueError, UnicodeDecodeError):
            reply(_error(-1, "protocol", "unparseable message: invalid JSON"))
            continue
        frame_id = msg.get("frame_id", -1)
        kind = msg.get("kind")
        try:
            if kind == "init":
                image = image_from_wire(msg["image"])
                box = box_from_wire(msg["box"])
                session = session_factory()
                session.init(image, box)
                reply({"kind": "ack", "frame_id": frame_id})
            elif kind == "track":
                if session is None:
                    reply(_error(frame_id, "remote", "uninitialized: init must precede track"))
                    continue
                image = image_from_wire(msg["image"])
                box = session.track(image)
                reply({"kind": "box", "frame_id": frame_id, "box": box_to_wire(box)})
            elif kind == "reset":
                session = None
                reply({"kind": "ack", "frame_id": frame_id})
            else:
                reply(_error(frame_id, "protocol", f"unknown kind {kind!r}"))
        except KeyError as e:
            reply(_error(frame_id, "protocol", f"missing field {e}"))
        except (ContractViolation, OracleError, ValueError) as e:
            reply(_error(frame_id, "remote", str(e)))


def serve(
    session_factory: Callable[[], TrackerSession],
    transport: str = "stdio",
    max_connections: int | None = None,
) -> None:
    """Run a tracker server on stdio or on ``tcp:HOST:PORT`` until shutdown."""
    if transport == "stdio":
        serve_stream(sys.stdin.buffer, sys.stdout.buffer, session_factory)
        return
    if transport.startswith("tcp:"):
        rest = transport[len("tcp:") :]
        host, _, port_text = rest.rpartition(":")
        if not host or not port_text.isdigit():
            raise ContractViolation(f"TCP transport needs tcp:HOST:PORT, got {transport!r}")
        server = socket.create_server((host, int(port_text)))

        def _serve_conn(conn: socket.socket) -> None:
            with conn:
                serve_stream(conn.makefile("rb"), conn.makefile("wb"), session_factory)

        # one thread per connection: a caller may hold several sessions open
        # at once (the attack runs a clean and an adversarial session in lockstep)
        served = 0
        threads: list[threading.Thread] = []
        try:
            while max_connections is None or served < max_connections:
                conn, _ = server.accept()
                worker = threading.Thread(target=_serve_conn, args=(conn,), daemon=True)
                worker.start()
                threads.append(worker)
                served += 1
        finally:
            server.close()
        for worker in threads:
            worker.join()
        return
    raise ContractViolation(f"unknown transport {transport!r}")


# ---------------------------------------------------------------------------
# client

class _Channel:
    """Newline-framed byte channel with a receive deadline."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def send_line(self, data: bytes) -> None:
        raise NotImplementedError

    def _recv_chunk(self, wait: float) -> bytes | None:
        """One chunk of bytes, b'' on EOF, None if nothing arrived within ``wait``."""
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError

    def recv_line(self, timeout: float) -> bytes:
        deadline = time.monotonic() + timeout
        while b"\n" not in self._buf:
            wait = deadline - time.monotonic()
            if wait <= 0:
                raise TransportError(f"no response within {timeout:.1f}s")
            chunk = self._recv_chunk(wait)
            if chunk == b"":
                raise TransportError("connection closed by the remote end")
            if chunk:
                self._buf.extend(chunk)
        line, _, rest = bytes(self._buf).partition(b"\n")
        self._buf = bytearray(rest)
        return line


class _PipeChannel(_Channel):
    def __init__(self, command: str) -> None:
        super().__init__()
        self._proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            bufsize=0,
        )
        self._selector = selectors.DefaultSelector()
        self._selector.register(self._proc.stdout, selectors.EVENT_READ)

    def send_line(self, data: bytes) -> None:
        try:
            self._proc.stdin.write(data)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as e:
            raise TransportError(f"server process closed stdin: {e}") from e

    def _recv_chunk(self, wait: float) -> bytes | None:
        if not self._selector.select(wait):
            return None
        return os.read(self._proc.stdout.fileno(), 65536)

    def close(self) -> None:
        try:
            self._selector.close()
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.terminate()
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()
        except (OSError, ValueError):
            pass


class _SocketChannel(_Channel):
    def __init__(self, endpoint: tuple[str, int], timeout: float) -> None:
        super().__init__()
        try:
            self._sock = socket.create_connection(endpoint, timeout=timeout)
        except OSError as e:
            raise TransportError(f"cannot connect to {endpoint[0]}:{endpoint[1]}: {e}") from e

    def send_line(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as e:
            raise TransportError(f"send failed: {e}") from e

    def _recv_chunk(self, wait: float) -> bytes | None:
        self._sock.settimeout(wait)
        try:
            return self._sock.recv(65536)
        except socket.timeout:
            return None
        except OSError as e:
            raise TransportError(f"receive failed: {e}") from e

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class BridgeSession(TrackerSession):
    """TrackerSession proxy that forwards init/track over the wire.

    Frames are quantized to 8 bits by PNG marshalling, so a bridged
    tracker sees exactly what a QuantizedTracker-wrapped local one sees.
    """

    def __init__(self, channel: _Channel, timeout: float = DEFAULT_TIMEOUT) -> None:
        super().__init__()
        self._channel = channel
        self._timeout = timeout
        self._next_id = 0
        self._handshake()

    def _handshake(self) -> None:
        line = self._channel.recv_line(self._timeout)
        try:
            msg = decode_line(line)
        except (ValueError, UnicodeDecodeError) as e:
            raise TransportError(f"bad server hello: {e}") from e
        if msg.get("kind") != "hello" or msg.get("protocol") != PROTOCOL_NAME:
            raise TransportError(f"unexpected greeting: {msg}")
        if msg.get("version") != PROTOCOL_VERSION:
            raise TransportError(f"protocol version mismatch: {msg.get('version')!r}")
        self._channel.send_line(encode_line(hello_message()))

    def _request(self, message: dict, expected_kind: str) -> dict:
        frame_id = self._next_id
        self._next_id += 1
        message = dict(message, frame_id=frame_id)
        self._channel.send_line(encode_line(message))
        line = self._channel.recv_line(self._timeout)
        try:
            reply = decode_line(line)
        except (ValueError, UnicodeDecodeError) as e:
            raise TransportError(f"unparseable response: {e}") from e
        if reply.get("frame_id") != frame_id:
            raise TransportError(
                f"response frame_id {reply.get('frame_id')!r} does not match request {frame_id}"
            )
        if reply.get("kind") == "error":
            detail = f"{reply.get('category', '?')}: {reply.get('message', '')}"
            if reply.get("category") == "remote":
                raise RemoteTrackerError(detail)
            raise TransportError(detail)
        if reply.get("kind") != expected_kind:
            raise TransportError(f"expected {expected_kind!r}, got {reply.get('kind')!r}")
        return reply

    def _on_init(self, frame: ImageBuffer, box: BoundingBox) -> None:
        self._request(
            {"kind": "init", "image": image_to_wire(frame), "box": box_to_wire(box)}, "ack"
        )

    def _on_track(self, frame: ImageBuffer) -> BoundingBox:
        reply = self._request({"kind": "track", "image": image_to_wire(frame)}, "box")
        try:
            return box_from_wire(reply["box"])
        except (KeyError, TypeError, ContractViolation) as e:
            raise RemoteTrackerError(f"remote returned an invalid box: {e}") from e

    def reset(self) -> None:
        self._request({"kind": "reset"}, "ack")
        self._shape = None
        self.last_box = None

    def close(self) -> None:
        self._channel.close()

    def __del__(self) -> None:
        try:
            self.close()
        except Exception:
            pass


def connect(
    command: str | None = None,
    endpoint: tuple[str, int] | str | None = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> BridgeSession:
    """Open a session to a tracker server: spawn ``command`` or dial ``endpoint``.

    ``endpoint`` is a (host, port) pair or a "HOST:PORT" string.
    """
    if (command is None) == (endpoint is None):
        raise ContractViolation("pass exactly one of command or endpoint")
    if command is not None:
        channel: _Channel = _PipeChannel(command)
    else:
        if isinstance(endpoint, str):
            host, _, port_text = endpoint.rpartition(":")
            if not host or not port_text.isdigit():
                raise ContractViolation(f"endpoint needs HOST:PORT, got {endpoint!r}")
            endpoint = (host, int(port_text))
        channel = _SocketChannel(endpoint, timeout)
    try:
        return BridgeSession(channel, timeout=timeout)
    except TransportError:
        channel.close()
        raise
