"""Message and payload encoding for the tracker-oracle wire protocol (v1).

Implements the framing rules from ``protocol/PROTOCOL.md``: one canonical
JSON object per line, base64-PNG image payloads, plain float boxes. Frozen
error texts (the ones golden transcripts compare byte-for-byte) live here so
every caller emits identical lines.
"""

from __future__ import annotations

import base64
import io
import json
import math

import numpy as np
from PIL import Image

PROTOCOL_NAME = "tracker-oracle"
PROTOCOL_VERSION = 1

HELLO = {"kind": "hello", "protocol": PROTOCOL_NAME, "version": PROTOCOL_VERSION}


class WireError(ValueError):
    """A line or payload that cannot be used as a protocol message."""


def encode_line(msg: dict) -> bytes:
    """Canonical encoding: sorted keys, no whitespace, trailing newline."""
    return (json.dumps(msg, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def decode_line(line: bytes) -> dict:
    try:
        msg = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise WireError("unparseable message: invalid JSON") from None
    if not isinstance(msg, dict):
        raise WireError("unparseable message: not an object")
    return msg


def decode_hello(line: bytes) -> dict:
    """Validate a client hello; raises WireError with the handshake texts."""
    try:
        msg = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise WireError("bad hello: invalid JSON") from None
    if not isinstance(msg, dict) or msg.get("kind") != "hello":
        raise WireError("expected a hello line")
    protocol = msg.get("protocol")
    if protocol != PROTOCOL_NAME:
        raise WireError(f"unsupported protocol {protocol!r}")
    version = msg.get("version")
    if version != PROTOCOL_VERSION:
        raise WireError(f"unsupported version {version!r}")
    return msg


def quantize(frame: np.ndarray) -> np.ndarray:
    """Clamp to [0, 255] and round half to even onto the 8-bit grid."""
    return np.rint(np.clip(np.asarray(frame, dtype=np.float64), 0.0, 255.0)).astype(np.uint8)


def encode_image(frame: np.ndarray) -> dict:
    arr = quantize(frame)
    if arr.ndim == 2:
        channels, mode = 1, "L"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        channels, mode = 3, "RGB"
    else:
        raise WireError(f"image must be HxW or HxWx3, got shape {arr.shape}")
    height, width = arr.shape[:2]
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return {
        "width": width,
        "height": height,
        "channels": channels,
        "png_base64": base64.b64encode(buf.getvalue()).decode("ascii"),
    }


def decode_image(payload: dict) -> np.ndarray:
    """Decode a PNG image payload to uint8, verifying the header dimensions."""
    width = payload["width"]
    height = payload["height"]
    channels = payload["channels"]
    if channels not in (1, 3):
        raise WireError(f"unsupported channel count {channels!r}")
    try:
        raw = base64.b64decode(payload["png_base64"], validate=True)
        img = Image.open(io.BytesIO(raw))
        img.load()
    except KeyError:
        raise
    except Exception:
        raise WireError("undecodable image payload") from None
    arr = np.asarray(img.convert("L" if channels == 1 else "RGB"), dtype=np.uint8)
    expected = (height, width) if channels == 1 else (height, width, 3)
    if arr.shape != expected:
        raise WireError(
            f"image header says {width}x{height}x{channels}, PNG decoded to shape {arr.shape}"
        )
    return arr


def encode_box(box) -> dict:
    x, y, w, h = (float(v) for v in box)
    return {"x": x, "y": y, "w": w, "h": h}


def decode_box(payload: dict) -> tuple[float, float, float, float]:
    try:
        box = (float(payload["x"]), float(payload["y"]), float(payload["w"]), float(payload["h"]))
    except KeyError:
        raise
    except (TypeError, ValueError):
        raise WireError(f"box fields must be numbers, got {payload!r}") from None
    validate_box(box)
    return box


def validate_box(box) -> None:
    """Enforce the protocol box contract: four finite floats, w > 0, h > 0."""
    try:
        x, y, w, h = (float(v) for v in box)
    except (TypeError, ValueError):
        raise WireError(f"box must be four numbers, got {box!r}") from None
    if not all(math.isfinite(v) for v in (x, y, w, h)):
        raise WireError(f"box values must be finite, got {box!r}")
    if w <= 0 or h <= 0:
        raise WireError(f"box width and height must be positive, got w={w} h={h}")
