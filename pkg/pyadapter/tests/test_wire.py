import json

import numpy as np
import pytest

from pyadapter import wire


def test_canonical_line_encoding():
    assert wire.encode_line({"b": 1, "a": [2, 3]}) == b'{"a":[2,3],"b":1}\n'


def test_decode_line_round_trips():
    msg = {"kind": "reset", "frame_id": 5}
    assert wire.decode_line(wire.encode_line(msg).rstrip(b"\n")) == msg


def test_decode_line_rejects_invalid_json():
    with pytest.raises(wire.WireError, match="unparseable message: invalid JSON"):
        wire.decode_line(b"this is not json")


def test_decode_line_rejects_non_object():
    with pytest.raises(wire.WireError, match="not an object"):
        wire.decode_line(b"[1,2,3]")


def test_image_round_trip_grayscale():
    rng = np.random.default_rng(0)
    frame = rng.integers(0, 256, size=(12, 16), dtype=np.uint8)
    decoded = wire.decode_image(wire.encode_image(frame))
    assert decoded.dtype == np.uint8
    assert np.array_equal(decoded, frame)


def test_image_round_trip_rgb():
    rng = np.random.default_rng(1)
    frame = rng.integers(0, 256, size=(9, 7, 3), dtype=np.uint8)
    assert np.array_equal(wire.decode_image(wire.encode_image(frame)), frame)


def test_encode_image_quantizes_to_8bit_grid():
    # clamp to [0,255], round half to even
    frame = np.array([[100.5, 101.5, -3.0, 300.0]])
    decoded = wire.decode_image(wire.encode_image(frame))
    assert decoded.tolist() == [[100, 102, 0, 255]]


def test_decode_image_verifies_header_dimensions():
    payload = wire.encode_image(np.zeros((12, 16), dtype=np.uint8))
    payload["width"] = 17
    with pytest.raises(wire.WireError, match="header says"):
        wire.decode_image(payload)


def test_decode_image_rejects_bad_channel_count():
    payload = wire.encode_image(np.zeros((4, 4), dtype=np.uint8))
    payload["channels"] = 2
    with pytest.raises(wire.WireError, match="channel count"):
        wire.decode_image(payload)


def test_decode_image_rejects_garbage_payload():
    payload = wire.encode_image(np.zeros((4, 4), dtype=np.uint8))
    payload["png_base64"] = "aGVsbG8="
    with pytest.raises(wire.WireError, match="undecodable"):
        wire.decode_image(payload)


def test_box_encodes_as_floats():
    line = wire.encode_line({"box": wire.encode_box((2, 3, 5, 4))})
    assert json.loads(line) == {"box": {"x": 2.0, "y": 3.0, "w": 5.0, "h": 4.0}}
    assert b'"h":4.0' in line  # floats on the wire, not ints


@pytest.mark.parametrize(
    "payload",
    [
        {"x": 0.0, "y": 0.0, "w": 0.0, "h": 4.0},
        {"x": 0.0, "y": 0.0, "w": 5.0, "h": -1.0},
        {"x": float("nan"), "y": 0.0, "w": 5.0, "h": 4.0},
        {"x": 0.0, "y": float("inf"), "w": 5.0, "h": 4.0},
    ],
)
def test_decode_box_rejects_degenerate_boxes(payload):
    with pytest.raises(wire.WireError):
        wire.decode_box(payload)


def test_hello_validation():
    assert wire.decode_hello(serialize(wire.HELLO)) == wire.HELLO
    with pytest.raises(wire.WireError, match="bad hello: invalid JSON"):
        wire.decode_hello(b"nope")
    with pytest.raises(wire.WireError, match="expected a hello line"):
        wire.decode_hello(serialize({"kind": "init", "frame_id": 1}))
    with pytest.raises(wire.WireError, match="unsupported version 2"):
        wire.decode_hello(serialize({"kind": "hello", "protocol": "tracker-oracle", "version": 2}))
    with pytest.raises(wire.WireError, match="unsupported protocol"):
        wire.decode_hello(serialize({"kind": "hello", "protocol": "other", "version": 1}))


def serialize(msg) -> bytes:
    return wire.encode_line(msg).rstrip(b"\n")
