import json

import numpy as np
import pytest

from serveutil import HELLO_LINE, request_bytes, serve_bytes

from pyadapter.adapter import AdapterBinding
from pyadapter.bindings import constant_box_binding, template_matching_binding
from pyadapter.wire import encode_image


def frame(seed: int, shape=(24, 24)) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 256, size=shape, dtype=np.uint8)


def init_msg(frame_id: int, img: np.ndarray, box) -> dict:
    x, y, w, h = (float(v) for v in box)
    return {
        "kind": "init",
        "frame_id": frame_id,
        "image": encode_image(img),
        "box": {"x": x, "y": y, "w": w, "h": h},
    }


def track_msg(frame_id: int, img: np.ndarray) -> dict:
    return {"kind": "track", "frame_id": frame_id, "image": encode_image(img)}


def boxes_from(lines: list[bytes]) -> list[tuple]:
    out = []
    for line in lines:
        msg = json.loads(line)
        if msg["kind"] == "box":
            b = msg["box"]
            out.append((b["x"], b["y"], b["w"], b["h"]))
    return out


def test_constant_binding_answers_its_box_for_every_frame():
    payload = request_bytes(
        HELLO_LINE,
        init_msg(1, frame(0), (5, 5, 4, 4)),
        *(track_msg(2 + i, frame(i + 1)) for i in range(3)),
    )
    lines = serve_bytes(constant_box_binding((2.0, 3.0, 5.0, 4.0)), payload)
    assert boxes_from(lines) == [(2.0, 3.0, 5.0, 4.0)] * 3


def test_constant_binding_validates_its_box_at_construction():
    with pytest.raises(ValueError, match="positive"):
        constant_box_binding((0.0, 0.0, 0.0, 4.0))
    with pytest.raises(ValueError, match="finite"):
        constant_box_binding((0.0, float("nan"), 5.0, 4.0))


def square_frame(x: int, y: int, size=12, shape=(64, 64)) -> np.ndarray:
    img = np.zeros(shape, dtype=np.uint8)
    img[y : y + size, x : x + size] = 255
    return img


def test_template_binding_follows_rigid_motion():
    positions = [(10, 20), (12, 21), (14, 22), (16, 23)]
    payload = request_bytes(
        HELLO_LINE,
        init_msg(1, square_frame(*positions[0]), (10, 20, 12, 12)),
        *(track_msg(2 + i, square_frame(*pos)) for i, pos in enumerate(positions[1:])),
    )
    lines = serve_bytes(template_matching_binding(search_radius=4), payload)
    assert boxes_from(lines) == [(float(x), float(y), 12.0, 12.0) for x, y in positions[1:]]


def test_template_binding_stays_inside_the_frame():
    # target walks off the left edge; the box must clamp, not go negative
    payload = request_bytes(
        HELLO_LINE,
        init_msg(1, square_frame(2, 30), (2, 30, 12, 12)),
        track_msg(2, square_frame(0, 30)),
        track_msg(3, square_frame(0, 30)),
    )
    lines = serve_bytes(template_matching_binding(search_radius=6), payload)
    for x, y, w, h in boxes_from(lines):
        assert x >= 0 and y >= 0
        assert x + w <= 64 and y + h <= 64


def test_template_binding_rejects_bad_radius():
    with pytest.raises(ValueError, match="search_radius"):
        template_matching_binding(search_radius=0)


def raising_binding(exc: Exception) -> AdapterBinding:
    def track_fn(frame):
        raise exc

    return AdapterBinding(init_fn=lambda frame, box: None, track_fn=track_fn)


def test_callable_exception_becomes_remote_error_and_session_survives():
    payload = request_bytes(
        HELLO_LINE,
        init_msg(1, frame(0), (5, 5, 4, 4)),
        track_msg(2, frame(1)),
        {"kind": "reset", "frame_id": 3},
        init_msg(4, frame(2), (5, 5, 4, 4)),
    )
    lines = serve_bytes(raising_binding(RuntimeError("tracker melted")), payload)
    error = json.loads(lines[2])
    assert error["kind"] == "error"
    assert error["category"] == "remote"
    assert error["message"] == "tracker melted"
    assert [json.loads(l)["kind"] for l in lines[3:]] == ["ack", "ack"]


def test_messageless_exception_reports_its_type():
    lines = serve_bytes(
        raising_binding(ValueError()),
        request_bytes(HELLO_LINE, init_msg(1, frame(0), (5, 5, 4, 4)), track_msg(2, frame(1))),
    )
    assert json.loads(lines[2])["message"] == "ValueError"


def test_invalid_track_result_is_a_remote_error():
    binding = AdapterBinding(init_fn=lambda f, b: None, track_fn=lambda f: (0.0, 0.0, 0.0, 10.0))
    lines = serve_bytes(
        binding,
        request_bytes(HELLO_LINE, init_msg(1, frame(0), (5, 5, 4, 4)), track_msg(2, frame(1))),
    )
    error = json.loads(lines[2])
    assert error["category"] == "remote"
    assert "invalid box" in error["message"]


def test_degenerate_init_box_is_a_remote_error():
    payload = request_bytes(HELLO_LINE, init_msg(1, frame(0), (5, 5, 0, 4)))
    error = json.loads(serve_bytes(constant_box_binding((2, 3, 5, 4)), payload)[1])
    assert error["category"] == "remote"
    assert "positive" in error["message"]


def test_failed_init_leaves_the_session_uninitialized():
    def bad_init(frame, box):
        raise RuntimeError("model load failed")

    binding = AdapterBinding(init_fn=bad_init, track_fn=lambda f: (1.0, 1.0, 2.0, 2.0))
    payload = request_bytes(
        HELLO_LINE, init_msg(1, frame(0), (5, 5, 4, 4)), track_msg(2, frame(1))
    )
    init_err, track_err = (json.loads(l) for l in serve_bytes(binding, payload)[1:])
    assert (init_err["category"], init_err["message"]) == ("remote", "model load failed")
    assert track_err["message"] == "uninitialized: init must precede track"


def test_reinit_replaces_the_session():
    payload = request_bytes(
        HELLO_LINE,
        init_msg(1, square_frame(10, 10), (10, 10, 12, 12)),
        init_msg(2, square_frame(40, 40), (40, 40, 12, 12)),
        track_msg(3, square_frame(42, 41)),
    )
    lines = serve_bytes(template_matching_binding(search_radius=4), payload)
    assert boxes_from(lines) == [(42.0, 41.0, 12.0, 12.0)]


def test_rgb_frames_reach_the_binding_as_hwc_uint8():
    seen = {}

    def init_fn(img, box):
        seen["shape"] = img.shape
        seen["dtype"] = img.dtype

    binding = AdapterBinding(init_fn=init_fn, track_fn=lambda f: (1.0, 1.0, 2.0, 2.0))
    rgb = np.random.default_rng(3).integers(0, 256, size=(10, 8, 3), dtype=np.uint8)
    serve_bytes(binding, request_bytes(HELLO_LINE, init_msg(1, rgb, (1, 1, 2, 2))))
    assert seen == {"shape": (10, 8, 3), "dtype": np.uint8}
