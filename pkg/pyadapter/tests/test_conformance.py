"""Protocol conformance against the recorded golden transcript.

A conforming server, fed the transcript's `in` lines in order, must emit
exactly its `out` lines, byte for byte.
"""

import json
from pathlib import Path

from serveutil import HELLO_LINE, request_bytes, serve_bytes

from pyadapter.bindings import constant_box_binding

TRANSCRIPT = Path(__file__).resolve().parents[2] / "protocol" / "golden_transcript.jsonl"


def load_transcript():
    records = [json.loads(line) for line in TRANSCRIPT.read_text().splitlines()]
    sent = b"".join(r["line"].encode() + b"\n" for r in records if r["dir"] == "in")
    expected = [r["line"].encode() for r in records if r["dir"] == "out"]
    return sent, expected


def test_golden_transcript_replays_byte_for_byte():
    sent, expected = load_transcript()
    binding = constant_box_binding((2.0, 3.0, 5.0, 4.0))
    assert serve_bytes(binding, sent) == expected


def test_transcript_covers_the_frozen_error_cases():
    _, expected = load_transcript()
    errors = [json.loads(line) for line in expected if b'"error"' in line]
    assert [(e["category"], e["message"]) for e in errors] == [
        ("protocol", "unknown kind 'bogus'"),
        ("protocol", "unparseable message: invalid JSON"),
        ("remote", "uninitialized: init must precede track"),
    ]


def one_error(payload: bytes) -> dict:
    """Serve payload; expect hello then exactly one error line, session closed."""
    lines = serve_bytes(constant_box_binding((2, 3, 5, 4)), payload)
    assert lines[0] == HELLO_LINE.rstrip(b"\n")
    assert len(lines) == 2
    msg = json.loads(lines[1])
    assert msg["kind"] == "error"
    assert msg["category"] == "protocol"
    assert msg["frame_id"] == -1
    return msg


def test_rejects_wrong_version_hello():
    payload = request_bytes(
        {"kind": "hello", "protocol": "tracker-oracle", "version": 2},
        {"kind": "reset", "frame_id": 1},  # must not be answered
    )
    assert one_error(payload)["message"] == "unsupported version 2"


def test_rejects_non_hello_first_message():
    payload = request_bytes({"kind": "reset", "frame_id": 1})
    assert one_error(payload)["message"] == "expected a hello line"


def test_rejects_unparseable_hello():
    assert one_error(b"garbage\n")["message"] == "bad hello: invalid JSON"


def test_eof_after_server_hello_is_silent():
    lines = serve_bytes(constant_box_binding((2, 3, 5, 4)), b"")
    assert lines == [HELLO_LINE.rstrip(b"\n")]


def test_in_band_errors_do_not_close_the_session():
    sent, _ = load_transcript()
    init_line = sent.split(b"\n")[1] + b"\n"  # transcript's init request
    payload = request_bytes(
        HELLO_LINE,
        {"kind": "bogus", "frame_id": 1},
        b"not json either\n",
        init_line,
        {"kind": "reset", "frame_id": 9},
    )
    lines = serve_bytes(constant_box_binding((2, 3, 5, 4)), payload)
    kinds = [json.loads(l)["kind"] for l in lines]
    assert kinds == ["hello", "error", "error", "ack", "ack"]


def test_missing_field_is_a_protocol_error_and_session_survives():
    payload = request_bytes(
        HELLO_LINE,
        {"kind": "track", "frame_id": 3},  # uninitialized wins over missing image
        {"kind": "init", "frame_id": 4, "box": {"x": 1.0, "y": 1.0, "w": 2.0, "h": 2.0}},
        {"kind": "reset", "frame_id": 5},
    )
    lines = serve_bytes(constant_box_binding((2, 3, 5, 4)), payload)
    uninit, missing, reset = (json.loads(l) for l in lines[1:])
    assert (uninit["category"], uninit["message"]) == (
        "remote",
        "uninitialized: init must precede track",
    )
    assert (missing["category"], missing["message"]) == ("protocol", "missing field 'image'")
    assert missing["frame_id"] == 4
    assert reset == {"kind": "ack", "frame_id": 5}


def test_blank_lines_are_skipped():
    payload = HELLO_LINE + b"\n\n" + request_bytes({"kind": "reset", "frame_id": 1}) + b"\n"
    lines = serve_bytes(constant_box_binding((2, 3, 5, 4)), payload)
    assert [json.loads(l)["kind"] for l in lines] == ["hello", "ack"]
