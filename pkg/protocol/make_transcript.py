"""Regenerate golden_transcript.jsonl — a frozen wire-protocol conversation.

The conversation drives a constant-box tracker through the handshake, init,
track, reset, re-init, and the recoverable error cases. Running this script
must be deterministic; the output file should never change.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from advtrack.bridge import encode_line, hello_message, image_to_wire, serve_stream
from advtrack.core import BoundingBox, ImageBuffer
from advtrack.trackers import ConstantBoxTracker

OUT = Path(__file__).parent / "golden_transcript.jsonl"


def _test_image(width: int = 16, height: int = 12) -> ImageBuffer:
    ys, xs = np.mgrid[0:height, 0:width]
    return ImageBuffer(((xs * 16 + ys * 3) % 256).astype(np.float64)[:, :, None])


def main() -> None:
    image = image_to_wire(_test_image())
    box = {"x": 2.0, "y": 3.0, "w": 5.0, "h": 4.0}
    requests = [
        encode_line(hello_message()),
        encode_line({"kind": "init", "frame_id": 1, "image": image, "box": box}),
        encode_line({"kind": "track", "frame_id": 2, "image": image}),
        encode_line({"kind": "track", "frame_id": 3, "image": image}),
        encode_line({"kind": "bogus", "frame_id": 4}),
        b"this is not json\n",
        encode_line({"kind": "reset", "frame_id": 5}),
        encode_line({"kind": "track", "frame_id": 6, "image": image}),
        encode_line({"kind": "init", "frame_id": 7, "image": image, "box": box}),
        encode_line({"kind": "track", "frame_id": 8, "image": image}),
    ]

    rfile = io.BytesIO(b"".join(requests))
    wfile = io.BytesIO()
    serve_stream(rfile, wfile, lambda: ConstantBoxTracker(BoundingBox(**box)))
    responses = wfile.getvalue().split(b"\n")[:-1]

    records = []
    # server hello precedes everything; afterwards requests and responses
    # alternate strictly (one in flight)
    records.append({"dir": "out", "line": responses[0].decode()})
    for req, resp in zip(requests, [None] + responses[1:]):
        records.append({"dir": "in", "line": req.decode().rstrip("\n")})
        if resp is not None:
            records.append({"dir": "out", "line": resp.decode()})

    with OUT.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote {len(records)} records to {OUT}")


if __name__ == "__main__":
    main()
