"""Shared test doubles and independent oracles.

The oracles here deliberately avoid the library's own arithmetic: IoU is
re-derived by counting painted pixels and L2 by a plain Python loop, so a
test failure always points at the implementation, not the test.
"""

from __future__ import annotations

import math
import socket

import numpy as np

from advtrack.core import BoundingBox, ImageBuffer, OracleError
from advtrack.trackers import TrackerSession


def raster_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Count-based IoU for integer boxes: paint both on a grid and count cells."""
    ox = int(min(a.x, b.x))
    oy = int(min(a.y, b.y))
    w = int(max(a.x + a.w, b.x + b.w)) - ox
    h = int(max(a.y + a.h, b.y + b.h)) - oy
    ga = np.zeros((h, w), dtype=bool)
    gb = np.zeros((h, w), dtype=bool)
    ga[int(a.y) - oy : int(a.y + a.h) - oy, int(a.x) - ox : int(a.x + a.w) - ox] = True
    gb[int(b.y) - oy : int(b.y + b.h) - oy, int(b.x) - ox : int(b.x + b.w) - ox] = True
    inter = int(np.count_nonzero(ga & gb))
    union = int(np.count_nonzero(ga | gb))
    return inter / union


def loop_l2(a: np.ndarray, b: np.ndarray) -> float:
    """Sum-of-squares distance via plain Python loops (small arrays only)."""
    total = 0.0
    for va, vb in zip(a.ravel().tolist(), b.ravel().tolist()):
        total += (va - vb) ** 2
    return math.sqrt(total)


def gray(values, lift: bool = True) -> ImageBuffer:
    """ImageBuffer from a 2-D array-like, adding the channel axis."""
    arr = np.asarray(values, dtype=np.float64)
    if lift and arr.ndim == 2:
        arr = arr[:, :, None]
    return ImageBuffer(arr)


def flat(value: float, h: int = 16, w: int = 16) -> ImageBuffer:
    return ImageBuffer(np.full((h, w, 1), float(value)))


class ScriptedTracker(TrackerSession):
    """Returns a fixed list of boxes, one per track() call, ignoring pixels."""

    def __init__(self, boxes):
        super().__init__()
        self._script = list(boxes)
        self._i = 0

    def _on_init(self, frame, box):
        self._i = 0

    def _on_track(self, frame):
        if self._i >= len(self._script):
            raise AssertionError("scripted tracker ran out of boxes")
        box = self._script[self._i]
        self._i += 1
        return box


class FlakyTracker(TrackerSession):
    """Answers a constant box until call ``fail_after``, then raises OracleError."""

    def __init__(self, box: BoundingBox, fail_after: int):
        super().__init__()
        self._box = box
        self._left = fail_after

    def _on_init(self, frame, box):
        pass

    def _on_track(self, frame):
        if self._left <= 0:
            raise OracleError("synthetic oracle fault")
        self._left -= 1
        return self._box


class SpyTracker(TrackerSession):
    """Records every frame it is shown and answers a constant box."""

    def __init__(self, box: BoundingBox):
        super().__init__()
        self._box = box
        self.seen: list[np.ndarray] = []

    def _on_init(self, frame, box):
        self.seen.append(frame.data.copy())

    def _on_track(self, frame):
        self.seen.append(frame.data.copy())
        return self._box


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]
