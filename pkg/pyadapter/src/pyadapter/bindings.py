"""Example bindings: enough to exercise the adapter with zero heavy deps.

Real trackers are wrapped the same way — two callables closing over model
state (see the README how-to).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .adapter import AdapterBinding
from .wire import WireError, validate_box


def constant_box_binding(box, transport="stdio") -> AdapterBinding:
    """A dummy that ignores every frame and always answers the same box."""
    try:
        validate_box(box)
    except WireError as e:
        raise ValueError(str(e)) from None
    fixed = tuple(float(v) for v in box)
    return AdapterBinding(
        init_fn=lambda frame, box: None,
        track_fn=lambda frame: fixed,
        transport=transport,
    )


def _gray(frame: np.ndarray) -> np.ndarray:
    arr = np.asarray(frame, dtype=np.float64)
    return arr.mean(axis=2) if arr.ndim == 3 else arr


def template_matching_binding(search_radius: int = 8, transport="stdio") -> AdapterBinding:
    """A toy tracker: SSD template match in a window around the last box.

    The template is cropped once at init and never updated; the box keeps its
    initial size and only translates. Good enough to follow rigid motion on
    synthetic sequences — and to demonstrate wrapping something real.
    """
    if search_radius < 1:
        raise ValueError(f"search_radius must be >= 1, got {search_radius}")
    state: dict = {}

    def init_fn(frame, box) -> None:
        gray = _gray(frame)
        fh, fw = gray.shape
        x, y, w, h = (int(round(v)) for v in box)
        w, h = max(w, 1), max(h, 1)
        x = int(np.clip(x, 0, max(fw - w, 0)))
        y = int(np.clip(y, 0, max(fh - h, 0)))
        if x + w > fw or y + h > fh:
            raise ValueError(f"init box {box!r} does not fit a {fw}x{fh} frame")
        state["template"] = gray[y : y + h, x : x + w].copy()
        state["box"] = (x, y, w, h)

    def track_fn(frame) -> tuple[float, float, float, float]:
        gray = _gray(frame)
        fh, fw = gray.shape
        template = state["template"]
        x, y, w, h = state["box"]
        x0 = max(x - search_radius, 0)
        y0 = max(y - search_radius, 0)
        x1 = min(x + search_radius, fw - w)
        y1 = min(y + search_radius, fh - h)
        if x1 < x0 or y1 < y0:
            return tuple(float(v) for v in (x, y, w, h))
        region = gray[y0 : y1 + h, x0 : x1 + w]
        windows = sliding_window_view(region, (h, w))
        ssd = ((windows - template) ** 2).sum(axis=(2, 3))
        iy, ix = np.unravel_index(int(np.argmin(ssd)), ssd.shape)
        state["box"] = (x0 + int(ix), y0 + int(iy), w, h)
        return tuple(float(v) for v in state["box"])

    return AdapterBinding(init_fn=init_fn, track_fn=track_fn, transport=transport)
