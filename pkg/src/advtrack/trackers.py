"""Built-in tracker sessions and test doubles.

Every tracker follows the same session contract: ``init(frame, box)``
establishes the target, then each ``track(frame)`` returns exactly one
box. Sessions are stateful and order-dependent: querying the same frame
twice may legitimately return different boxes (the correlation-filter
tracker updates itself online) and always advances internal state.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from typing import Callable

import cv2
import numpy as np

from .core import (
    BoundingBox,
    ContractViolation,
    ImageBuffer,
    Sequence,
    dequantize,
    quantize_u8,
)

_LUMA = np.array([0.299, 0.587, 0.114])


def _to_gray(frame: ImageBuffer) -> np.ndarray:
    """Luma-weighted grayscale plane as float64 (H, W)."""
    if frame.channels == 1:
        return frame.data[:, :, 0]
    return frame.data @ _LUMA


class TrackerSession(ABC):
    """Init-once, one-box-per-track session over same-shape frames."""

    def __init__(self) -> None:
        self._shape: tuple[int, int, int] | None = None
        self.last_box: BoundingBox | None = None

    def init(self, frame: ImageBuffer, box: BoundingBox) -> None:
        if box.x < 0 or box.y < 0 or box.x + box.w > frame.width or box.y + box.h > frame.height:
            raise ContractViolation(
                f"init box {box.as_xywh()} leaves the {frame.width}x{frame.height} frame"
            )
        self._shape = frame.shape
        self.last_box = box
        self._on_init(frame, box)

    def track(self, frame: ImageBuffer) -> BoundingBox:
        if self._shape is None:
            raise ContractViolation("track() called before init()")
        if frame.shape != self._shape:
            raise ContractViolation(
                f"frame shape {frame.shape} differs from init shape {self._shape}"
            )
        box = self._on_track(frame)
        self.last_box = box
        return box

    @abstractmethod
    def _on_init(self, frame: ImageBuffer, box: BoundingBox) -> None: ...

    @abstractmethod
    def _on_track(self, frame: ImageBuffer) -> BoundingBox: ...


class NCCTracker(TrackerSession):
    """Normalized cross-correlation template matcher with a frozen template.

    The template is cropped once at init; track() scans a window of
    ``search_radius`` pixels around the previous center and moves to the
    correlation peak. Scale is fixed. Deterministic given the query
    order: correlation ties resolve to the first (row-major) peak.
    """

    def __init__(self, search_radius: float | None = None) -> None:
        super().__init__()
        self._radius_arg = search_radius

    def _on_init(self, frame: ImageBuffer, box: BoundingBox) -> None:
        gray = _to_gray(frame)
        x0 = int(round(box.x))
        y0 = int(round(box.y))
        w = max(1, int(round(box.w)))
        h = max(1, int(round(box.h)))
        x0 = min(max(0, x0), frame.width - w)
        y0 = min(max(0, y0), frame.height - h)
        self._template = gray[y0 : y0 + h, x0 : x0 + w].astype(np.float32)
        self._w, self._h = w, h
        self._cx, self._cy = x0 + w / 2.0, y0 + h / 2.0
        radius = self._radius_arg
        if radius is None:
            radius = 0.5 * math.hypot(w, h)  # half the template diagonal
        self._radius = float(radius)

    def _on_track(self, frame: ImageBuffer) -> BoundingBox:
        gray = _to_gray(frame)
        H, W = gray.shape
        w, h, r = self._w, self._h, self._radius
        x0 = max(0, int(math.floor(self._cx - w / 2.0 - r)))
        y0 = max(0, int(math.floor(self._cy - h / 2.0 - r)))
        x1 = min(W, int(math.ceil(self._cx + w / 2.0 + r)))
        y1 = min(H, int(math.ceil(self._cy + h / 2.0 + r)))
        region = gray[y0:y1, x0:x1]
        if region.shape[0] < h or region.shape[1] < w:
            return BoundingBox(self._cx - w / 2.0, self._cy - h / 2.0, float(w), float(h))
        res = cv2.matchTemplate(region.astype(np.float32), self._template, cv2.TM_CCOEFF_NORMED)
        res = np.nan_to_num(res, nan=-1.0, posinf=-1.0, neginf=-1.0)
        _, _, _, max_loc = cv2.minMaxLoc(res)
        px, py = max_loc
        self._cx = x0 + px + w / 2.0
        self._cy = y0 + py + h / 2.0
        return BoundingBox(float(x0 + px), float(y0 + py), float(w), float(h))


def _hann2d(h: int, w: int) -> np.ndarray:
    return np.outer(np.hanning(h), np.hanning(w))


class MosseTracker(TrackerSession):
    """Frequency-domain correlation filter with online updates.

    Patches are log-compressed, normalized, and Hann-windowed before the
    FFT. After localizing, the filter numerator/denominator are blended
    with the new patch at ``learning_rate``; ``regularization`` keeps the
    division stable. Scale is fixed.
    """

    def __init__(self, learning_rate: float = 0.125, regularization: float = 1e-4,
                 response_sigma: float = 2.0) -> None:
        super().__init__()
        if not 0.0 < learning_rate <= 1.0:
            raise ContractViolation("learning_rate must lie in (0, 1]")
        self._lr = learning_rate
        self._reg = regularization
        self._sigma = response_sigma

    def _preprocess(self, patch: np.ndarray) -> np.ndarray:
        p = np.log1p(patch)
        p = (p - p.mean()) / (p.std() + 1e-5)
        return p * self._window

    def _crop(self, gray: np.ndarray, cx: float, cy: float) -> np.ndarray:
        w, h = self._w, self._h
        x0 = int(round(cx - w / 2.0))
        y0 = int(round(cy - h / 2.0))
        x1, y1 = x0 + w, y0 + h
        H, W = gray.shape
        patch = gray[max(0, y0) : min(H, y1), max(0, x0) : min(W, x1)]
        pads = ((max(0, -y0), max(0, y1 - H)), (max(0, -x0), max(0, x1 - W)))
        if any(p for pair in pads for p in pair):
            patch = np.pad(patch, pads, mode="edge")
        return patch

    def _on_init(self, frame: ImageBuffer, box: BoundingBox) -> None:
        gray = _to_gray(frame)
        self._w = max(4, int(round(box.w)))
        self._h = max(4, int(round(box.h)))
        self._cx, self._cy = box.cx, box.cy
        self._window = _hann2d(self._h, self._w)
        ys, xs = np.mgrid[0 : self._h, 0 : self._w]
        g = np.exp(
            -((xs - self._w // 2) ** 2 + (ys - self._h // 2) ** 2) / (2.0 * self._sigma**2)
        )
        self._g_hat = np.fft.fft2(g)
        # train on the patch plus small deterministic warps; a single-sample
        # filter has sidelobes strong enough to hijack the first update
        patch = self._crop(gray, self._cx, self._cy)
        rng = np.random.default_rng(12345)
        samples = [patch]
        center = (self._w / 2.0, self._h / 2.0)
        for _ in range(8):
            angle = float(rng.uniform(-8.0, 8.0))
            scale = float(rng.uniform(0.95, 1.05))
            m = cv2.getRotationMatrix2D(center, angle, scale)
            samples.append(
                cv2.warpAffine(
                    patch, m, (self._w, self._h), borderMode=cv2.BORDER_REFLECT
                )
            )
        self._num = np.zeros((self._h, self._w), dtype=np.complex128)
        self._den = np.zeros((self._h, self._w), dtype=np.complex128)
        for sample in samples:
            f_hat = np.fft.fft2(self._preprocess(sample))
            self._num += self._g_hat * np.conj(f_hat)
            self._den += f_hat * np.conj(f_hat)

    def _on_track(self, frame: ImageBuffer) -> BoundingBox:
        gray = _to_gray(frame)
        f_hat = np.fft.fft2(self._preprocess(self._crop(gray, self._cx, self._cy)))
        response = np.real(np.fft.ifft2(self._num / (self._den + self._reg) * f_hat))
        py, px = np.unravel_index(int(np.argmax(response)), response.shape)
        dx = px - self._w // 2
        dy = py - self._h // 2
        half_w, half_h = self._w / 2.0, self._h / 2.0
        self._cx = min(max(self._cx + dx, half_w), gray.shape[1] - half_w)
        self._cy = min(max(self._cy + dy, half_h), gray.shape[0] - half_h)
        f_new = np.fft.fft2(self._preprocess(self._crop(gray, self._cx, self._cy)))
        self._num = self._lr * (self._g_hat * np.conj(f_new)) + (1.0 - self._lr) * self._num
        self._den = self._lr * (f_new * np.conj(f_new)) + (1.0 - self._lr) * self._den
        return BoundingBox(self._cx - half_w, self._cy - half_h, float(self._w), float(self._h))


class GroundTruthTracker(TrackerSession):
    """Test double that replays stored ground truth, ignoring pixels.

    One box is consumed per track() call; tracking past the sequence end
    raises unless ``hold_last`` keeps returning the final box (useful when
    an attack floods a single frame with queries).
    """

    def __init__(self, seq: Sequence, hold_last: bool = False) -> None:
        super().__init__()
        if seq.ground_truth is None:
            raise ContractViolation("ground-truth double needs a sequence with ground truth")
        self._boxes = list(seq.ground_truth)
        self._hold_last = hold_last
        self._cursor = 1

    def _on_init(self, frame: ImageBuffer, box: BoundingBox) -> None:
        self._cursor = 1

    def _on_track(self, frame: ImageBuffer) -> BoundingBox:
        if self._cursor >= len(self._boxes):
            if self._hold_last:
                return self._boxes[-1]
            raise ContractViolation(
                f"tracked past the end of a {len(self._boxes)}-frame ground-truth sequence"
            )
        box = self._boxes[self._cursor]
        self._cursor += 1
        return box


def ground_truth_double(seq: Sequence, hold_last: bool = False) -> GroundTruthTracker:
    return GroundTruthTracker(seq, hold_last=hold_last)


class ConstantBoxTracker(TrackerSession):
    """Test double that returns one fixed box for every query."""

    def __init__(self, box: BoundingBox) -> None:
        super().__init__()
        self._box = box

    def _on_init(self, frame: ImageBuffer, box: BoundingBox) -> None:
        pass

    def _on_track(self, frame: ImageBuffer) -> BoundingBox:
        return self._box


class QuantizedTracker(TrackerSession):
    """Wrapper that rounds every frame to the 8-bit grid before delegating.

    Makes an in-process session see exactly the pixel values a bridged
    session receives after PNG marshalling.
    """

    def __init__(self, inner: TrackerSession) -> None:
        super().__init__()
        self._inner = inner

    def _on_init(self, frame: ImageBuffer, box: BoundingBox) -> None:
        self._inner.init(dequantize(quantize_u8(frame)), box)

    def _on_track(self, frame: ImageBuffer) -> BoundingBox:
        return self._inner.track(dequantize(quantize_u8(frame)))


def resolve_tracker_spec(spec: str, timeout: float = 30.0) -> Callable[[], TrackerSession]:
    """Turn a tracker spec string into a session factory.

    Supported forms: ``builtin:ncc``, ``builtin:mosse``,
    ``builtin:const:X,Y,W,H``, ``bridge:cmd:<command line>``, and
    ``bridge:tcp:HOST:PORT``.
    """
    if spec == "builtin:ncc":
        return lambda: NCCTracker()
    if spec == "builtin:mosse":
        return lambda: MosseTracker()
    if spec.startswith("builtin:const:"):
        parts = spec[len("builtin:const:") :].split(",")
        if len(parts) != 4:
            raise ContractViolation(f"constant tracker spec needs X,Y,W,H: {spec!r}")
        box = BoundingBox(*(float(p) for p in parts))
        return lambda: ConstantBoxTracker(box)
    if spec.startswith("bridge:cmd:"):
        from .bridge import connect  # deferred: bridge pulls in transport machinery

        command = spec[len("bridge:cmd:") :]
        if not command.strip():
            raise ContractViolation("empty bridge command")
        return lambda: connect(command=command, timeout=timeout)
    if spec.startswith("bridge:tcp:"):
        from .bridge import connect

        rest = spec[len("bridge:tcp:") :]
        host, _, port = rest.rpartition(":")
        if not host or not port.isdigit():
            raise ContractViolation(f"bridge TCP spec needs HOST:PORT: {spec!r}")
        return lambda: connect(endpoint=(host, int(port)), timeout=timeout)
    raise ContractViolation(f"unknown tracker spec: {spec!r}")
