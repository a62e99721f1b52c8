"""Synthetic tracking sequences with exact ground truth, plus a directory loader.

Generated frames hold integer-valued floats so a PNG export/reload round
trip is lossless.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import BoundingBox, ContractViolation, ImageBuffer, Sequence, read_image, write_png


class LoadError(ValueError):
    """A dataset directory or annotation file could not be parsed."""


_MOTIONS = ("linear", "sinusoidal", "random_walk")


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a synthetic sequence: sizes, motion model, texture seed, length."""

    frame_width: int = 128
    frame_height: int = 128
    target_width: int = 32
    target_height: int = 32
    motion: str = "linear"
    velocity: tuple[float, float] = (2.0, 0.0)   # linear: px/frame
    amplitude: float = 20.0                      # sinusoidal: horizontal swing, px
    period: float = 20.0                         # sinusoidal: frames per cycle
    step_sigma: float = 1.0                      # random_walk: per-frame step spread, px
    start: tuple[float, float] | None = None     # top-left of the target on frame 1
    length: int = 30
    background_noise_sigma: float = 5.0
    texture_range: tuple[float, float] = (95.0, 145.0)
    texture_seed: int = 0
    channels: int = 1

    def __post_init__(self) -> None:
        if self.motion not in _MOTIONS:
            raise ContractViolation(f"motion must be one of {_MOTIONS}, got {self.motion!r}")
        if self.length < 2:
            raise ContractViolation("length must be >= 2")
        if self.channels not in (1, 3):
            raise ContractViolation("channels must be 1 or 3")
        if min(self.frame_width, self.frame_height, self.target_width, self.target_height) < 1:
            raise ContractViolation("frame and target sizes must be positive")
        if self.target_width > self.frame_width or self.target_height > self.frame_height:
            raise ContractViolation("target must fit inside the frame")
        if self.background_noise_sigma < 0:
            raise ContractViolation("background_noise_sigma must be >= 0")
        lo, hi = self.texture_range
        if not (0.0 <= lo < hi <= 255.0):
            raise ContractViolation("texture_range must satisfy 0 <= low < high <= 255")

    def replace(self, **kw) -> "SynthSpec":
        return replace(self, **kw)


def easy_preset(**overrides) -> SynthSpec:
    """The stock easy sequence: 128x128 frames, 32x32 target, 2 px/frame drift."""
    return SynthSpec().replace(**overrides)


def _positions(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Top-left target positions per frame, rounded to integer pixels."""
    if spec.start is None:
        x0 = (spec.frame_width - spec.target_width) / 2.0
        y0 = (spec.frame_height - spec.target_height) / 2.0
        if spec.motion == "linear":
            # leave room for the full drift instead of starting centered
            x0 -= spec.velocity[0] * (spec.length - 1) / 2.0
            y0 -= spec.velocity[1] * (spec.length - 1) / 2.0
    else:
        x0, y0 = spec.start
    t = np.arange(spec.length, dtype=np.float64)
    if spec.motion == "linear":
        xs = x0 + spec.velocity[0] * t
        ys = y0 + spec.velocity[1] * t
    elif spec.motion == "sinusoidal":
        xs = x0 + spec.amplitude * np.sin(2.0 * math.pi * t / spec.period)
        ys = np.full_like(t, y0)
    else:  # random_walk
        steps = rng.normal(0.0, spec.step_sigma, size=(spec.length - 1, 2))
        path = np.vstack([[0.0, 0.0], np.cumsum(steps, axis=0)])
        xs = x0 + path[:, 0]
        ys = y0 + path[:, 1]
    return np.rint(np.stack([xs, ys], axis=1)).astype(np.int64)


def generate(spec: SynthSpec) -> Sequence:
    """Render the sequence described by ``spec``; deterministic in texture_seed.

    Raises ContractViolation naming the first frame whose target would
    leave the frame bounds.
    """
    rng = np.random.default_rng(spec.texture_seed)
    th, tw = spec.target_height, spec.target_width
    fh, fw = spec.frame_height, spec.frame_width

    # seeded target texture, smoothed once; the range controls contrast and
    # therefore how much additive noise the template trackers tolerate
    lo, hi = spec.texture_range
    target = rng.uniform(lo, hi, size=(th, tw, spec.channels))
    target = ndimage.uniform_filter(target, size=(3, 3, 1), mode="nearest")
    target = np.rint(np.clip(target, 0.0, 255.0))

    # low-contrast background around mid-gray
    background = 120.0 + rng.normal(0.0, spec.background_noise_sigma, size=(fh, fw, spec.channels))
    background = np.rint(np.clip(background, 0.0, 255.0))

    positions = _positions(spec, rng)
    frames: list[ImageBuffer] = []
    boxes: list[BoundingBox] = []
    for i, (x, y) in enumerate(positions):
        if x < 0 or y < 0 or x + tw > fw or y + th > fh:
            raise ContractViolation(
                f"target leaves the frame on frame {i + 1}: top-left ({x}, {y})"
            )
        frame = background.copy()
        frame[y : y + th, x : x + tw] = target
        frames.append(ImageBuffer(frame))
        boxes.append(BoundingBox(float(x), float(y), float(tw), float(th)))
    name = f"synth-{spec.motion}-seed{spec.texture_seed}"
    return Sequence(frames=tuple(frames), init_box=boxes[0], ground_truth=tuple(boxes), name=name)


def _numeric_key(path: Path) -> tuple:
    m = re.search(r"(\d+)", path.stem)
    return (int(m.group(1)) if m else float("inf"), path.name)


def _parse_box_line(line: str, lineno: int) -> BoundingBox:
    parts = [p for p in re.split(r"[,\t ]+", line.strip()) if p]
    try:
        values = [float(p) for p in parts]
    except ValueError as e:
        raise LoadError(f"annotation line {lineno}: not numeric: {line.strip()!r}") from e
    if len(values) == 4:
        x, y, w, h = values
    elif len(values) == 8:
        xs, ys = values[0::2], values[1::2]
        x, y = min(xs), min(ys)
        w, h = max(xs) - x, max(ys) - y
    else:
        raise LoadError(
            f"annotation line {lineno}: expected 4 or 8 numbers, got {len(values)}"
        )
    try:
        return BoundingBox(x, y, w, h)
    except ContractViolation as e:
        raise LoadError(f"annotation line {lineno}: {e}") from e


def load_directory(frames_dir: str | Path, annotation_file: str | Path | None = None) -> Sequence:
    """Load numerically ordered PNG/JPEG frames plus one annotation line per frame.

    Annotation lines are "x,y,w,h" (comma, tab, or space separated);
    8-number corner lines reduce to the axis-aligned enclosing box.
    """
    frames_dir = Path(frames_dir)
    if not frames_dir.is_dir():
        raise LoadError(f"not a directory: {frames_dir}")
    paths = sorted(
        [p for p in frames_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")],
        key=_numeric_key,
    )
    if not paths:
        raise LoadError(f"no PNG/JPEG frames in {frames_dir}")
    if annotation_file is None:
        annotation_file = frames_dir / "groundtruth.txt"
        if not annotation_file.exists():
            annotation_file = frames_dir.parent / "groundtruth.txt"
    annotation_file = Path(annotation_file)
    if not annotation_file.exists():
        raise LoadError(f"annotation file not found: {annotation_file}")

    lines = [ln for ln in annotation_file.read_text().splitlines() if ln.strip()]
    if len(lines) != len(paths):
        raise LoadError(
            f"{len(paths)} frames but {len(lines)} annotation lines in {annotation_file}"
        )
    boxes = tuple(_parse_box_line(ln, i + 1) for i, ln in enumerate(lines))
    frames = tuple(read_image(p) for p in paths)
    try:
        return Sequence(
            frames=frames, init_box=boxes[0], ground_truth=boxes, name=frames_dir.name
        )
    except ContractViolation as e:
        raise LoadError(str(e)) from e


def save_directory(seq: Sequence, out_dir: str | Path) -> Path:
    """Write a sequence as numbered PNGs plus groundtruth.txt; inverse of load_directory."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        write_png(frame, out_dir / f"{i + 1:06d}.png")
    if seq.ground_truth is None:
        raise ContractViolation("cannot save a sequence without ground truth")
    lines = [
        f"{b.x:.2f},{b.y:.2f},{b.w:.2f},{b.h:.2f}" for b in seq.ground_truth
    ]
    (out_dir / "groundtruth.txt").write_text("\n".join(lines) + "\n")
    return out_dir
