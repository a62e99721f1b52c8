"""Value types and pixel-space primitives shared across the attack pipeline.

Images are float arrays with intensities nominally in [0, 255]. All
perturbation arithmetic stays in float space; quantization to 8 bits
happens only when an image is exported to a file (or marshalled over the
oracle bridge, which reuses the same quantizer so both paths agree).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from PIL import Image


class ContractViolation(ValueError):
    """A caller broke a documented precondition (shape, range, or state)."""


class OracleError(RuntimeError):
    """A tracker query failed (local fault or remote/transport failure)."""


def _frozen_array(arr: np.ndarray) -> np.ndarray:
    """Return a read-only float64 C-contiguous view, copying when needed."""
    out = np.asarray(arr, dtype=np.float64)
    if not out.flags["C_CONTIGUOUS"] or out.flags["WRITEABLE"]:
        out = np.ascontiguousarray(out).copy() if out.flags["WRITEABLE"] else np.ascontiguousarray(out)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """One video frame: an (H, W, C) float array, C in {1, 3}.

    Intensities are nominally in [0, 255] but intermediate attack
    arithmetic may stage values outside that range; ``clamp_to_image``
    restores the displayable range before a frame reaches a tracker or a
    file. The pixel data is read-only.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ContractViolation(f"image data must be (H, W, C), got shape {arr.shape}")
        if arr.shape[2] not in (1, 3):
            raise ContractViolation(f"channel count must be 1 or 3, got {arr.shape[2]}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ContractViolation("image height and width must be positive")
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("image intensities must be finite")
        object.__setattr__(self, "data", _frozen_array(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class PerturbationField:
    """An additive pixel-space perturbation with the same shape as its frame."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ContractViolation(f"perturbation must be (H, W, C), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ContractViolation("perturbation values must be finite")
        object.__setattr__(self, "data", _frozen_array(arr))

    @property
    def l2(self) -> float:
        return float(np.linalg.norm(self.data.ravel()))

    @classmethod
    def zeros(cls, shape: tuple[int, int, int]) -> "PerturbationField":
        return cls(np.zeros(shape, dtype=np.float64))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: top-left corner (x, y) plus width and height, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ContractViolation(f"box field {name} must be finite, got {v!r}")
            object.__setattr__(self, name, float(v))
        if self.w <= 0 or self.h <= 0:
            raise ContractViolation(f"box sides must be positive, got w={self.w}, h={self.h}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_xywh(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True, eq=False)
class Sequence:
    """An ordered run of frames with an initialization box and optional ground truth.

    When ground truth is present it covers every frame and its first entry
    equals the initialization box.
    """

    frames: tuple[ImageBuffer, ...]
    init_box: BoundingBox
    ground_truth: tuple[BoundingBox, ...] | None = None
    name: str = "sequence"

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if len(frames) < 2:
            raise ContractViolation(f"a sequence needs at least 2 frames, got {len(frames)}")
        shape = frames[0].shape
        for i, f in enumerate(frames):
            if f.shape != shape:
                raise ContractViolation(
                    f"frame {i} shape {f.shape} differs from frame 0 shape {shape}"
                )
        if self.ground_truth is not None:
            gt = tuple(self.ground_truth)
            object.__setattr__(self, "ground_truth", gt)
            if len(gt) != len(frames):
                raise ContractViolation(
                    f"ground truth covers {len(gt)} frames but the sequence has {len(frames)}"
                )
            if gt[0] != self.init_box:
                raise ContractViolation("ground_truth[0] must equal init_box")

    def __len__(self) -> int:
        return len(self.frames)


@dataclass(frozen=True)
class AttackConfig:
    """Every tunable of the attack loop.

    ``step_init`` and ``max_noise_l2`` are absolute L2 values when set;
    left as None they resolve per frame to 0.05x and 0.5x the distance
    between the clean frame and its heavy-noise anchor.
    """

    spatial_weight: float = 0.6        # weight of the spatial IoU term in the fused score
    n_candidates: int = 10             # same-radius candidates per iteration
    max_iters: int = 20                # iteration cap per frame
    step_init: float | None = None     # initial step toward the anchor (L2, absolute)
    step_growth: float = 1.2           # step multiplier after an accepted step
    step_shrink: float = 0.5           # step multiplier after a rejected step
    transfer_weight: float = 0.5       # weight on perturbations carried to later frames
    transfer_horizon: int = 1          # how many later frames receive a frame's perturbation
    heavy_noise_amplitude: float = 128.0  # uniform noise half-range for the anchor image
    stop_iou: float = 0.2              # stop once the fused score drops below this
    max_noise_l2: float | None = None  # total L2 noise budget per frame (absolute)
    tangential_scale: float = 0.3      # candidate spread as a fraction of the current radius
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.spatial_weight <= 1.0:
            raise ContractViolation("spatial_weight must lie in [0, 1]")
        if self.n_candidates < 1:
            raise ContractViolation("n_candidates must be >= 1")
        if self.max_iters < 0:
            raise ContractViolation("max_iters must be >= 0")
        if self.step_init is not None and not self.step_init > 0:
            raise ContractViolation("step_init must be positive when set")
        if not self.step_growth > 1.0:
            raise ContractViolation("step_growth must exceed 1")
        if not 0.0 < self.step_shrink < 1.0:
            raise ContractViolation("step_shrink must lie in (0, 1)")
        if not 0.0 <= self.transfer_weight <= 1.0:
            raise ContractViolation("transfer_weight must lie in [0, 1]")
        if self.transfer_horizon < 0:
            raise ContractViolation("transfer_horizon must be >= 0")
        if not 0.0 < self.heavy_noise_amplitude <= 255.0:
            raise ContractViolation("heavy_noise_amplitude must lie in (0, 255]")
        if not 0.0 <= self.stop_iou < 1.0:
            raise ContractViolation("stop_iou must lie in [0, 1)")
        if self.max_noise_l2 is not None and not self.max_noise_l2 > 0:
            raise ContractViolation("max_noise_l2 must be positive when set")
        if not self.tangential_scale > 0:
            raise ContractViolation("tangential_scale must be positive")
        if self.rng_seed < 0:
            raise ContractViolation("rng_seed must be >= 0")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractViolation(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "AttackConfig":
        return replace(self, **kw)


def l2_distance(a: ImageBuffer | np.ndarray, b: ImageBuffer | np.ndarray) -> float:
    """Euclidean distance over all pixels and channels of two same-shape images."""
    da = a.data if isinstance(a, ImageBuffer) else np.asarray(a, dtype=np.float64)
    db = b.data if isinstance(b, ImageBuffer) else np.asarray(b, dtype=np.float64)
    if da.shape != db.shape:
        raise ContractViolation(f"shape mismatch: {da.shape} vs {db.shape}")
    return float(np.linalg.norm((da - db).ravel()))


def clamp_to_image(base: ImageBuffer, delta: PerturbationField | None = None) -> ImageBuffer:
    """Clamp base (+ optional delta) into [0, 255]. Idempotent on in-range input."""
    arr = base.data
    if delta is not None:
        if delta.data.shape != arr.shape:
            raise ContractViolation(f"shape mismatch: {arr.shape} vs {delta.data.shape}")
        arr = arr + delta.data
    return ImageBuffer(np.clip(arr, 0.0, 255.0))


def quantize_u8(img: ImageBuffer) -> np.ndarray:
    """Project an image onto the 8-bit grid: clamp, then round half to even."""
    return np.rint(np.clip(img.data, 0.0, 255.0)).astype(np.uint8)


def dequantize(arr: np.ndarray) -> ImageBuffer:
    """Lift an (H, W, C) or (H, W) uint8 array back into float image space."""
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[:, :, None]
    return ImageBuffer(a.astype(np.float64))


def write_png(img: ImageBuffer, path: str | Path) -> Path:
    """Export a frame as an 8-bit PNG (grayscale or RGB by channel count)."""
    path = Path(path)
    arr = quantize_u8(img)
    if arr.shape[2] == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")
    return path


def read_image(path: str | Path) -> ImageBuffer:
    """Load a PNG/JPEG file as a float image, preserving 1 vs 3 channels."""
    with Image.open(path) as pil:
        if pil.mode in ("L", "I;16", "I"):
            arr = np.asarray(pil.convert("L"))
        else:
            arr = np.asarray(pil.convert("RGB"))
    return dequantize(arr)
