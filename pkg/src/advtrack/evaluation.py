"""Tracking-quality protocols, the matched random-noise baseline, and reports.

Two standard protocols are implemented: a reinitializing protocol
(failure when the overlap with ground truth hits exactly zero, restart
with ground truth five frames later, burn-in excluded from accuracy) and
a one-pass protocol (success and precision curves, no reinit). Frames are
rounded to the 8-bit grid before they reach a tracker here, so evaluating
in-memory attack output and evaluating re-loaded PNG output give
identical numbers.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .attack import FrameAttackTrace
from .core import (
    BoundingBox,
    ContractViolation,
    ImageBuffer,
    Sequence,
    dequantize,
    quantize_u8,
)
from .geometry import center_error, iou
from .trackers import TrackerSession

REINIT_GAP = 5       # frames skipped between a failure and the restart
BURN_IN = 10         # frames after a restart excluded from accuracy
# the grid stops at 0.95: overlap is compared strictly, so a tau=1.0 bin can
# never fill and would cap a perfect tracker's AUC below 1
SUCCESS_THRESHOLDS: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(20))
PRECISION_THRESHOLDS: tuple[float, ...] = tuple(float(i) for i in range(51))
PRECISION_REFERENCE_PX = 20.0


class VotResult(NamedTuple):
    mean_iou: float
    failures: int
    per_frame_iou: list[float]


class OpeResult(NamedTuple):
    success_curve: tuple[float, ...]
    auc: float
    precision_curve: tuple[float, ...]
    precision_at_20px: float


def _eval_frames(seq: Sequence, frames_override: list[ImageBuffer] | None) -> list[ImageBuffer]:
    frames = list(seq.frames) if frames_override is None else list(frames_override)
    if len(frames) != len(seq.frames):
        raise ContractViolation(
            f"{len(frames)} override frames for a {len(seq.frames)}-frame sequence"
        )
    return [dequantize(quantize_u8(f)) for f in frames]


def run_tracker(
    seq: Sequence,
    tracker_factory: Callable[[], TrackerSession],
    frames_override: list[ImageBuffer] | None = None,
) -> list[BoundingBox]:
    """One session, one pass: init on the first frame, one box per later frame."""
    frames = _eval_frames(seq, frames_override)
    session = tracker_factory()
    session.init(frames[0], seq.init_box)
    boxes = [seq.init_box]
    for t in range(1, len(frames)):
        boxes.append(session.track(frames[t]))
    return boxes


def run_vot_protocol(
    seq: Sequence,
    tracker_factory: Callable[[], TrackerSession],
    frames_override: list[ImageBuffer] | None = None,
) -> VotResult:
    """Reinitializing protocol: count failures, average overlap on scored frames.

    A failure is an overlap of exactly zero. The tracker restarts from
    ground truth REINIT_GAP frames later; the skipped gap, the failure
    frame, the restart frame, and the BURN_IN frames after each restart
    are excluded from the accuracy average (but not from failure
    counting). per_frame_iou holds NaN for every excluded frame.
    """
    if seq.ground_truth is None:
        raise ContractViolation("the reinitializing protocol needs ground truth")
    frames = _eval_frames(seq, frames_override)
    gt = seq.ground_truth
    m = len(frames)
    per_frame = [math.nan] * m
    scored: list[float] = []
    failures = 0

    session = tracker_factory()
    session.init(frames[0], gt[0])
    burn_until = 0  # accuracy counts frames strictly after this index
    t = 1
    while t < m:
        box = session.track(frames[t])
        overlap = iou(box, gt[t])
        if overlap == 0.0:
            failures += 1
            restart = t + REINIT_GAP
            if restart >= m:
                break
            session = tracker_factory()
            session.init(frames[restart], gt[restart])
            burn_until = restart + BURN_IN
            t = restart + 1
            continue
        if t > burn_until:
            per_frame[t] = overlap
            scored.append(overlap)
        t += 1

    mean_iou = float(np.mean(scored)) if scored else math.nan
    return VotResult(mean_iou=mean_iou, failures=failures, per_frame_iou=per_frame)


def ope_curves_from_boxes(
    boxes: list[BoundingBox], ground_truth: list[BoundingBox] | tuple[BoundingBox, ...]
) -> OpeResult:
    """Pure scoring of logged one-pass boxes; the init frame is not scored."""
    if len(boxes) != len(ground_truth):
        raise ContractViolation(
            f"{len(boxes)} boxes vs {len(ground_truth)} ground-truth entries"
        )
    if len(boxes) < 2:
        raise ContractViolation("need at least one tracked frame beyond the init frame")
    overlaps = np.array([iou(b, g) for b, g in zip(boxes[1:], ground_truth[1:])])
    errors = np.array([center_error(b, g) for b, g in zip(boxes[1:], ground_truth[1:])])
    success = tuple(float(np.mean(overlaps > tau)) for tau in SUCCESS_THRESHOLDS)
    precision = tuple(float(np.mean(errors <= tau)) for tau in PRECISION_THRESHOLDS)
    return OpeResult(
        success_curve=success,
        auc=float(np.mean(success)),
        precision_curve=precision,
        precision_at_20px=precision[int(PRECISION_REFERENCE_PX)],
    )


def run_ope_protocol(
    seq: Sequence,
    tracker_factory: Callable[[], TrackerSession],
    frames_override: list[ImageBuffer] | None = None,
) -> OpeResult:
    """One-pass protocol: success curve with area under it, precision curve."""
    if seq.ground_truth is None:
        raise ContractViolation("the one-pass protocol needs ground truth")
    boxes = run_tracker(seq, tracker_factory, frames_override)
    return ope_curves_from_boxes(boxes, seq.ground_truth)


def matched_random_baseline(
    seq: Sequence, traces: list[FrameAttackTrace], rng: np.random.Generator
) -> list[ImageBuffer]:
    """Random frames whose per-frame L2 noise exactly matches an attack run.

    Each attacked frame gets iid uniform noise rescaled (pre-clamp) to that
    frame's final attack noise; a zero-noise frame comes back clean. The
    first frame is always clean, mirroring the attack itself.
    """
    if len(traces) != len(seq.frames) - 1:
        raise ContractViolation(
            f"{len(traces)} traces for a {len(seq.frames)}-frame sequence"
        )
    out = [seq.frames[0]]
    for t, trace in enumerate(traces, start=1):
        target_l2 = trace.final_noise_l2
        clean = seq.frames[t]
        if target_l2 == 0.0:
            out.append(clean)
            continue
        direction = rng.uniform(-1.0, 1.0, size=clean.shape)
        norm = float(np.linalg.norm(direction.ravel()))
        if norm == 0.0:
            out.append(clean)
            continue
        noise = direction * (target_l2 / norm)
        out.append(ImageBuffer(np.clip(clean.data + noise, 0.0, 255.0)))
    return out


@dataclass
class SequenceMetrics:
    """Per-sequence scores for one condition."""

    name: str
    mean_iou: float
    failures: float
    failure_rate: float
    success_auc: float
    precision_at_20px: float
    mean_queries_per_frame: float
    mean_noise_l2: float
    success_curve: tuple[float, ...]
    precision_curve: tuple[float, ...]
    mean_spatial_iou: float | None = None
    mean_spatial_iou_online: float | None = None

    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, float) and math.isnan(v):
                return None
            return v

        return {
            "name": self.name,
            "mean_iou": clean(self.mean_iou),
            "failures": self.failures,
            "failure_rate": self.failure_rate,
            "success_auc": self.success_auc,
            "precision_at_20px": self.precision_at_20px,
            "mean_queries_per_frame": self.mean_queries_per_frame,
            "mean_noise_l2": self.mean_noise_l2,
            "mean_spatial_iou": clean(self.mean_spatial_iou)
            if self.mean_spatial_iou is not None
            else None,
            "mean_spatial_iou_online": clean(self.mean_spatial_iou_online)
            if self.mean_spatial_iou_online is not None
            else None,
            "success_curve": list(self.success_curve),
            "precision_curve": list(self.precision_curve),
        }


@dataclass
class EvalReport:
    """All per-sequence metrics for one condition plus their average."""

    condition: str
    per_sequence: list[SequenceMetrics] = field(default_factory=list)
    aggregate: SequenceMetrics | None = None

    def to_dict(self) -> dict:
        return {
            "condition": self.condition,
            "per_sequence": [m.to_dict() for m in self.per_sequence],
            "aggregate": self.aggregate.to_dict() if self.aggregate else None,
        }


def _aggregate(condition: str, rows: list[SequenceMetrics]) -> SequenceMetrics | None:
    if not rows:
        return None

    def mean_of(values: list[float]) -> float:
        finite = [v for v in values if not math.isnan(v)]
        return float(np.mean(finite)) if finite else math.nan

    spatial = [m.mean_spatial_iou for m in rows if m.mean_spatial_iou is not None]
    online = [m.mean_spatial_iou_online for m in rows if m.mean_spatial_iou_online is not None]
    return SequenceMetrics(
        name="aggregate",
        mean_iou=mean_of([m.mean_iou for m in rows]),
        failures=float(np.mean([m.failures for m in rows])),
        failure_rate=float(np.mean([m.failure_rate for m in rows])),
        success_auc=float(np.mean([m.success_auc for m in rows])),
        precision_at_20px=float(np.mean([m.precision_at_20px for m in rows])),
        mean_queries_per_frame=float(np.mean([m.mean_queries_per_frame for m in rows])),
        mean_noise_l2=float(np.mean([m.mean_noise_l2 for m in rows])),
        success_curve=tuple(
            float(v) for v in np.mean([m.success_curve for m in rows], axis=0)
        ),
        precision_curve=tuple(
            float(v) for v in np.mean([m.precision_curve for m in rows], axis=0)
        ),
        mean_spatial_iou=mean_of(spatial) if spatial else None,
        mean_spatial_iou_online=mean_of(online) if online else None,
    )


@dataclass
class ConditionInput:
    """One sequence as it should be evaluated under some condition."""

    seq: Sequence
    frames: list[ImageBuffer] | None = None            # None: evaluate the clean frames
    traces: list[FrameAttackTrace] | None = None       # attack traces, if this is an attack run
    clean_boxes: list[BoundingBox] | None = None       # clean-run boxes for drift scoring


def evaluate_condition(
    condition: str,
    inputs: list[ConditionInput],
    tracker_factory: Callable[[], TrackerSession],
) -> EvalReport:
    """Score every sequence under one condition and average the results."""
    rows: list[SequenceMetrics] = []
    for item in inputs:
        seq = item.seq
        vot = run_vot_protocol(seq, tracker_factory, item.frames)
        boxes = run_tracker(seq, tracker_factory, item.frames)
        ope = ope_curves_from_boxes(boxes, seq.ground_truth)
        tracked = len(seq.frames) - 1
        if item.traces:
            mean_queries = float(np.mean([t.queries_used for t in item.traces]))
            mean_noise = float(np.mean([t.final_noise_l2 for t in item.traces]))
        else:
            mean_queries = 0.0
            mean_noise = 0.0
        spatial = None
        online = None
        if item.clean_boxes is not None:
            if len(item.clean_boxes) != len(boxes):
                raise ContractViolation("clean-run boxes must cover every frame")
            spatial = float(
                np.mean([iou(b, c) for b, c in zip(boxes[1:], item.clean_boxes[1:])])
            )
            # the live session's own answers, where the traces carry them
            if item.traces and all(t.final_box is not None for t in item.traces):
                online = float(
                    np.mean(
                        [
                            iou(t.final_box, c)
                            for t, c in zip(item.traces, item.clean_boxes[1:])
                        ]
                    )
                )
        rows.append(
            SequenceMetrics(
                name=seq.name,
                mean_iou=vot.mean_iou,
                failures=vot.failures,
                failure_rate=vot.failures / tracked,
                success_auc=ope.auc,
                precision_at_20px=ope.precision_at_20px,
                mean_queries_per_frame=mean_queries,
                mean_noise_l2=mean_noise,
                success_curve=ope.success_curve,
                precision_curve=ope.precision_curve,
                mean_spatial_iou=spatial,
                mean_spatial_iou_online=online,
            )
        )
    return EvalReport(condition=condition, per_sequence=rows, aggregate=_aggregate(condition, rows))


_CSV_COLUMNS = [
    "condition",
    "sequence",
    "mean_iou",
    "failures",
    "failure_rate",
    "success_auc",
    "precision_at_20px",
    "mean_queries_per_frame",
    "mean_noise_l2",
    "mean_spatial_iou",
    "mean_spatial_iou_online",
]


def write_report(
    reports: list[EvalReport], out_dir: str | Path, figures: bool = True
) -> list[Path]:
    """Write report.json, flat report.csv, per-condition curve CSVs, and figures.

    The CSV holds one row per (condition, sequence); aggregates live in
    the JSON. Curve files are two-column threshold,value CSVs built from
    the aggregate curves. Returns every path written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps([r.to_dict() for r in reports], indent=2) + "\n")
    written.append(json_path)

    csv_path = out_dir / "report.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_COLUMNS)
        for report in reports:
            for m in report.per_sequence:
                writer.writerow(
                    [
                        report.condition,
                        m.name,
                        m.mean_iou,
                        m.failures,
                        m.failure_rate,
                        m.success_auc,
                        m.precision_at_20px,
                        m.mean_queries_per_frame,
                        m.mean_noise_l2,
                        "" if m.mean_spatial_iou is None else m.mean_spatial_iou,
                        ""
                        if m.mean_spatial_iou_online is None
                        else m.mean_spatial_iou_online,
                    ]
                )
    written.append(csv_path)

    for report in reports:
        if report.aggregate is None:
            continue
        for kind, thresholds, curve in (
            ("success", SUCCESS_THRESHOLDS, report.aggregate.success_curve),
            ("precision", PRECISION_THRESHOLDS, report.aggregate.precision_curve),
        ):
            path = out_dir / f"{kind}_curve_{report.condition}.csv"
            with path.open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["threshold", "value"])
                for tau, v in zip(thresholds, curve):
                    writer.writerow([tau, v])
            written.append(path)

    if figures and any(r.aggregate is not None for r in reports):
        from .figures import render_overlap_curves

        written.extend(render_overlap_curves(reports, out_dir))
    return written
