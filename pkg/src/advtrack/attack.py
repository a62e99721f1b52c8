"""Decision-based black-box attack on tracker inputs using only IoU feedback.

Per frame, the attacker warm-starts from the perturbation carried over
from earlier frames, then alternates two moves: candidate steps that keep
the L2 distance to the frame's starting point fixed (exploring directions
at constant noise level) and a step toward a heavy-noise anchor image
(raising the noise level). Each move is kept only if the tracker's fused
IoU against the clean trajectory did not increase. The loop stops when
the fused IoU falls below a threshold, the L2 noise budget is spent, or
the iteration cap is reached.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    AttackConfig,
    BoundingBox,
    ContractViolation,
    ImageBuffer,
    OracleError,
    PerturbationField,
    Sequence,
    dequantize,
    l2_distance,
    quantize_u8,
)
from .geometry import IoUScores, fused_score
from .trackers import TrackerSession

STOP_IOU = "iou_below_threshold"
STOP_BUDGET = "noise_budget_exceeded"
STOP_CAP = "iteration_cap"

# an anchor that leaves the tracker above this spatial IoU is too weak
_ANCHOR_SPATIAL_CEILING = 0.5
_ACCEPT_SLACK = 1e-12


class AttackAborted(RuntimeError):
    """A tracker query failed mid-sequence; partial results are attached."""

    def __init__(self, message: str, adversarial_frames, traces, clean_boxes):
        super().__init__(message)
        self.adversarial_frames = adversarial_frames
        self.traces = traces
        self.clean_boxes = clean_boxes


@dataclass
class StepController:
    """Multiplicative schedule for the anchor-ward step size.

    Accepted steps grow the step by ``growth`` up to ``ceiling``; rejected
    steps shrink it by ``shrink`` down to ``floor``.
    """

    current: float
    growth: float
    shrink: float
    floor: float
    ceiling: float

    def __post_init__(self) -> None:
        if not (0.0 < self.floor <= self.current <= self.ceiling):
            raise ContractViolation("step controller needs floor <= current <= ceiling")
        if not self.growth > 1.0 or not 0.0 < self.shrink < 1.0:
            raise ContractViolation("growth must exceed 1 and shrink must lie in (0, 1)")

    def accept(self) -> None:
        self.current = min(self.current * self.growth, self.ceiling)

    def reject(self) -> bool:
        """Shrink toward the floor; False when already there (give up)."""
        if self.current <= self.floor:
            return False
        self.current = max(self.current * self.shrink, self.floor)
        return True


@dataclass
class IterationRecord:
    """Query accounting and geometry for one attack iteration."""

    candidate_queries: int
    step_queries: int
    accepted: bool
    fused: float | None = None
    radius_tangential: float | None = None  # distance from the frame's start point, pre-step
    radius_staged: float | None = None      # same distance after the anchor-ward step
    noise_l2: float | None = None           # distance from the clean frame after the move

    def to_dict(self) -> dict:
        return {
            "candidate_queries": self.candidate_queries,
            "step_queries": self.step_queries,
            "accepted": self.accepted,
            "fused": self.fused,
            "radius_tangential": self.radius_tangential,
            "radius_staged": self.radius_staged,
            "noise_l2": self.noise_l2,
        }


@dataclass
class FrameAttackTrace:
    """Everything observable about one attacked frame.

    ``queries_used`` counts every tracker query spent on the frame: the
    clean-frame prediction made by the caller, the anchor checks, per
    iteration the candidate queries plus the stepped-point queries, and
    one final query feeding the finished frame to the session. The
    breakdown (anchor_queries, iterations, sync_queries) reproduces the
    total exactly on every error-free frame.
    """

    frame_index: int
    queries_used: int = 0
    anchor_queries: int = 0
    sync_queries: int = 0
    iou_trajectory: list[IoUScores] = field(default_factory=list)
    cosine_steps: list[float] = field(default_factory=list)
    iterations: list[IterationRecord] = field(default_factory=list)
    final_noise_l2: float = 0.0
    final_perturbation: PerturbationField | None = None
    warm_start_noise_l2: float = 0.0
    stop_reason: str | None = None
    error: str | None = None
    final_box: BoundingBox | None = None  # the session's answer to the finished frame
    final_scores: IoUScores | None = None
    query_seconds: float = 0.0

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "frame_index": self.frame_index,
            "queries_used": self.queries_used,
            "anchor_queries": self.anchor_queries,
            "sync_queries": self.sync_queries,
            "iou_trajectory": [s.to_dict() for s in self.iou_trajectory],
            "cosine_steps": self.cosine_steps,
            "iterations": [r.to_dict() for r in self.iterations],
            "final_noise_l2": self.final_noise_l2,
            "warm_start_noise_l2": self.warm_start_noise_l2,
            "stop_reason": self.stop_reason,
            "error": self.error,
            "final_box": list(self.final_box.as_xywh()) if self.final_box else None,
            "final_scores": self.final_scores.to_dict() if self.final_scores else None,
        }
        if include_timing:
            d["query_seconds"] = self.query_seconds
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FrameAttackTrace":
        return cls(
            frame_index=d["frame_index"],
            queries_used=d["queries_used"],
            anchor_queries=d["anchor_queries"],
            sync_queries=d["sync_queries"],
            iou_trajectory=[IoUScores.from_dict(s) for s in d["iou_trajectory"]],
            cosine_steps=list(d["cosine_steps"]),
            iterations=[IterationRecord(**r) for r in d["iterations"]],
            final_noise_l2=d["final_noise_l2"],
            warm_start_noise_l2=d["warm_start_noise_l2"],
            stop_reason=d["stop_reason"],
            error=d["error"],
            final_box=BoundingBox(*d["final_box"]) if d.get("final_box") else None,
            final_scores=IoUScores.from_dict(d["final_scores"]) if d.get("final_scores") else None,
            query_seconds=d.get("query_seconds", 0.0),
        )


def cosine_between(a: PerturbationField, b: PerturbationField) -> float:
    """Cosine similarity of two perturbations, clipped into [-1, 1]."""
    va, vb = a.data.ravel(), b.data.ravel()
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ContractViolation("cosine is undefined for a zero perturbation")
    return float(np.clip(np.dot(va, vb) / (na * nb), -1.0, 1.0))


def make_heavy_noise_image(
    original: ImageBuffer, amplitude: float, rng: np.random.Generator
) -> ImageBuffer:
    """Clamped copy of the frame plus iid uniform noise in [-amplitude, amplitude]."""
    if not 0.0 < amplitude <= 255.0:
        raise ContractViolation(f"amplitude must lie in (0, 255], got {amplitude}")
    noise = rng.uniform(-amplitude, amplitude, size=original.shape)
    return ImageBuffer(np.clip(original.data + noise, 0.0, 255.0))


def _tangential_from_delta(
    original: np.ndarray, current: np.ndarray, delta: np.ndarray, scale: float
) -> np.ndarray:
    """Deterministic part of candidate sampling: perturb, then rescale back to the sphere.

    The candidate point is ``current + scale_sigma * delta`` pulled back to
    distance r from ``original``, where r is the current distance. Returns
    the additive move from ``current``.
    """
    offset = current - original
    r = float(np.linalg.norm(offset.ravel()))
    if r <= 0.0:
        raise ContractViolation("candidate sampling needs a nonzero noise radius")
    sigma = scale * r / np.sqrt(offset.size)
    v = offset + sigma * delta
    nv = float(np.linalg.norm(v.ravel()))
    if nv == 0.0:
        # vanishing direction: keep the current point
        return np.zeros_like(current)
    v = v * (r / nv)
    return original + v - current


def sample_tangential(
    original: ImageBuffer,
    current: ImageBuffer,
    rng: np.random.Generator,
    scale: float = 0.3,
) -> PerturbationField:
    """Draw one same-radius candidate move.

    The returned field eta satisfies l2(original, current) ==
    l2(original, current + eta) exactly up to float rounding, measured
    before any clamping.
    """
    if original.shape != current.shape:
        raise ContractViolation(f"shape mismatch: {original.shape} vs {current.shape}")
    delta = rng.standard_normal(size=original.shape)
    return PerturbationField(
        _tangential_from_delta(original.data, current.data, delta, scale)
    )


def normal_step(anchor: ImageBuffer, staged: ImageBuffer, step: float) -> ImageBuffer:
    """Move ``staged`` by ``step`` L2 units straight toward the anchor image."""
    if anchor.shape != staged.shape:
        raise ContractViolation(f"shape mismatch: {anchor.shape} vs {staged.shape}")
    if step < 0:
        raise ContractViolation(f"step must be >= 0, got {step}")
    if step == 0.0:
        return staged
    gap = anchor.data - staged.data
    norm = float(np.linalg.norm(gap.ravel()))
    if norm == 0.0:
        return staged
    return ImageBuffer(staged.data + (step / norm) * gap)


class _QueryCounter:
    """Clamps, queries, scores, and times every tracker call for one frame."""

    def __init__(
        self,
        session: TrackerSession,
        spatial_ref: BoundingBox,
        temporal_ref: BoundingBox,
        spatial_weight: float,
    ) -> None:
        self.session = session
        self.spatial_ref = spatial_ref
        self.temporal_ref = temporal_ref
        self.spatial_weight = spatial_weight
        self.count = 0
        self.seconds = 0.0

    def query(self, pixels: np.ndarray) -> IoUScores:
        # the oracle consumes 8-bit frames, exactly what export and the
        # wire protocol deliver, so online and replayed runs agree bit-for-bit
        image = dequantize(quantize_u8(ImageBuffer(np.clip(pixels, 0.0, 255.0))))
        start = time.perf_counter()
        try:
            box = self.session.track(image)
        finally:
            self.seconds += time.perf_counter() - start
            self.count += 1
        return fused_score(box, self.spatial_ref, self.temporal_ref, self.spatial_weight)


def _select_with_counter(
    current: ImageBuffer, candidates: list[PerturbationField], counter: _QueryCounter
) -> tuple[int, IoUScores, int]:
    if not candidates:
        raise ContractViolation("select_tangential needs at least one candidate")
    before = counter.count
    best_index = -1
    best_scores: IoUScores | None = None
    for j, cand in enumerate(candidates):
        try:
            scores = counter.query(current.data + cand.data)
        except OracleError as e:
            raise OracleError(f"candidate {j}: {e}") from e
        if best_scores is None or scores.fused < best_scores.fused:
            best_index, best_scores = j, scores
    assert best_scores is not None
    return best_index, best_scores, counter.count - before


def select_tangential(
    current: ImageBuffer,
    candidates: list[PerturbationField],
    tracker_session: TrackerSession,
    spatial_ref: BoundingBox,
    temporal_ref: BoundingBox,
    spatial_weight: float,
) -> tuple[int, IoUScores, int]:
    """Query the tracker on each candidate point and pick the lowest fused score.

    Ties resolve to the lowest candidate index. Returns (index, scores,
    queries spent). A failed query propagates as an OracleError naming the
    candidate.
    """
    counter = _QueryCounter(tracker_session, spatial_ref, temporal_ref, spatial_weight)
    return _select_with_counter(current, candidates, counter)


def attack_frame(
    frame: ImageBuffer,
    prior_perturbation: PerturbationField,
    tracker_session: TrackerSession,
    spatial_ref: BoundingBox,
    temporal_ref: BoundingBox,
    cfg: AttackConfig,
    rng: np.random.Generator,
) -> tuple[ImageBuffer, FrameAttackTrace]:
    """Attack one frame; the caller has already spent one query for ``spatial_ref``.

    Returns the clamped adversarial frame and its trace. An oracle failure
    mid-frame aborts the frame: the clean frame comes back and the trace
    carries the error instead of a stop reason.
    """
    if prior_perturbation.data.shape != frame.shape:
        raise ContractViolation("prior perturbation shape differs from the frame")
    trace = FrameAttackTrace(frame_index=-1, queries_used=1)  # the clean-frame query
    clean = frame.data

    warm = clean + cfg.transfer_weight * prior_perturbation.data
    origin = np.clip(warm, 0.0, 255.0)  # the frame's start point; candidate radii measure from here
    trace.warm_start_noise_l2 = float(np.linalg.norm((origin - clean).ravel()))

    counter = _QueryCounter(tracker_session, spatial_ref, temporal_ref, cfg.spatial_weight)

    def finish(pixels: np.ndarray, stop_reason: str | None, error: str | None = None):
        # the recorded frame is the 8-bit image the victim consumed
        adv = dequantize(quantize_u8(ImageBuffer(np.clip(pixels, 0.0, 255.0))))
        delta = adv.data - clean
        trace.final_perturbation = PerturbationField(delta)
        trace.final_noise_l2 = float(np.linalg.norm(delta.ravel()))
        trace.stop_reason = stop_reason
        trace.error = error
        if error is None:
            # the victim consumes the finished frame as its real frame-t
            # observation; its answer is the frame's online outcome
            trace.final_scores = counter.query(adv.data)
            trace.sync_queries = 1
            trace.final_box = tracker_session.last_box
        trace.queries_used += counter.count
        trace.query_seconds = counter.seconds
        return adv, trace

    if cfg.max_iters == 0:
        return finish(origin, STOP_CAP)

    try:
        # heavy-noise anchor, re-drawn once at doubled amplitude if too weak
        amplitude = cfg.heavy_noise_amplitude
        anchor = make_heavy_noise_image(frame, amplitude, rng)
        scores = counter.query(anchor.data)
        trace.anchor_queries = 1
        if scores.spatial >= _ANCHOR_SPATIAL_CEILING and amplitude < 255.0:
            amplitude = min(2.0 * amplitude, 255.0)
            anchor = make_heavy_noise_image(frame, amplitude, rng)
            counter.query(anchor.data)
            trace.anchor_queries = 2

        anchor_gap = float(np.linalg.norm((anchor.data - clean).ravel()))
        step_init = cfg.step_init if cfg.step_init is not None else 0.05 * anchor_gap
        budget = cfg.max_noise_l2 if cfg.max_noise_l2 is not None else 0.5 * anchor_gap
        if step_init <= 0.0:
            raise ContractViolation("resolved step_init must be positive")
        controller = StepController(
            current=step_init,
            growth=cfg.step_growth,
            shrink=cfg.step_shrink,
            floor=1e-3 * step_init,
            ceiling=step_init * cfg.step_growth,
        )

        current = origin.copy()
        if trace.warm_start_noise_l2 > budget:
            # the carried-over noise alone blows the budget: nothing to do here
            return finish(current, STOP_BUDGET)

        best_fused = 1.0
        previous_perturbation: np.ndarray | None = None
        stop_reason = STOP_CAP
        origin_buffer = ImageBuffer(origin)

        for _ in range(cfg.max_iters):
            radius = float(np.linalg.norm((current - origin).ravel()))
            record = IterationRecord(candidate_queries=0, step_queries=0, accepted=False)

            if radius > 0.0:
                current_buffer = ImageBuffer(current)
                candidates = [
                    sample_tangential(origin_buffer, current_buffer, rng, cfg.tangential_scale)
                    for _ in range(cfg.n_candidates)
                ]
                idx, tangential_scores, spent = _select_with_counter(
                    current_buffer, candidates, counter
                )
                record.candidate_queries = spent
                tangential = current + candidates[idx].data
            else:
                # zero radius: no same-level directions exist yet, step straight out
                tangential_scores = None
                tangential = current

            radius_tangential = float(np.linalg.norm((tangential - origin).ravel()))
            record.radius_tangential = radius_tangential

            accepted_scores: IoUScores | None = None
            accepted_point: np.ndarray | None = None
            while True:
                staged = tangential + _anchor_direction(anchor.data, tangential) * controller.current
                within_budget = float(np.linalg.norm((staged - clean).ravel())) <= budget
                outward = (
                    float(np.linalg.norm((staged - origin).ravel()))
                    >= radius_tangential - 1e-9 * max(radius_tangential, 1.0)
                )
                if within_budget and outward:
                    scores = counter.query(staged)
                    record.step_queries += 1
                    if scores.fused <= best_fused + _ACCEPT_SLACK:
                        accepted_scores, accepted_point = scores, staged
                        break
                if not controller.reject():
                    # step floor reached: fall back to the tangential point alone
                    if (
                        tangential_scores is not None
                        and float(np.linalg.norm((tangential - clean).ravel())) <= budget
                        and tangential_scores.fused <= best_fused + _ACCEPT_SLACK
                    ):
                        accepted_scores, accepted_point = tangential_scores, tangential
                    break

            if accepted_scores is not None and accepted_point is not None:
                current = accepted_point
                best_fused = accepted_scores.fused
                record.accepted = True
                record.fused = accepted_scores.fused
                record.radius_staged = float(np.linalg.norm((current - origin).ravel()))
                record.noise_l2 = float(np.linalg.norm((current - clean).ravel()))
                trace.iou_trajectory.append(accepted_scores)
                controller.accept()

                perturbation = current - clean
                norm_now = float(np.linalg.norm(perturbation.ravel()))
                if previous_perturbation is not None and norm_now > 0.0:
                    prev_norm = float(np.linalg.norm(previous_perturbation.ravel()))
                    if prev_norm > 0.0:
                        cos = float(
                            np.dot(previous_perturbation.ravel(), perturbation.ravel())
                            / (prev_norm * norm_now)
                        )
                        trace.cosine_steps.append(float(np.clip(cos, -1.0, 1.0)))
                if norm_now > 0.0:
                    previous_perturbation = perturbation.copy()

                trace.iterations.append(record)
                if best_fused < cfg.stop_iou:
                    stop_reason = STOP_IOU
                    break
                if float(np.linalg.norm((current - clean).ravel())) > budget:
                    stop_reason = STOP_BUDGET
                    break
            else:
                trace.iterations.append(record)

        return finish(current, stop_reason)
    except OracleError as e:
        _, aborted_trace = finish(clean, None, error=str(e))
        return frame, aborted_trace


def _anchor_direction(anchor: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Unit vector from ``point`` toward the anchor; zero if they coincide."""
    gap = anchor - point
    norm = float(np.linalg.norm(gap.ravel()))
    if norm == 0.0:
        return np.zeros_like(gap)
    return gap / norm


def attack_sequence(
    seq: Sequence,
    tracker_factory,
    cfg: AttackConfig,
    rng: np.random.Generator | None = None,
) -> tuple[list[ImageBuffer], list[FrameAttackTrace], list[BoundingBox]]:
    """Attack every frame after the first; the first frame passes through clean.

    Two tracker sessions run in lockstep: one sees only clean frames and
    supplies the clean trajectory (spatial and temporal references), the
    other receives every attack query. Perturbations from each attacked
    frame warm-start the following ``transfer_horizon`` frames at weight
    ``transfer_weight``. Returns (adversarial frames, per-frame traces,
    clean-run boxes). An oracle failure raises AttackAborted carrying the
    partial results.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    clean_session: TrackerSession = tracker_factory()
    adv_session: TrackerSession = tracker_factory()
    clean_session.init(seq.frames[0], seq.init_box)
    adv_session.init(seq.frames[0], seq.init_box)

    adv_frames: list[ImageBuffer] = [seq.frames[0]]
    traces: list[FrameAttackTrace] = []
    clean_boxes: list[BoundingBox] = [seq.init_box]
    carried: list[PerturbationField] = []  # most recent attacked-frame perturbations
    temporal_ref = seq.init_box

    for t in range(1, len(seq.frames)):
        frame = seq.frames[t]
        try:
            spatial_ref = clean_session.track(frame)
        except OracleError as e:
            raise AttackAborted(
                f"clean-trajectory query failed on frame {t + 1}: {e}",
                adv_frames, traces, clean_boxes,
            ) from e

        if cfg.transfer_horizon > 0 and carried:
            recent = carried[-cfg.transfer_horizon :]
            prior = PerturbationField(np.sum([p.data for p in recent], axis=0))
        else:
            prior = PerturbationField.zeros(frame.shape)

        adv, trace = attack_frame(
            frame, prior, adv_session, spatial_ref, temporal_ref, cfg, rng
        )
        trace.frame_index = t
        if trace.error is not None:
            traces.append(trace)
            raise AttackAborted(
                f"oracle failed while attacking frame {t + 1}: {trace.error}",
                adv_frames, traces, clean_boxes,
            )

        adv_frames.append(adv)
        traces.append(trace)
        clean_boxes.append(spatial_ref)
        carried.append(trace.final_perturbation)
        if len(carried) > max(cfg.transfer_horizon, 1):
            carried = carried[-max(cfg.transfer_horizon, 1) :]
        temporal_ref = spatial_ref

    return adv_frames, traces, clean_boxes
