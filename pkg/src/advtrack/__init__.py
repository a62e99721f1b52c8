"""Decision-based adversarial attacks on video object trackers.

The attack perturbs raw frames using nothing but bounding-box overlap
feedback from the tracker under test, and the evaluation stack scores the
damage against clean runs and noise-matched random baselines.
"""

from .attack import (
    STOP_BUDGET,
    STOP_CAP,
    STOP_IOU,
    AttackAborted,
    FrameAttackTrace,
    attack_frame,
    attack_sequence,
    make_heavy_noise_image,
    sample_tangential,
    select_tangential,
)
from .core import (
    AttackConfig,
    BoundingBox,
    ContractViolation,
    ImageBuffer,
    OracleError,
    PerturbationField,
    Sequence,
    clamp_to_image,
    dequantize,
    l2_distance,
    quantize_u8,
    read_image,
    write_png,
)
from .evaluation import (
    ConditionInput,
    EvalReport,
    SequenceMetrics,
    evaluate_condition,
    matched_random_baseline,
    ope_curves_from_boxes,
    run_ope_protocol,
    run_vot_protocol,
    write_report,
)
from .geometry import IoUScores, center_error, fused_score, iou
from .synthdata import LoadError, SynthSpec, easy_preset, generate, load_directory, save_directory
from .trackers import (
    ConstantBoxTracker,
    GroundTruthTracker,
    MosseTracker,
    NCCTracker,
    QuantizedTracker,
    TrackerSession,
    ground_truth_double,
    resolve_tracker_spec,
)

__version__ = "0.1.0"

__all__ = [
    "AttackAborted",
    "AttackConfig",
    "BoundingBox",
    "ConditionInput",
    "ConstantBoxTracker",
    "ContractViolation",
    "EvalReport",
    "FrameAttackTrace",
    "GroundTruthTracker",
    "ImageBuffer",
    "IoUScores",
    "LoadError",
    "MosseTracker",
    "NCCTracker",
    "OracleError",
    "PerturbationField",
    "QuantizedTracker",
    "STOP_BUDGET",
    "STOP_CAP",
    "STOP_IOU",
    "Sequence",
    "SequenceMetrics",
    "SynthSpec",
    "TrackerSession",
    "attack_frame",
    "attack_sequence",
    "center_error",
    "clamp_to_image",
    "dequantize",
    "easy_preset",
    "evaluate_condition",
    "fused_score",
    "generate",
    "ground_truth_double",
    "iou",
    "l2_distance",
    "load_directory",
    "make_heavy_noise_image",
    "matched_random_baseline",
    "ope_curves_from_boxes",
    "quantize_u8",
    "read_image",
    "resolve_tracker_spec",
    "run_ope_protocol",
    "run_vot_protocol",
    "sample_tangential",
    "save_directory",
    "select_tangential",
    "write_png",
    "write_report",
]
