"""Command-line front end: attack, evaluate, compare, synth, serve.

Attack configuration flags mirror AttackConfig field names one-to-one; a
JSON config file may supply any subset and explicit flags win over it.
Every run writes a manifest sufficient to reproduce it bit-for-bit.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .attack import AttackAborted, FrameAttackTrace, attack_sequence
from .core import (
    AttackConfig,
    BoundingBox,
    ContractViolation,
    ImageBuffer,
    OracleError,
    Sequence,
    read_image,
    write_png,
)
from .evaluation import (
    ConditionInput,
    EvalReport,
    evaluate_condition,
    matched_random_baseline,
    write_report,
)
from .synthdata import LoadError, SynthSpec, easy_preset, generate, load_directory, save_directory
from .trackers import resolve_tracker_spec

_BASELINE_TAG = 7919  # keeps the random-baseline stream apart from the attack stream
_CONDITIONS = ("original", "random", "attack")


# ---------------------------------------------------------------------------
# dataset and config plumbing

def resolve_dataset(spec: str) -> list[Sequence]:
    """A dataset spec is ``synth:easy``, ``synth:easy*N``, ``synth:{json}``,
    or a directory (one sequence, or one subdirectory per sequence)."""
    if spec.startswith("synth:"):
        body = spec[len("synth:") :]
        if body.startswith("{"):
            return [generate(SynthSpec(**json.loads(body)))]
        count = 1
        if "*" in body:
            body, _, count_text = body.partition("*")
            if not count_text.isdigit() or int(count_text) < 1:
                raise ContractViolation(f"bad sequence count in dataset spec {spec!r}")
            count = int(count_text)
        if body != "easy":
            raise ContractViolation(f"unknown synthetic preset {body!r}")
        return [generate(easy_preset(texture_seed=i)) for i in range(count)]
    root = Path(spec)
    if not root.is_dir():
        raise LoadError(f"dataset directory not found: {spec}")
    subdirs = sorted(p for p in root.iterdir() if p.is_dir() and p.name != "adv")
    sequence_dirs = [d for d in subdirs if any(d.glob("*.png")) or any(d.glob("*.jpg"))]
    if sequence_dirs:
        return [load_directory(d) for d in sequence_dirs]
    return [load_directory(root)]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON file with AttackConfig fields")
    group = parser.add_argument_group("attack configuration")
    for f in fields(AttackConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name in ("n_candidates", "max_iters", "transfer_horizon", "rng_seed"):
            group.add_argument(flag, type=int, default=None)
        else:
            group.add_argument(flag, type=float, default=None)


def build_config(args: argparse.Namespace, base: dict | None = None) -> AttackConfig:
    merged = dict(base or {})
    if getattr(args, "config", None):
        merged.update(json.loads(Path(args.config).read_text()))
    for f in fields(AttackConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            merged[f.name] = value
    return AttackConfig.from_dict(merged)


def write_manifest(out_dir: Path, cfg: AttackConfig, tracker: str, dataset: str,
                   workers: int) -> Path:
    manifest = {
        "config": cfg.to_dict(),
        "tracker": tracker,
        "dataset": dataset,
        "seed": cfg.rng_seed,
        "output_dir": str(out_dir),
        "workers": workers,
    }
    path = out_dir / "run_manifest.json"
    out_dir.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _sequence_seed(cfg: AttackConfig, index: int) -> AttackConfig:
    return cfg.replace(rng_seed=cfg.rng_seed + index)


def _attack_one(payload: tuple[int, Sequence, str, AttackConfig]):
    index, seq, tracker_spec, cfg = payload
    factory = resolve_tracker_spec(tracker_spec)
    cfg_i = _sequence_seed(cfg, index)
    adv, traces, clean_boxes = attack_sequence(seq, factory, cfg_i)
    return index, adv, traces, clean_boxes


def run_attack(
    sequences: list[Sequence], tracker_spec: str, cfg: AttackConfig, workers: int = 1
) -> list[tuple[list[ImageBuffer], list[FrameAttackTrace], list[BoundingBox]]]:
    """Attack every sequence, optionally across processes; order is preserved."""
    jobs = [(i, seq, tracker_spec, cfg) for i, seq in enumerate(sequences)]
    results: list = [None] * len(jobs)
    if workers <= 1 or len(jobs) == 1:
        for job in jobs:
            index, adv, traces, boxes = _attack_one(job)
            results[index] = (adv, traces, boxes)
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            for index, adv, traces, boxes in pool.map(_attack_one, jobs):
                results[index] = (adv, traces, boxes)
    return results


def save_attack_outputs(
    out_dir: Path,
    seq: Sequence,
    adv_frames: list[ImageBuffer],
    traces: list[FrameAttackTrace],
    clean_boxes: list[BoundingBox],
    include_timing: bool = False,
) -> Path:
    seq_dir = out_dir / seq.name
    adv_dir = seq_dir / "adv"
    adv_dir.mkdir(parents=True, exist_ok=True)
    for t in range(1, len(adv_frames)):
        write_png(adv_frames[t], adv_dir / f"{t + 1:06d}.png")
    with (seq_dir / "traces.jsonl").open("w") as fh:
        for trace in traces:
            fh.write(json.dumps(trace.to_dict(include_timing), sort_keys=True) + "\n")
    with (seq_dir / "clean_boxes.txt").open("w") as fh:
        for b in clean_boxes:
            fh.write(f"{b.x!r},{b.y!r},{b.w!r},{b.h!r}\n")
    return seq_dir


def load_attack_outputs(
    out_dir: Path, seq: Sequence
) -> tuple[list[ImageBuffer], list[FrameAttackTrace], list[BoundingBox]]:
    """Inverse of save_attack_outputs; the clean first frame comes from the dataset."""
    seq_dir = out_dir / seq.name
    if not seq_dir.is_dir():
        raise LoadError(f"no attack outputs for sequence {seq.name!r} under {out_dir}")
    adv = [seq.frames[0]]
    for t in range(1, len(seq.frames)):
        adv.append(read_image(seq_dir / "adv" / f"{t + 1:06d}.png"))
    traces = [
        FrameAttackTrace.from_dict(json.loads(line))
        for line in (seq_dir / "traces.jsonl").read_text().splitlines()
        if line.strip()
    ]
    boxes = []
    for line in (seq_dir / "clean_boxes.txt").read_text().splitlines():
        x, y, w, h = (float(p) for p in line.split(","))
        boxes.append(BoundingBox(x, y, w, h))
    return adv, traces, boxes


# ---------------------------------------------------------------------------
# subcommands

def cmd_attack(args: argparse.Namespace) -> int:
    base = {}
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        base = manifest.get("config", {})
        if args.dataset is None:
            args.dataset = manifest["dataset"]
        if args.tracker is None:
            args.tracker = manifest["tracker"]
    if args.dataset is None or args.tracker is None:
        raise ContractViolation("attack needs --dataset and --tracker (or --manifest)")
    cfg = build_config(args, base)
    sequences = resolve_dataset(args.dataset)
    out_dir = Path(args.output)
    write_manifest(out_dir, cfg, args.tracker, args.dataset, args.workers)
    results = run_attack(sequences, args.tracker, cfg, args.workers)
    for seq, (adv, traces, clean_boxes) in zip(sequences, results):
        seq_dir = save_attack_outputs(out_dir, seq, adv, traces, clean_boxes, args.timing)
        total_queries = sum(t.queries_used for t in traces)
        print(f"{seq.name}: {len(traces)} frames attacked, {total_queries} queries -> {seq_dir}")
    return 0


def _evaluate(args: argparse.Namespace, conditions: list[str], sweep: list[float] | None) -> int:
    cfg = build_config(args)
    sequences = resolve_dataset(args.dataset)
    factory = resolve_tracker_spec(args.tracker)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(out_dir, cfg, args.tracker, args.dataset, args.workers)

    need_attack = bool(set(conditions) & {"random", "attack"})
    attack_results = None
    if need_attack:
        if args.attack_dir:
            attack_results = [
                load_attack_outputs(Path(args.attack_dir), seq) for seq in sequences
            ]
        else:
            attack_results = run_attack(sequences, args.tracker, cfg, args.workers)

    reports: list[EvalReport] = []
    for condition in conditions:
        inputs: list[ConditionInput] = []
        for i, seq in enumerate(sequences):
            if condition == "original":
                inputs.append(ConditionInput(seq=seq))
            elif condition == "attack":
                adv, traces, clean_boxes = attack_results[i]
                inputs.append(
                    ConditionInput(seq=seq, frames=adv, traces=traces, clean_boxes=clean_boxes)
                )
            else:  # random, matched to the attack's per-frame noise
                adv, traces, clean_boxes = attack_results[i]
                rng = np.random.default_rng([cfg.rng_seed, _BASELINE_TAG, i])
                frames = matched_random_baseline(seq, traces, rng)
                inputs.append(
                    ConditionInput(seq=seq, frames=frames, traces=traces, clean_boxes=clean_boxes)
                )
        reports.append(evaluate_condition(condition, inputs, factory))

    written = write_report(reports, out_dir, figures=not args.no_figures)

    if sweep:
        rows = []
        for budget in sweep:
            budget_cfg = cfg.replace(max_noise_l2=budget)
            budget_results = run_attack(sequences, args.tracker, budget_cfg, args.workers)
            inputs = [
                ConditionInput(seq=seq, frames=r[0], traces=r[1], clean_boxes=r[2])
                for seq, r in zip(sequences, budget_results)
            ]
            report = evaluate_condition("attack", inputs, factory)
            rows.append((budget, report.aggregate.mean_iou, report.aggregate.failure_rate))
        sweep_path = out_dir / "sweep.csv"
        with sweep_path.open("w") as fh:
            fh.write("max_noise_l2,mean_iou,failure_rate\n")
            for budget, mean_iou, rate in rows:
                fh.write(f"{budget},{mean_iou},{rate}\n")
        written.append(sweep_path)
        if not args.no_figures:
            from .figures import render_budget_sweep

            written.append(render_budget_sweep(rows, out_dir / "sweep_plot.png"))

    for report in reports:
        agg = report.aggregate
        if agg is None:
            continue
        print(
            f"{report.condition}: mean_iou={agg.mean_iou:.4f} failures={agg.failures:.2f} "
            f"auc={agg.success_auc:.4f} precision@20={agg.precision_at_20px:.4f}"
        )
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    conditions = [c.strip() for c in args.conditions.split(",") if c.strip()]
    for c in conditions:
        if c not in _CONDITIONS:
            raise ContractViolation(f"unknown condition {c!r}; choose from {_CONDITIONS}")
    return _evaluate(args, conditions, None)


def cmd_compare(args: argparse.Namespace) -> int:
    sweep = None
    if args.budget_sweep:
        sweep = [float(v) for v in args.budget_sweep.split(",") if v.strip()]
        if len(sweep) < 2:
            raise ContractViolation("--budget-sweep needs at least two budgets")
    return _evaluate(args, list(_CONDITIONS), sweep)


def cmd_synth(args: argparse.Namespace) -> int:
    overrides = {}
    if args.length is not None:
        overrides["length"] = args.length
    if args.motion is not None:
        overrides["motion"] = args.motion
    if args.velocity is not None:
        vx, vy = (float(v) for v in args.velocity.split(","))
        overrides["velocity"] = (vx, vy)
    if args.start is not None:
        sx, sy = (float(v) for v in args.start.split(","))
        overrides["start"] = (sx, sy)
    if args.amplitude is not None:
        overrides["amplitude"] = args.amplitude
    if args.period is not None:
        overrides["period"] = args.period
    if args.step_sigma is not None:
        overrides["step_sigma"] = args.step_sigma
    if args.background_noise_sigma is not None:
        overrides["background_noise_sigma"] = args.background_noise_sigma
    if args.channels is not None:
        overrides["channels"] = args.channels

    out = Path(args.out)
    for i in range(args.count):
        spec = easy_preset(texture_seed=args.texture_seed + i, **overrides)
        seq = generate(spec)
        target = out if args.count == 1 else out / f"seq_{i:03d}"
        save_directory(seq, target)
        print(f"wrote {len(seq)} frames to {target}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .bridge import serve

    factory = resolve_tracker_spec(args.tracker)
    serve(factory, transport=args.transport, max_connections=args.max_connections)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advtrack",
        description="Black-box IoU-feedback attacks on video object trackers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_attack = sub.add_parser("attack", help="perturb a dataset against a tracker")
    p_attack.add_argument("--dataset", help="directory, synth:easy, synth:easy*N, synth:{json}")
    p_attack.add_argument("--tracker", help="builtin:ncc | builtin:mosse | bridge:...")
    p_attack.add_argument("--output", "-o", required=True)
    p_attack.add_argument("--manifest", type=Path, help="reuse a previous run_manifest.json")
    p_attack.add_argument("--workers", type=int, default=1)
    p_attack.add_argument("--timing", action="store_true",
                          help="include wall-time fields in traces (breaks bit-reproducibility)")
    _add_config_flags(p_attack)
    p_attack.set_defaults(func=cmd_attack)

    p_eval = sub.add_parser("evaluate", help="score conditions and write reports")
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--tracker", required=True)
    p_eval.add_argument("--output", "-o", required=True)
    p_eval.add_argument("--conditions", default="original,random,attack")
    p_eval.add_argument("--attack-dir", help="reuse adversarial frames and traces from cmd_attack")
    p_eval.add_argument("--workers", type=int, default=1)
    p_eval.add_argument("--no-figures", action="store_true")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_cmp = sub.add_parser("compare", help="original vs random vs attack, plus budget sweeps")
    p_cmp.add_argument("--dataset", required=True)
    p_cmp.add_argument("--tracker", required=True)
    p_cmp.add_argument("--output", "-o", required=True)
    p_cmp.add_argument("--budget-sweep", help="comma-separated max_noise_l2 values")
    p_cmp.add_argument("--attack-dir", help="reuse adversarial frames and traces from cmd_attack")
    p_cmp.add_argument("--workers", type=int, default=1)
    p_cmp.add_argument("--no-figures", action="store_true")
    _add_config_flags(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_synth = sub.add_parser("synth", help="render synthetic sequences to a directory")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--preset", default="easy", choices=["easy"])
    p_synth.add_argument("--count", type=int, default=1)
    p_synth.add_argument("--texture-seed", type=int, default=0)
    p_synth.add_argument("--length", type=int)
    p_synth.add_argument("--motion", choices=["linear", "sinusoidal", "random_walk"])
    p_synth.add_argument("--velocity", help="vx,vy pixels per frame")
    p_synth.add_argument("--start", help="x,y top-left of the target on frame 1")
    p_synth.add_argument("--amplitude", type=float)
    p_synth.add_argument("--period", type=float)
    p_synth.add_argument("--step-sigma", type=float)
    p_synth.add_argument("--background-noise-sigma", type=float)
    p_synth.add_argument("--channels", type=int, choices=[1, 3])
    p_synth.set_defaults(func=cmd_synth)

    p_serve = sub.add_parser("serve", help="expose a tracker over the oracle wire protocol")
    p_serve.add_argument("--tracker", required=True)
    p_serve.add_argument("--transport", default="stdio", help="stdio or tcp:HOST:PORT")
    p_serve.add_argument("--max-connections", type=int, default=None)
    p_serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AttackAborted as e:
        print(f"error: attack aborted: {e}", file=sys.stderr)
        return 1
    except (ContractViolation, LoadError, OracleError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
