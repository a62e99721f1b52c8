"""Acceptance gate: one test per shipping criterion.

The 20-sequence benchmark fixtures are module-scoped and shared across
criteria, so this file costs a few minutes of tracker queries in total.
Every test ends with a printed ``PASS criterion N`` line carrying the
measured numbers (visible with ``-rA``/``-s``); a flagged-but-allowed
outcome prints ``FLAG`` instead.
"""

import json
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import binomtest, spearmanr

from advtrack.attack import attack_sequence, sample_tangential
from advtrack.cli import _BASELINE_TAG, main as cli_main
from advtrack.core import AttackConfig, BoundingBox, ImageBuffer
from advtrack.evaluation import (
    ConditionInput,
    evaluate_condition,
    matched_random_baseline,
    run_tracker,
)
from advtrack.geometry import iou
from advtrack.synthdata import easy_preset, generate
from advtrack.trackers import ground_truth_double, resolve_tracker_spec
from helpers import raster_iou

N_SEEDS = 20
BUDGETS = (750.0, 1900.0, 3800.0, 7600.0)
ALPHA = 0.05


@pytest.fixture(scope="module")
def bench():
    return [generate(easy_preset(texture_seed=i)) for i in range(N_SEEDS)]


@pytest.fixture(scope="module")
def ncc_runs(bench):
    """Default-config attack on every benchmark sequence against the NCC tracker."""
    factory = resolve_tracker_spec("builtin:ncc")
    return [
        attack_sequence(seq, factory, AttackConfig(rng_seed=i))
        for i, seq in enumerate(bench)
    ]


def _online_mean(traces, clean_boxes) -> float:
    """Mean overlap between the live session's final boxes and the clean run."""
    return float(
        np.mean([iou(t.final_box, c) for t, c in zip(traces, clean_boxes[1:])])
    )


def _random_mean(seq, traces, clean_boxes, factory, key) -> float:
    frames = matched_random_baseline(seq, traces, np.random.default_rng(key))
    boxes = run_tracker(seq, factory, frames_override=frames)
    return float(np.mean([iou(b, c) for b, c in zip(boxes[1:], clean_boxes[1:])]))


def _attack_vs_random(bench, tracker_spec, **cfg_overrides):
    factory = resolve_tracker_spec(tracker_spec)
    attack_means, random_means = [], []
    for i, seq in enumerate(bench):
        _, traces, clean = attack_sequence(
            seq, factory, AttackConfig(rng_seed=i, **cfg_overrides)
        )
        attack_means.append(_online_mean(traces, clean))
        random_means.append(
            _random_mean(seq, traces, clean, factory, [i, _BASELINE_TAG])
        )
    return attack_means, random_means


def _tree(root: Path) -> dict[str, bytes]:
    # the manifest embeds the output path and tracker spec, which are allowed
    # to differ between otherwise identical runs
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "run_manifest.json"
    }


# ---------------------------------------------------------------------------


def test_criterion_1_candidates_preserve_radius():
    """Iso-noise sampling: every tangential candidate keeps the L2 radius."""
    rng = np.random.default_rng(2024)
    checked = 0
    worst = 0.0
    while checked < 1000:
        origin = rng.uniform(0.0, 255.0, size=(6, 7, 1))
        current = np.clip(origin + rng.normal(0.0, 12.0, size=origin.shape), 0.0, 255.0)
        radius = float(np.linalg.norm((current - origin).ravel()))
        if radius == 0.0:
            continue
        origin_buf, current_buf = ImageBuffer(origin), ImageBuffer(current)
        for _ in range(25):
            step = sample_tangential(origin_buf, current_buf, rng, 0.3)
            moved = float(np.linalg.norm((current + step.data - origin).ravel()))
            worst = max(worst, abs(moved - radius) / radius)
            checked += 1
    assert checked >= 1000
    assert worst <= 1e-6
    print(f"PASS criterion 1: {checked} candidates, worst radius error {worst:.2e}")


def test_criterion_2_overlap_matches_rasterization():
    """Analytic overlap equals pixel-counting on 10,000 random integer boxes."""
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        xa, ya, xb, yb = rng.integers(-15, 61, size=4)
        wa, ha, wb, hb = rng.integers(1, 31, size=4)
        a = BoundingBox(float(xa), float(ya), float(wa), float(ha))
        b = BoundingBox(float(xb), float(yb), float(wb), float(hb))
        assert iou(a, b) == raster_iou(a, b)
    print("PASS criterion 2: 10000 random integer boxes, exact match")


def test_criterion_3_monotone_descent_and_exact_accounting(ncc_runs):
    """Accepted fused overlap never rises; every query is accounted for."""
    frames_checked = 0
    for _, traces, _ in ncc_runs:
        for tr in traces:
            assert tr.error is None
            spent = sum(r.candidate_queries + r.step_queries for r in tr.iterations)
            assert tr.queries_used == 1 + tr.anchor_queries + spent + tr.sync_queries
            fused = [s.fused for s in tr.iou_trajectory]
            for prev, nxt in zip(fused, fused[1:]):
                assert nxt <= prev + 1e-12
            frames_checked += 1
    assert frames_checked == N_SEEDS * 29
    print(f"PASS criterion 3: {frames_checked} frames, accounting exact, descent monotone")


def test_criterion_4_attack_beats_matched_random_noise(bench, ncc_runs):
    """Same noise budget, targeted beats random: sign test significant for NCC,
    same direction for the second tracker family."""
    ncc_factory = resolve_tracker_spec("builtin:ncc")
    attack_means, random_means = [], []
    for i, (seq, (_, traces, clean)) in enumerate(zip(bench, ncc_runs)):
        attack_means.append(_online_mean(traces, clean))
        random_means.append(
            _random_mean(seq, traces, clean, ncc_factory, [i, _BASELINE_TAG])
        )
    wins = sum(a < r for a, r in zip(attack_means, random_means))
    p = binomtest(wins, N_SEEDS, alternative="greater").pvalue
    assert float(np.mean(attack_means)) < float(np.mean(random_means))
    assert p < ALPHA, f"sign test not significant: {wins}/{N_SEEDS} wins, p={p:.4g}"

    mosse_attack, mosse_random = _attack_vs_random(bench, "builtin:mosse")
    mosse_margin = float(np.mean(mosse_random)) - float(np.mean(mosse_attack))
    mosse_wins = sum(a < r for a, r in zip(mosse_attack, mosse_random))
    assert mosse_margin > 0.0, "direction must agree on the second tracker"

    print(
        "PASS criterion 4: "
        f"ncc {np.mean(attack_means):.3f} vs random {np.mean(random_means):.3f} "
        f"({wins}/{N_SEEDS} wins, p={p:.2e}); "
        f"mosse {np.mean(mosse_attack):.3f} vs random {np.mean(mosse_random):.3f} "
        f"(margin {mosse_margin:.3f}, {mosse_wins}/{N_SEEDS} wins)"
    )


def test_criterion_5_spatial_only_ablation_is_reported(bench, ncc_runs):
    """Dropping the temporal term must not significantly beat the default fusion.

    This criterion reports rather than fails: a significant win for the
    spatial-only variant prints a FLAG line for review.
    """
    default_means = [_online_mean(traces, clean) for _, traces, clean in ncc_runs]
    factory = resolve_tracker_spec("builtin:ncc")
    spatial_means = []
    for i, seq in enumerate(bench):
        _, traces, clean = attack_sequence(
            seq, factory, AttackConfig(rng_seed=i, spatial_weight=1.0)
        )
        spatial_means.append(_online_mean(traces, clean))
    assert len(spatial_means) == len(default_means) == N_SEEDS

    wins = sum(s < d for s, d in zip(spatial_means, default_means))
    p = binomtest(wins, N_SEEDS, alternative="greater").pvalue
    gap = float(np.mean(default_means)) - float(np.mean(spatial_means))
    outperforms = p < ALPHA and gap > 0.0
    verdict = "FLAG" if outperforms else "PASS"
    print(
        f"{verdict} criterion 5: spatial-only {np.mean(spatial_means):.3f} vs "
        f"default {np.mean(default_means):.3f} ({wins}/{N_SEEDS} wins, p={p:.3f})"
        + ("; spatial-only significantly outperforms - review" if outperforms else "")
    )


def test_criterion_6_damage_grows_with_the_noise_budget(bench):
    """Across increasing budgets, overlap with the clean run must not rise."""
    factory = resolve_tracker_spec("builtin:ncc")
    budget_col, mean_col = [], []
    per_budget = {}
    for budget in BUDGETS:
        means = []
        for i, seq in enumerate(bench):
            _, traces, clean = attack_sequence(
                seq, factory, AttackConfig(rng_seed=i, max_noise_l2=budget)
            )
            means.append(_online_mean(traces, clean))
        per_budget[budget] = float(np.mean(means))
        budget_col.extend([budget] * len(means))
        mean_col.extend(means)
    rho = float(spearmanr(budget_col, mean_col).statistic)
    assert rho <= 0.0, f"overlap should not grow with budget (rho={rho:.3f})"
    summary = ", ".join(f"{b:g}->{m:.3f}" for b, m in per_budget.items())
    print(f"PASS criterion 6: spearman rho={rho:.3f} over {len(mean_col)} runs ({summary})")


def test_criterion_7_perfect_oracle_never_degrades():
    """Against a ground-truth double on a static sequence the attack finds no
    purchase: fused overlap pinned at 1.0, no protocol failures, full AUC."""
    seq = generate(easy_preset(length=30, velocity=(0.0, 0.0)))
    factory = lambda: ground_truth_double(seq, hold_last=True)
    adv, traces, clean = attack_sequence(seq, factory, AttackConfig(rng_seed=0))
    for tr in traces:
        assert tr.error is None
        assert tr.final_box is not None
        for scores in tr.iou_trajectory:
            assert scores.fused == 1.0

    report = evaluate_condition(
        "attack",
        [ConditionInput(seq=seq, frames=adv, traces=traces, clean_boxes=clean)],
        factory,
    )
    row = report.per_sequence[0]
    assert row.failures == 0
    assert row.success_auc == 1.0
    print("PASS criterion 7: fused overlap 1.0 on every iteration, 0 failures, AUC 1.0")


def test_criterion_8_identical_manifests_reproduce_bit_for_bit(tmp_path):
    """Same manifest and seed: frames, traces, and reports are byte-identical."""
    attack_args = ["--dataset", "synth:easy*2", "--tracker", "builtin:ncc"]
    for run in ("a", "b"):
        assert cli_main(["attack", *attack_args, "-o", str(tmp_path / run)]) == 0
        rc = cli_main(
            ["evaluate", *attack_args, "--attack-dir", str(tmp_path / run),
             "-o", str(tmp_path / f"report_{run}"), "--no-figures"]
        )
        assert rc == 0
    assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
    assert _tree(tmp_path / "report_a") == _tree(tmp_path / "report_b")
    print("PASS criterion 8: two seeded runs byte-identical (frames, traces, reports)")


def test_criterion_9_bridged_tracker_matches_in_process(tmp_path):
    """The wire protocol is transparent: a bridged NCC server reproduces the
    in-process attack output exactly."""
    dataset = 'synth:{"length":10}'
    bridge_spec = (
        f"bridge:cmd:{sys.executable} -m advtrack.cli serve --tracker builtin:ncc"
    )
    rc = cli_main(
        ["attack", "--dataset", dataset, "--tracker", "builtin:ncc",
         "-o", str(tmp_path / "local")]
    )
    assert rc == 0
    rc = cli_main(
        ["attack", "--dataset", dataset, "--tracker", bridge_spec,
         "-o", str(tmp_path / "bridged")]
    )
    assert rc == 0
    local, bridged = _tree(tmp_path / "local"), _tree(tmp_path / "bridged")
    assert sorted(local) == sorted(bridged)
    assert local == bridged
    print(f"PASS criterion 9: {len(local)} output files byte-identical across the bridge")
