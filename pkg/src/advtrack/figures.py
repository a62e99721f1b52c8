"""Matplotlib rendering for evaluation reports; files only, no display."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 (backend must be pinned first)

from .evaluation import PRECISION_THRESHOLDS, SUCCESS_THRESHOLDS, EvalReport  # noqa: E402

_COLORS = {"original": "#2b7a2b", "random": "#888888", "attack": "#c0392b"}


def _color(condition: str) -> str:
    return _COLORS.get(condition, "#1f77b4")


def render_overlap_curves(reports: list[EvalReport], out_dir: str | Path) -> list[Path]:
    """Success and precision curves per condition, one PNG each."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    specs = [
        ("success", SUCCESS_THRESHOLDS, "overlap threshold", "success rate",
         lambda agg: agg.success_curve, "success_plot.png"),
        ("precision", PRECISION_THRESHOLDS, "center error threshold (px)", "precision",
         lambda agg: agg.precision_curve, "precision_plot.png"),
    ]
    for title, thresholds, xlabel, ylabel, pick, filename in specs:
        fig, ax = plt.subplots(figsize=(5.0, 3.6), dpi=120)
        for report in reports:
            if report.aggregate is None:
                continue
            ax.plot(
                thresholds,
                pick(report.aggregate),
                label=report.condition,
                color=_color(report.condition),
                linewidth=1.8,
            )
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_ylim(-0.02, 1.02)
        ax.set_title(f"{title} curve")
        ax.grid(alpha=0.3)
        ax.legend(frameon=False)
        fig.tight_layout()
        path = out_dir / filename
        fig.savefig(path)
        plt.close(fig)
        written.append(path)
    return written


def render_budget_sweep(
    rows: list[tuple[float, float, float]], out_path: str | Path
) -> Path:
    """Noise budget versus mean IoU and failure rate; rows are (budget, iou, rate)."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    budgets = [r[0] for r in rows]
    ious = [r[1] for r in rows]
    rates = [r[2] for r in rows]

    fig, ax = plt.subplots(figsize=(5.0, 3.6), dpi=120)
    ax.plot(budgets, ious, "o-", color="#c0392b", label="mean IoU")
    ax.set_xlabel("noise budget (L2)")
    ax.set_ylabel("mean IoU", color="#c0392b")
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    twin = ax.twinx()
    twin.plot(budgets, rates, "s--", color="#555555", label="failure rate")
    twin.set_ylabel("failure rate", color="#555555")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
