"""Matplotlib figures rendered next to the delimited report outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .connector import TraceRow  # noqa: E402
from .vqa import EvalReport  # noqa: E402


def save_loss_curve(trace: list[TraceRow], path: str | Path) -> None:
    """Loss (left axis) and learning rate (right axis) against optimizer step."""
    steps = [row.step for row in trace]
    fig, ax_loss = plt.subplots(figsize=(7, 4))
    ax_loss.plot(steps, [row.loss for row in trace], color="tab:blue", label="loss")
    ax_loss.set_xlabel("step")
    ax_loss.set_ylabel("alignment loss", color="tab:blue")
    ax_loss.tick_params(axis="y", labelcolor="tab:blue")

    ax_lr = ax_loss.twinx()
    ax_lr.plot(steps, [row.lr for row in trace], color="tab:orange", label="lr")
    ax_lr.set_ylabel("learning rate", color="tab:orange")
    ax_lr.tick_params(axis="y", labelcolor="tab:orange")

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_report_chart(report: EvalReport, path: str | Path) -> None:
    """Bar chart of the Open / Closed / Average columns (absent columns skipped)."""
    columns = [
        ("Open", report.open_recall),
        ("Closed", report.closed_accuracy),
        ("Average", report.average),
    ]
    present = [(name, 100.0 * value) for name, value in columns if value is not None]
    fig, ax = plt.subplots(figsize=(5, 4))
    names = [name for name, _ in present]
    values = [value for _, value in present]
    bars = ax.bar(names, values, color=["tab:blue", "tab:orange", "tab:green"][: len(values)])
    ax.bar_label(bars, fmt="%.2f")
    ax.set_ylim(0, 105)
    ax.set_ylabel("score (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
