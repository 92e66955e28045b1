"""Figure rendering for benchmark and training reports.

Figures are written next to the delimited output files; rendering uses the
Agg backend so no display is required.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from chela.bench import BenchRow, fit_scaling_exponent


def render_scaling_figure(rows: list[BenchRow], path: str) -> None:
    """Log-log runtime vs. length, one line per op, fitted slope in legend."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    ops = sorted({r.op_name for r in rows})
    for op in ops:
        sub = sorted((r for r in rows if r.op_name == op), key=lambda r: r.L)
        xs = [r.L for r in sub]
        ys = [r.forward_ms + r.backward_ms for r in sub]
        label = op
        if len({r.L for r in sub}) >= 3:
            label = f"{op} (slope {fit_scaling_exponent(sub):.2f})"
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("sequence length")
    ax.set_ylabel("forward + backward (ms)")
    ax.set_title("Runtime scaling")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_training_figure(metrics: list[dict], path: str) -> None:
    """Loss (and accuracy when present) against training step."""
    fig, ax = plt.subplots(figsize=(6.5, 4.5))
    steps = [m["step"] for m in metrics]
    ax.plot(steps, [m["loss"] for m in metrics], marker=".", label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    accs = [m["accuracy"] for m in metrics]
    if all(a == a for a in accs):  # skip all-NaN (regression runs)
        ax2 = ax.twinx()
        ax2.plot(steps, accs, color="tab:orange", marker=".", label="accuracy")
        ax2.set_ylabel("accuracy")
        ax2.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
