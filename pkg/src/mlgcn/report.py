"""Figure rendering for CLI report paths (training curves, cost breakdowns)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .flops import CostReport  # noqa: E402


def render_training_curves(log_rows: list[dict], path, task: str = "classification") -> None:
    """Loss and accuracy/mIoU per epoch, saved next to the CSV log."""
    epochs = [row["epoch"] for row in log_rows]
    losses = [row["train_loss"] for row in log_rows]
    metric = [row["train_acc"] for row in log_rows]
    metric_name = "train accuracy" if task == "classification" else "train mIoU"

    fig, ax_loss = plt.subplots(figsize=(7, 4))
    ax_loss.plot(epochs, losses, color="tab:red", label="train loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss", color="tab:red")
    ax_loss.tick_params(axis="y", labelcolor="tab:red")

    ax_acc = ax_loss.twinx()
    ax_acc.plot(epochs, metric, color="tab:blue", label=metric_name)
    vals = [row["val_acc"] for row in log_rows]
    if any(v != "" for v in vals):
        ax_acc.plot([e for e, v in zip(epochs, vals) if v != ""],
                    [v for v in vals if v != ""],
                    color="tab:green", linestyle="--", label="validation")
    ax_acc.set_ylabel(metric_name, color="tab:blue")
    ax_acc.set_ylim(0.0, 1.05)
    ax_acc.tick_params(axis="y", labelcolor="tab:blue")

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_cost_breakdown(report: CostReport, path, title: str = "FLOPs by operation") -> None:
    """Horizontal bar chart of per-operation FLOPs, saved next to the CSV."""
    labels = [f"{e.op} {e.shape}" for e in report.entries]
    values = [e.flops / 1e6 for e in report.entries]
    colors = {"graph": "tab:orange", "dense": "tab:blue", "head": "tab:green"}
    bar_colors = [colors.get(e.kind, "tab:gray") for e in report.entries]

    fig, ax = plt.subplots(figsize=(8, 0.35 * len(labels) + 1.5))
    ax.barh(range(len(labels)), values, color=bar_colors)
    ax.set_yticks(range(len(labels)))
    ax.set_yticklabels(labels, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("MFLOPs")
    ax.set_title(f"{title} (total {report.total_flops / 1e9:.4f} G)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
