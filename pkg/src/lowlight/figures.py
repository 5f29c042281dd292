"""Matplotlib figure rendering for the CLI report paths.

Every command that writes delimited output also renders a small figure next
to it: loss curves for training runs, per-image metric bars for evaluation,
grouped bars for ablation tables, and a latency histogram for benchmarks.
"""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def save_loss_curves(log_csv, out_png, terms=("total", "projection", "consistency", "retinex", "perceptual")):
    iterations = []
    series = {t: [] for t in terms}
    with open(log_csv, newline="") as fh:
        for row in csv.DictReader(fh):
            iterations.append(int(row["iteration"]))
            for t in terms:
                series[t].append(float(row[t]))
    fig, ax = plt.subplots(figsize=(7, 4))
    for t in terms:
        ax.plot(iterations, series[t], label=t, linewidth=1.0)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def save_metric_bars(report, out_png):
    from .evaluate import MARKDOWN_COLUMNS

    cols = [
        (key, cap) for key, cap in MARKDOWN_COLUMNS
        if any(getattr(r, key) is not None for r in report.rows)
    ]
    if not cols:
        cols = [("niqe", "NIQE↓")]
    fig, axes = plt.subplots(1, len(cols), figsize=(4 * len(cols), 3.5), squeeze=False)
    names = [r.filename for r in report.rows]
    for ax, (key, cap) in zip(axes[0], cols):
        vals = [getattr(r, key) or 0.0 for r in report.rows]
        ax.bar(range(len(vals)), vals, color="#4878cf")
        mean = report.means()[key]
        if mean is not None:
            ax.axhline(mean, color="#d65f5f", linestyle="--", linewidth=1, label="mean")
            ax.legend(fontsize=7)
        ax.set_title(cap, fontsize=9)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=90, fontsize=6)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def save_ablation_bars(table, out_png, metrics=("psnr", "ssim", "perc_dist")):
    """``table`` is a list of dicts with a 'variant' key plus metric values."""
    present = [m for m in metrics if any(row.get(m) is not None for row in table)]
    if not present:
        present = ["niqe"]
    fig, axes = plt.subplots(1, len(present), figsize=(4 * len(present), 3.5), squeeze=False)
    labels = [row["variant"] for row in table]
    for ax, m in zip(axes[0], present):
        vals = [row.get(m) or 0.0 for row in table]
        ax.bar(range(len(vals)), vals, color="#6acc65")
        ax.set_title(m, fontsize=9)
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels, rotation=20, fontsize=7)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)


def save_latency_hist(times_ms, out_png, title=""):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.hist(times_ms, bins=min(30, max(5, len(times_ms) // 3)), color="#956cb4")
    ax.set_xlabel("per-image latency (ms)")
    ax.set_ylabel("count")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return Path(out_png)
