"""Figure rendering for report files.

Every report-writing command drops a PNG next to its JSON/TSV output.
Rendering is headless (Agg) and optional via the `figures` config flag.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_FIG_W = 6.4
_GOLDEN = 0.618


def _new_axes(title: str):
    fig, ax = plt.subplots(figsize=(_FIG_W, _FIG_W * _GOLDEN))
    ax.set_title(title)
    return fig, ax


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_correlation(report_dict: dict, path: str | Path) -> Path:
    """Grouped bars of tau_b / tau_c per perspective."""
    perspectives = list(report_dict["perspectives"])
    tau_b = [report_dict["perspectives"][p]["tau_b"] for p in perspectives]
    tau_c = [report_dict["perspectives"][p]["tau_c"] for p in perspectives]
    fig, ax = _new_axes(f"Correlation with human judgments ({report_dict['split']})")
    x = range(len(perspectives))
    width = 0.38
    ax.bar([i - width / 2 for i in x], tau_b, width, label="tau_b")
    ax.bar([i + width / 2 for i in x], tau_c, width, label="tau_c")
    ax.set_xticks(list(x))
    ax.set_xticklabels(perspectives)
    ax.set_ylabel("Kendall tau")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.legend()
    return _save(fig, Path(path))


def plot_training(history_dict: dict, path: str | Path) -> Path:
    """Training loss and validation tau curves on twin axes."""
    epochs = [e["epoch"] for e in history_dict["epochs"]]
    loss = [e["train_loss"] for e in history_dict["epochs"]]
    mean_tau = [e["val_tau_mean"] for e in history_dict["epochs"]]
    fig, ax = _new_axes("Training progress")
    ax.plot(epochs, loss, marker="o", color="tab:red", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss", color="tab:red")
    ax2 = ax.twinx()
    ax2.plot(epochs, mean_tau, marker="s", color="tab:blue", label="val tau_c (mean)")
    ax2.set_ylabel("validation tau_c", color="tab:blue")
    best = history_dict.get("best_epoch")
    if best:
        ax.axvline(best, color="gray", linestyle="--", linewidth=0.8)
    return _save(fig, Path(path))


def plot_failures(
    abs_errors: dict[str, Sequence[float]], theta: float, path: str | Path
) -> Path:
    """Histogram of |y - y_hat| per perspective with the threshold marked."""
    fig, ax = _new_axes("Prediction error magnitudes")
    for name, errors in abs_errors.items():
        ax.hist(list(errors), bins=20, range=(0.0, 1.0), alpha=0.5, label=name)
    ax.axvline(theta, color="black", linestyle="--", label=f"theta = {theta}")
    ax.set_xlabel("|human - predicted|")
    ax.set_ylabel("samples")
    ax.legend()
    return _save(fig, Path(path))


def plot_latency(span_stats: dict[str, dict], path: str | Path) -> Path:
    """Bar chart of mean / p50 / p95 per measured span."""
    fig, ax = _new_axes("Per-sample latency by span")
    spans = list(span_stats)
    stats = ("mean_ms", "p50_ms", "p95_ms")
    width = 0.8 / len(stats)
    for k, stat in enumerate(stats):
        xs = [i + (k - 1) * width for i in range(len(spans))]
        ax.bar(xs, [span_stats[s][stat] for s in spans], width, label=stat)
    ax.set_xticks(range(len(spans)))
    ax.set_xticklabels(spans)
    ax.set_ylabel("milliseconds")
    ax.legend()
    return _save(fig, Path(path))
