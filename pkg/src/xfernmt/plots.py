"""Learning-curve figures rendered to image files next to the CSV output."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .ioutil import atomic_write_bytes


def _save(fig, path: str) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120, bbox_inches="tight")
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def save_curve_png(curve, path: str, title: str = "training run") -> None:
    """Train/dev perplexity per epoch, with the learning rate on a twin axis."""
    epochs = [r.epoch for r in curve.records]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, [r.train_ppl for r in curve.records], marker="o",
            markersize=3, label="train ppl")
    ax.plot(epochs, [r.dev_ppl for r in curve.records], marker="s",
            markersize=3, label="dev ppl")
    ax.set_xlabel("epoch")
    ax.set_ylabel("perplexity")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax2 = ax.twinx()
    ax2.plot(epochs, [r.lr for r in curve.records], color="gray",
             linestyle="--", linewidth=1, label="lr")
    ax2.set_ylabel("learning rate")
    handles, labels = ax.get_legend_handles_labels()
    h2, l2 = ax2.get_legend_handles_labels()
    ax.legend(handles + h2, labels + l2, loc="upper right")
    _save(fig, path)


def save_comparison_png(curves: dict[str, object], path: str,
                        metric: str = "dev_ppl",
                        title: str = "run comparison") -> None:
    """One dev-metric line per labeled run, for side-by-side comparisons."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, curve in curves.items():
        ax.plot([r.epoch for r in curve.records],
                [getattr(r, metric) for r in curve.records],
                marker="o", markersize=3, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel(metric.replace("_", " "))
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    _save(fig, path)
