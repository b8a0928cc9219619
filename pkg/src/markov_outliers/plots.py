"""Figures written next to the CSV side outputs.

Uses the Agg canvas directly so nothing touches the global pyplot state or
needs a display.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

_META = {"Software": None}


def _save(fig: Figure, path: str | Path):
    FigureCanvasAgg(fig)
    fmt = Path(path).suffix.lstrip(".").lower() or "png"
    fig.savefig(path, format=fmt, metadata=_META if fmt == "png" else None, dpi=120)


def plot_comparison(labels: Sequence[float], pivot_label: float, path: str | Path, title: str = ""):
    """Histogram of comparison labels with the pivot's label marked."""
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot()
    vals = [float(x) for x in labels]
    ax.hist(vals, bins=min(50, max(5, len(set(vals)))), color="0.6", edgecolor="0.3")
    ax.axvline(float(pivot_label), color="C3", lw=2, label="pivot")
    ax.set_xlabel("label")
    ax.set_ylabel("count")
    ax.legend(loc="upper right")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_epsilons(epsilons: Sequence[float], t: int, path: str | Path, title: str = ""):
    """Sorted per-trajectory epsilons with the t-th smallest highlighted."""
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot()
    vals = sorted(float(e) for e in epsilons)
    ax.plot(range(1, len(vals) + 1), vals, "o-", color="0.4", ms=4)
    ax.plot([t], [vals[t - 1]], "o", color="C3", ms=8, label=f"t = {t}")
    ax.set_xlabel("order")
    ax.set_ylabel("observed epsilon")
    ax.set_yscale("log")
    ax.legend(loc="upper left")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def plot_sum_distribution(dist: dict, delta: float, path: str | Path, title: str = ""):
    """Counts of outcome tuples by summed value, with the threshold marked."""
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot()
    xs = [float(v) for v in dist]
    ax.bar(xs, list(dist.values()), width=0.8 * (min(b - a for a, b in zip(xs, xs[1:])) if len(xs) > 1 else 1))
    ax.axvline(float(delta), color="C3", lw=2, label="delta")
    ax.set_xlabel("summed value")
    ax.set_ylabel("tuples")
    ax.legend(loc="upper right")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
