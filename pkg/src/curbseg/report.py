"""Report writers: delimited output, fixed-width text tables, and figures.

Every CLI command that reports results writes CSV (stable 6-decimal float
formatting, no timestamps, so identical runs produce identical bytes) and
renders a matplotlib figure next to it.  Figure rendering always uses the
Agg backend.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_text_table(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Fixed-width table; returns the rendered text after writing it."""
    cells = [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
              for i, h in enumerate(header)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    text = "\n".join(lines) + "\n"
    Path(path).write_text(text)
    return text


def write_manifest(out_dir: str | Path, command: str, outputs: Sequence[str], seed=None) -> None:
    """Record what a command produced (no timestamps: runs stay comparable)."""
    manifest = {
        "command": command,
        "outputs": sorted(str(o) for o in outputs),
        "seed": seed,
    }
    (Path(out_dir) / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def fig_loss_curve(curve: Sequence[tuple[float, float, float]], path: str | Path) -> None:
    plt = _pyplot()
    curve = np.asarray(curve, dtype=np.float64).reshape(-1, 3)
    epochs = np.arange(1, len(curve) + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, curve[:, 0], label="total", lw=2)
    ax.plot(epochs, curve[:, 1], label="adaptive CE", ls="--")
    ax.plot(epochs, curve[:, 2], label="IoU surrogate", ls=":")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_tolerance_curves(
    taus: Sequence[float],
    precision: Sequence[float],
    recall: Sequence[float],
    f1: Sequence[float],
    path: str | Path,
) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(taus, precision, marker="o", label="precision")
    ax.plot(taus, recall, marker="s", label="recall")
    ax.plot(taus, f1, marker="^", label="F1")
    ax.set_xlabel("tolerance (m)")
    ax.set_ylabel("score")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_refinement(result, path: str | Path) -> None:
    """Bird's-eye scatter of kept/removed points with fitted curves."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 6))
    plotted = False
    if len(result.kept):
        ax.scatter(result.kept[:, 0], result.kept[:, 1], s=6, label="kept", color="tab:blue")
        plotted = True
    if len(result.removed):
        ax.scatter(result.removed[:, 0], result.removed[:, 1], s=10, marker="x",
                   label="removed", color="tab:red")
        plotted = True
    for cluster, model in zip(result.clusters, result.curves):
        if model is None or len(cluster.points) == 0:
            continue
        t, _ = model.frame_coords(cluster.points[:, :2])
        ts = np.linspace(t.min(), t.max(), 50)
        curve = model.origin + np.outer(ts, model.axis_u) + np.outer(model.evaluate(ts), model.axis_v)
        ax.plot(curve[:, 0], curve[:, 1], color="black", lw=1)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal")
    if plotted:
        ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def fig_throughput(stages: Sequence[str], fps: Sequence[float], path: str | Path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(stages, fps, color=["tab:blue", "tab:orange"][: len(stages)])
    ax.set_ylabel("frames per second")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
