"""Figures written next to the tabular outputs (PNG, non-interactive backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .attribution import ContributionMap  # noqa: E402


def _save(fig, path, meta: dict | None):
    path = Path(path)
    info = {"Software": "ccsg"}
    if meta:
        info["Description"] = "; ".join(f"{k}={v}" for k, v in meta.items())
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata=info)
    plt.close(fig)
    return path


def plot_contributions(cmap: ContributionMap, path, statement_ids: Sequence[str] | None = None,
                       max_panels: int = 6, meta: dict | None = None):
    """One horizontal bar panel per statement, tokens top to bottom, bars scaled by sum(|score|)."""
    ids = list(statement_ids) if statement_ids is not None else list(cmap.entries)
    ids = ids[:max_panels]
    if not ids:
        raise ValueError("nothing to plot")
    fig, axes = plt.subplots(len(ids), 1, figsize=(6, 1.1 + 0.35 * sum(len(cmap[i]) for i in ids)),
                             squeeze=False)
    for ax, sid in zip(axes[:, 0], ids):
        pairs = cmap[sid]
        total = sum(abs(s) for _, s in pairs) or 1.0
        vals = [s / total for _, s in pairs]
        ypos = range(len(pairs))
        ax.barh(ypos, vals, color=["tab:red" if v < 0 else "tab:blue" for v in vals])
        ax.set_yticks(list(ypos), [t for t, _ in pairs])
        ax.invert_yaxis()
        ax.axvline(0.0, color="black", lw=0.6)
        ax.set_title(sid, fontsize=9, loc="left")
    axes[-1, 0].set_xlabel("normalized contribution")
    fig.tight_layout()
    return _save(fig, path, meta)


def plot_training_curves(metrics: Sequence[dict], path, meta: dict | None = None):
    epochs = [m for m in metrics if m.get("kind") == "epoch"]
    if not epochs:
        raise ValueError("no epoch records")
    x = [m["epoch"] for m in epochs]
    fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.4))
    for key, style in (("L", "-"), ("L_bin", "--"), ("L_cot", ":")):
        left.plot(x, [m[key] for m in epochs], style, label=key)
    left.set_xlabel("epoch")
    left.set_ylabel("loss")
    left.legend()
    for key in ("heldout_acc", "heldout_paired"):
        ys = [m.get(key) for m in epochs]
        if any(y is not None for y in ys):
            right.plot(x, [float("nan") if y is None else y for y in ys], marker=".", label=key)
    right.set_xlabel("epoch")
    right.set_ylim(-0.02, 1.02)
    if right.lines:
        right.legend()
    fig.tight_layout()
    return _save(fig, path, meta)


def plot_ablation(rows: Sequence[dict], path, metrics=("accuracy", "paired_consistency"), meta: dict | None = None):
    """Grouped bars, one group per metric, one bar per arm."""
    if not rows:
        raise ValueError("no rows")
    fig, ax = plt.subplots(figsize=(5, 3.2))
    width = 0.8 / len(rows)
    for k, row in enumerate(rows):
        xs = [i + (k - (len(rows) - 1) / 2) * width for i in range(len(metrics))]
        vals = [row.get(m) if row.get(m) is not None else float("nan") for m in metrics]
        bars = ax.bar(xs, vals, width, label=row["arm"])
        ax.bar_label(bars, fmt="%.3f", fontsize=8)
    ax.set_xticks(range(len(metrics)), list(metrics))
    ax.set_ylim(0, 1.1)
    ax.legend()
    fig.tight_layout()
    return _save(fig, path, meta)
