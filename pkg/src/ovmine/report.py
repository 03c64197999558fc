"""Figure rendering for the CSV reports the eval stage emits.

Each renderer reads one CSV from a directory and, when present, writes
a PNG next to it. Rendering is optional everywhere; the CSVs stay the
canonical output.
"""

from __future__ import annotations

import csv
from pathlib import Path


def _load_csv(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_bias_report(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    written = []
    summary = directory / "bias_report.csv"
    if summary.exists():
        rows = _load_csv(summary)
        plt = _pyplot()
        fig, ax = plt.subplots(figsize=(6, 4))
        variants = [row["variant"] for row in rows]
        base = [float(row["base_mean_conf"]) for row in rows]
        novel = [float(row["novel_mean_conf"]) for row in rows]
        positions = range(len(rows))
        width = 0.35
        ax.bar([p - width / 2 for p in positions], base, width, label="base")
        ax.bar([p + width / 2 for p in positions], novel, width, label="novel")
        ax.set_xticks(list(positions), variants)
        ax.set_ylabel("mean top-1 confidence")
        ax.set_title("confidence by group")
        ax.legend()
        out = directory / "bias_report.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    histogram = directory / "histogram.csv"
    if histogram.exists():
        rows = _load_csv(histogram)
        plt = _pyplot()
        panels = sorted({(row["variant"], row["group"]) for row in rows})
        fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.2), squeeze=False)
        for ax, key in zip(axes[0], panels):
            subset = [row for row in rows if (row["variant"], row["group"]) == key]
            subset.sort(key=lambda row: int(row["bin_index"]))
            lefts = [float(row["bin_left"]) for row in subset]
            widths = [float(row["bin_right"]) - float(row["bin_left"]) for row in subset]
            counts = [int(row["count"]) for row in subset]
            ax.bar(lefts, counts, width=widths, align="edge")
            ax.set_title(f"{key[0]} / {key[1]}")
            ax.set_xlabel("top-1 confidence")
        fig.tight_layout()
        out = directory / "histogram.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written


def render_gamma_sweep(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    path = directory / "gamma_sweep.csv"
    if not path.exists():
        return []
    rows = _load_csv(path)
    rows.sort(key=lambda row: float(row["gamma"]))
    gammas = [float(row["gamma"]) for row in rows]
    plt = _pyplot()
    fig, (left, right) = plt.subplots(1, 2, figsize=(9, 3.5))
    left.plot(gammas, [float(row["base_top1_acc"]) for row in rows], marker="o", label="base")
    left.plot(gammas, [float(row["novel_top1_acc"]) for row in rows], marker="s", label="novel")
    left.set_xlabel("gamma")
    left.set_ylabel("top-1 accuracy")
    left.legend()
    right.plot(gammas, [float(row["confidence_gap"]) for row in rows], marker="o")
    right.axhline(0.0, color="gray", linewidth=0.8)
    right.set_xlabel("gamma")
    right.set_ylabel("confidence gap")
    fig.tight_layout()
    out = directory / "gamma_sweep.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return [out]


def render_mining_report(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    path = directory / "concept_counts.csv"
    if not path.exists():
        return []
    rows = _load_csv(path)
    ids = [int(row["concept_id"]) for row in rows]
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(max(6, 0.4 * len(ids)), 3.5))
    ax.bar(ids, [int(row["true_objects"]) for row in rows], label="true", alpha=0.5)
    ax.bar(ids, [int(row["correct"]) for row in rows], label="correct mined", alpha=0.8)
    ax.set_xlabel("concept id")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    out = directory / "concept_counts.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return [out]


def render_all(directory: str | Path) -> list[Path]:
    written = []
    written.extend(render_bias_report(directory))
    written.extend(render_gamma_sweep(directory))
    written.extend(render_mining_report(directory))
    return written
