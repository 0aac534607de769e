"""Figure rendering for evaluation reports.

Every report-producing CLI path writes delimited output plus a matplotlib
figure next to it. Rendering is headless (Agg) and deterministic.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def render_variant_table(report, path, title="IoU per part and variant"):
    """Grouped bar chart of the variant table, one group per part."""
    parts = report.part_classes
    variants = report.variants
    x = np.arange(len(parts))
    width = 0.8 / max(len(variants), 1)
    fig, ax = plt.subplots(figsize=(max(6, len(parts) * 1.2), 4))
    for i, variant in enumerate(variants):
        values = [report.cells[(p, variant)] for p in parts]
        ax.bar(x + i * width, values, width, label=variant)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(parts, rotation=30, ha="right")
    ax.set_ylabel("IoU")
    ax.set_ylim(0, 1)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_selection_curve(rows, path, title="Model selection vs sample size"):
    ns = [row["n"] for row in rows]
    means = [row["mean"] for row in rows]
    stds = [row["std"] for row in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(ns, means, yerr=stds, marker="o", label="fused (sampled selection)")
    if rows:
        ax.axhline(rows[0]["upper"], linestyle="--", color="green",
                   label="upper bound")
        ax.axhline(rows[0]["lower"], linestyle="--", color="red",
                   label="lower bound")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("images seen")
    ax.set_ylabel("average IoU on full set")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_learning_curve(rows, path, title="Label efficiency"):
    by_variant = {}
    for row in rows:
        by_variant.setdefault(row["variant"], []).append(row)
    fig, ax = plt.subplots(figsize=(6, 4))
    for variant, entries in sorted(by_variant.items()):
        entries.sort(key=lambda r: r["size"])
        sizes = [r["size"] for r in entries]
        means = [r["mean"] for r in entries]
        stds = [r["std"] for r in entries]
        ax.errorbar(sizes, means, yerr=stds, marker="o", label=variant)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("training images")
    ax.set_ylabel("average IoU")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
