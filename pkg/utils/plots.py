"""
Charts for the stats command
"""

import logging
import os
import re

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from models.store import atomic_write  # noqa: E402

logger = logging.getLogger(__name__)


def _save(fig, path):
    with atomic_write(path, "wb") as handle:
        fig.savefig(handle, format="png", dpi=120, bbox_inches="tight")
    plt.close(fig)
    logger.info(f"✅ Saved chart {path}")


def plot_reformulation_histogram(report, path):
    """Number of queries per reformulation-ratio bucket, log-scaled counts"""
    buckets = sorted(report.reformulation_ratio_histogram)
    counts = [report.reformulation_ratio_histogram[b] for b in buckets]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([f"{b:.1f}" for b in buckets], counts, color="#4c72b0")
    ax.set_yscale("log")
    ax.set_xlabel("reformulation ratio")
    ax.set_ylabel("queries")
    _save(fig, path)


def plot_card_groups(report, query, path):
    """Positive/negative split of every card group shown for one query"""
    groups = [(ranking, split) for (q, ranking), split in report.card_group_label_split.items() if q == query]
    if not groups:
        logger.warning(f"⚠️ No card groups for query {query!r}")
        return False
    labels = [" > ".join(ranking) for ranking, _ in groups]
    positive = [split[0] for _, split in groups]
    negative = [split[1] for _, split in groups]

    fig, ax = plt.subplots(figsize=(max(6, len(groups) * 1.2), 4))
    ax.bar(labels, positive, label="positive", color="#55a868")
    ax.bar(labels, negative, bottom=positive, label="negative", color="#c44e52")
    ax.set_ylabel("% of QPVs")
    ax.set_title(query)
    ax.legend()
    ax.tick_params(axis="x", rotation=30)
    _save(fig, path)
    return True


def write_stats_charts(report, directory, queries=()):
    """Histogram plus one card-group chart per requested query; returns written paths"""
    written = []
    path = os.path.join(directory, "reformulation_ratio.png")
    plot_reformulation_histogram(report, path)
    written.append(path)
    for query in queries:
        slug = re.sub(r"[^A-Za-z0-9_.-]+", "_", query)
        path = os.path.join(directory, f"card_groups_{slug}.png")
        if plot_card_groups(report, query, path):
            written.append(path)
    return written
