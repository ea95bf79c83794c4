"""
Descriptive statistics of a QPV log: reformulation ratios per query, page
sizes and positive/negative splits per page size and per card group.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np
import pandas as pd

from utils.errors import DataError

logger = logging.getLogger(__name__)

RATIO_BUCKETS = 10


@dataclass
class StatsReport:
    num_qpvs: int
    num_distinct_queries: int
    num_card_types: int
    reformulation_ratio_histogram: Dict[float, int]
    cards_per_qpv_distribution: Dict[int, float]
    label_split_per_card_count: Dict[int, Tuple[float, float]]
    card_group_label_split: Dict[Tuple[str, Tuple[str, ...]], Tuple[float, float]]
    cards_per_query_distribution: Dict[int, float] = field(default_factory=dict)

    def to_dict(self):
        """JSON-friendly form; card groups become records"""
        return {
            "num_qpvs": self.num_qpvs,
            "num_distinct_queries": self.num_distinct_queries,
            "num_card_types": self.num_card_types,
            "reformulation_ratio_histogram": {f"{k:.1f}": v for k, v in self.reformulation_ratio_histogram.items()},
            "cards_per_qpv_distribution": {str(k): v for k, v in self.cards_per_qpv_distribution.items()},
            "cards_per_query_distribution": {str(k): v for k, v in self.cards_per_query_distribution.items()},
            "label_split_per_card_count": {
                str(k): {"positive": pos, "negative": neg}
                for k, (pos, neg) in self.label_split_per_card_count.items()
            },
            "card_group_label_split": [
                {"query": query, "ranking": list(group), "positive": pos, "negative": neg}
                for (query, group), (pos, neg) in self.card_group_label_split.items()
            ],
        }


def _qpv_frame(qpvs):
    return pd.DataFrame({
        "query": [q.query for q in qpvs],
        "num_cards": [len(q.cards) for q in qpvs],
        "ranking": [q.ranking for q in qpvs],
        "reformulated": [q.reformulated for q in qpvs],
    })


def ratio_bucket(ratio, num_buckets=RATIO_BUCKETS):
    """Lower edge of the ratio bucket, e.g. 0.3 for 3 reformulated out of 10"""
    index = int(np.floor(ratio * num_buckets + 1e-9))
    return round(index / num_buckets, 6)


def _split(frame, keys):
    """Positive/negative percentage per group, sorted by group key"""
    grouped = frame.groupby(keys, sort=True)["reformulated"].agg(["sum", "count"])
    result = {}
    for key, row in grouped.iterrows():
        negative = 100.0 * row["sum"] / row["count"]
        result[key] = (100.0 - negative, negative)
    return result


def compute_stats(qpvs: Sequence) -> StatsReport:
    """
    Summarize a QPV log

    Raises:
        DataError: empty input
    """
    if not qpvs:
        raise DataError("cannot compute statistics of an empty log")

    frame = _qpv_frame(qpvs)
    num_qpvs = len(frame)

    per_query = frame.groupby("query", sort=True)["reformulated"].mean()
    histogram = per_query.map(ratio_bucket).value_counts().sort_index()

    per_qpv = frame["num_cards"].value_counts().sort_index()
    cards_per_qpv = {int(k): 100.0 * v / num_qpvs for k, v in per_qpv.items()}

    # most frequent page size of each query, ties to the smaller size
    modal = (frame.groupby(["query", "num_cards"]).size().reset_index(name="n")
             .sort_values(["query", "n", "num_cards"], ascending=[True, False, True])
             .drop_duplicates("query"))
    per_query_sizes = modal["num_cards"].value_counts().sort_index()
    cards_per_query = {int(k): 100.0 * v / len(modal) for k, v in per_query_sizes.items()}

    groups = {f"{q.query}\x1f{'>'.join(q.ranking)}": (q.query, q.ranking) for q in qpvs}
    frame["group"] = [f"{q}\x1f{'>'.join(r)}" for q, r in zip(frame["query"], frame["ranking"])]
    report = StatsReport(
        num_qpvs=num_qpvs,
        num_distinct_queries=int(per_query.size),
        num_card_types=len({card.card_type for q in qpvs for card in q.cards}),
        reformulation_ratio_histogram={float(k): int(v) for k, v in histogram.items()},
        cards_per_qpv_distribution=cards_per_qpv,
        label_split_per_card_count={int(k): v for k, v in _split(frame, "num_cards").items()},
        card_group_label_split={groups[k]: v for k, v in _split(frame, "group").items()},
        cards_per_query_distribution=cards_per_query,
    )
    logger.info(f"📊 Stats: {report.num_qpvs} QPVs, {report.num_distinct_queries} queries, "
                f"{report.num_card_types} card types")
    return report
