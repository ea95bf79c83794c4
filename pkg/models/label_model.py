"""
Training-label records derived from QPV logs, plus their line-delimited JSON files
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

from models.store import read_jsonl, write_jsonl
from utils.errors import LabelError

logger = logging.getLogger(__name__)


class Strategy(str, Enum):
    """Labeling strategies, named by their lowercase abbreviations"""

    NPL = "npl"
    DPL = "dpl"
    MPL = "mpl"
    APL = "apl"
    LL = "ll"
    LTL = "ltl"
    CTR = "ctr"
    HUMAN = "human"

    @classmethod
    def parse(cls, name):
        try:
            return cls(str(name).lower())
        except ValueError:
            choices = ", ".join(s.value for s in cls)
            raise LabelError(f"unknown strategy {name!r} (choose from {choices})") from None

    @property
    def scenario(self):
        """Which training scenario consumes this strategy's labels"""
        if self is Strategy.LL:
            return Scenario.LISTWISE
        return Scenario.POINTWISE


class Scenario(str, Enum):
    POINTWISE = "pointwise"
    PAIRWISE = "pairwise"
    LISTWISE = "listwise"


@dataclass(frozen=True)
class CardLabel:
    """Label for one (QPV, card); qpv_id is empty for query-level labels"""

    qpv_id: str
    query: str
    card_type: str
    label: float
    strategy: Strategy
    cold: bool = False

    def to_dict(self):
        record = {
            "qpv_id": self.qpv_id,
            "query": self.query,
            "card_type": self.card_type,
            "label": self.label,
            "strategy": self.strategy.value,
        }
        if self.cold:
            record["cold"] = True
        return record


@dataclass(frozen=True)
class PairLabel:
    """Preference of `preferred` (ranked higher in the QPV) over `other`"""

    qpv_id: str
    query: str
    preferred: str
    other: str
    label: int

    def to_dict(self):
        return {
            "qpv_id": self.qpv_id,
            "query": self.query,
            "preferred": self.preferred,
            "other": self.other,
            "label": self.label,
            "strategy": "pairwise",
        }


@dataclass(frozen=True)
class ListLabel:
    """Label for a whole observed ranking"""

    qpv_id: str
    query: str
    ranking: Tuple[str, ...]
    label: int

    def to_dict(self):
        return {
            "qpv_id": self.qpv_id,
            "query": self.query,
            "ranking": list(self.ranking),
            "label": self.label,
            "strategy": Strategy.LL.value,
        }


@dataclass(frozen=True)
class MovementConfig:
    """Default labels for cards that appear (d_plus) or disappear (d_minus)"""

    d_plus: float = 1.0
    d_minus: float = -1.0

    def __post_init__(self):
        if not self.d_plus > 0:
            raise LabelError(f"d_plus must be > 0, got {self.d_plus}")
        if not self.d_minus < 0:
            raise LabelError(f"d_minus must be < 0, got {self.d_minus}")


# ==================== LABEL FILES ====================

def label_from_dict(record):
    """Rebuild a CardLabel, PairLabel or ListLabel from its JSON record"""
    try:
        if "ranking" in record:
            return ListLabel(record["qpv_id"], record["query"], tuple(record["ranking"]), int(record["label"]))
        if "preferred" in record:
            return PairLabel(record["qpv_id"], record["query"], record["preferred"], record["other"],
                             int(record["label"]))
        return CardLabel(record["qpv_id"], record["query"], record["card_type"], float(record["label"]),
                         Strategy.parse(record["strategy"]), bool(record.get("cold", False)))
    except KeyError as e:
        raise LabelError(f"label record missing field {e.args[0]!r}") from None


def write_labels(path, labels):
    count = write_jsonl(path, (label.to_dict() for label in labels))
    logger.info(f"✅ Wrote {count} labels to {path}")
    return count


def read_labels(path):
    return [label_from_dict(record) for record in read_jsonl(path)]
