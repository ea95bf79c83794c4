"""
Query-page-view (QPV) log model

One QPV is a single rendering of a results page: the query, the ordered card
list with view/click observations and whether the user reformulated.
"""

import json
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Sequence, Tuple

from utils.errors import QpvParseError, QpvValidationError, SessionOrderError

logger = logging.getLogger(__name__)

QPV_FIELDS = ("qpv_id", "session_id", "timestamp_ms", "query", "reformulated", "cards")
CARD_FIELDS = ("card_type", "rank", "viewed", "clicked", "num_links", "num_link_clicks")


@dataclass(frozen=True)
class CardObservation:
    """One card on a page, with what the user did with it"""

    card_type: str
    rank: int
    viewed: bool
    clicked: bool
    num_links: int = 0
    num_link_clicks: int = 0

    def problems(self):
        """List of invariant violations, empty when the card is valid"""
        found = []
        if self.rank < 1:
            found.append(f"card {self.card_type!r} has rank {self.rank} < 1")
        if self.num_links < 0 or self.num_link_clicks < 0:
            found.append(f"card {self.card_type!r} has negative link counts")
        if self.num_link_clicks > self.num_links:
            found.append(f"card {self.card_type!r} has more link clicks than links")
        if self.clicked and not self.viewed:
            found.append(f"card {self.card_type!r} clicked but not viewed")
        if self.clicked and self.num_links > 0 and self.num_link_clicks < 1:
            found.append(f"card {self.card_type!r} clicked without a link click")
        return found

    def to_dict(self):
        return {
            "card_type": self.card_type,
            "rank": self.rank,
            "viewed": self.viewed,
            "clicked": self.clicked,
            "num_links": self.num_links,
            "num_link_clicks": self.num_link_clicks,
        }


@dataclass(frozen=True)
class QPV:
    """One query-page-view event; cards are kept in rank order"""

    qpv_id: str
    session_id: str
    timestamp_ms: int
    query: str
    cards: Tuple[CardObservation, ...]
    reformulated: bool

    def __post_init__(self):
        object.__setattr__(self, "cards", tuple(sorted(self.cards, key=lambda c: c.rank)))

    @property
    def label(self):
        """QPV outcome: -1 when reformulated, +1 otherwise"""
        return -1 if self.reformulated else 1

    @property
    def ranking(self):
        """Card types in rank order"""
        return tuple(card.card_type for card in self.cards)

    @property
    def card_set(self):
        return frozenset(self.ranking)

    def rank_of(self, card_type):
        for card in self.cards:
            if card.card_type == card_type:
                return card.rank
        raise KeyError(card_type)

    def validate(self, line_number=None):
        """Raise QpvValidationError when an invariant does not hold"""
        if not self.cards:
            raise QpvValidationError(self.qpv_id, "empty card list", line_number)
        ranks = [card.rank for card in self.cards]
        if len(set(ranks)) != len(ranks):
            raise QpvValidationError(self.qpv_id, f"duplicate rank in {ranks}", line_number)
        if ranks != list(range(1, len(ranks) + 1)):
            raise QpvValidationError(self.qpv_id, f"ranks {ranks} are not 1..{len(ranks)}", line_number)
        types = self.ranking
        if len(set(types)) != len(types):
            raise QpvValidationError(self.qpv_id, f"duplicate card_type in {list(types)}", line_number)
        for card in self.cards:
            problems = card.problems()
            if problems:
                raise QpvValidationError(self.qpv_id, "; ".join(problems), line_number)
        return self

    def to_dict(self):
        return {
            "qpv_id": self.qpv_id,
            "session_id": self.session_id,
            "timestamp_ms": self.timestamp_ms,
            "query": self.query,
            "reformulated": self.reformulated,
            "cards": [card.to_dict() for card in self.cards],
        }


@dataclass(frozen=True)
class ReformulationPair:
    """Last reformulated QPV of a chain and the satisfying QPV right after it"""

    prior: QPV
    successor: QPV


# ==================== PARSING ====================

def _require(record, field, kind, line_number):
    if field not in record:
        raise QpvParseError(line_number, f"missing required field {field!r}")
    value = record[field]
    if kind is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, kind)
    if not ok:
        raise QpvParseError(line_number, f"field {field!r} must be {kind.__name__}, got {type(value).__name__}")
    return value


def qpv_from_dict(record, line_number=None):
    """Build and validate a QPV from one decoded log record"""
    if not isinstance(record, dict):
        raise QpvParseError(line_number, "record is not a JSON object")
    qpv_id = _require(record, "qpv_id", str, line_number)
    session_id = _require(record, "session_id", str, line_number)
    timestamp_ms = _require(record, "timestamp_ms", int, line_number)
    query = _require(record, "query", str, line_number)
    reformulated = _require(record, "reformulated", bool, line_number)
    raw_cards = _require(record, "cards", list, line_number)

    cards = []
    for raw in raw_cards:
        if not isinstance(raw, dict):
            raise QpvParseError(line_number, "card entry is not a JSON object")
        cards.append(CardObservation(
            card_type=_require(raw, "card_type", str, line_number),
            rank=_require(raw, "rank", int, line_number),
            viewed=_require(raw, "viewed", bool, line_number),
            clicked=_require(raw, "clicked", bool, line_number),
            num_links=_require(raw, "num_links", int, line_number),
            num_link_clicks=_require(raw, "num_link_clicks", int, line_number),
        ))
    qpv = QPV(qpv_id, session_id, timestamp_ms, query, tuple(cards), reformulated)
    return qpv.validate(line_number)


def iter_qpv_log(stream: Iterable) -> Iterator[QPV]:
    """
    Parse line-delimited JSON QPV records lazily

    Args:
        stream: iterable of lines, bytes (binary file) or str (text file),
            or a whole payload as one bytes or str object

    Yields:
        QPV in input order
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = bytes(stream).split(b"\n")
    elif isinstance(stream, str):
        stream = stream.split("\n")
    for line_number, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise QpvParseError(line_number, f"not UTF-8: {e}") from e
        line = raw.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise QpvParseError(line_number, f"invalid JSON: {e.msg}") from e
        yield qpv_from_dict(record, line_number)


def parse_qpv_log(stream: Iterable) -> List[QPV]:
    """Parse a whole QPV log into a list"""
    return list(iter_qpv_log(stream))


def serialize_qpv(qpv):
    """One log line, without the trailing newline"""
    return json.dumps(qpv.to_dict(), ensure_ascii=False, separators=(",", ":"))


def serialize_qpv_log(qpvs: Iterable[QPV]) -> bytes:
    return "".join(serialize_qpv(qpv) + "\n" for qpv in qpvs).encode("utf-8")


def read_qpv_log(path):
    with open(path, "rb") as handle:
        qpvs = parse_qpv_log(handle)
    logger.info(f"📊 Loaded {len(qpvs)} QPVs from {path}")
    return qpvs


# ==================== SESSIONS ====================

def canonical_order(qpvs: Iterable[QPV]) -> List[QPV]:
    """QPVs sorted by (session_id, timestamp_ms, qpv_id)"""
    return sorted(qpvs, key=lambda q: (q.session_id, q.timestamp_ms, q.qpv_id))


def group_sessions(qpvs: Iterable[QPV]):
    """
    Group QPVs into time-ordered sessions

    Returns:
        dict: session_id -> list of QPV sorted by timestamp

    Raises:
        SessionOrderError: two QPVs of one session share a timestamp
    """
    sessions = defaultdict(list)
    for qpv in qpvs:
        sessions[qpv.session_id].append(qpv)
    for session_id, members in sessions.items():
        members.sort(key=lambda q: q.timestamp_ms)
        for earlier, later in zip(members, members[1:]):
            if earlier.timestamp_ms == later.timestamp_ms:
                raise SessionOrderError(
                    f"session {session_id!r}: {earlier.qpv_id!r} and {later.qpv_id!r} "
                    f"share timestamp {earlier.timestamp_ms}"
                )
    return dict(sorted(sessions.items()))


def chain_sessions(qpvs: Sequence[QPV]) -> List[ReformulationPair]:
    """
    Pair every reformulated QPV with the satisfying QPV right after it

    Only the terminal (reformulated, satisfied) adjacency of a chain yields a
    pair; earlier reformulations in the same chain and abandoned sessions
    produce nothing.
    """
    pairs = []
    for members in group_sessions(qpvs).values():
        for prior, successor in zip(members, members[1:]):
            if prior.reformulated and not successor.reformulated:
                pairs.append(ReformulationPair(prior, successor))
    return pairs


def abandoned_qpvs(qpvs: Sequence[QPV]) -> List[QPV]:
    """Final QPV of every session that ends reformulated"""
    return [members[-1] for members in group_sessions(qpvs).values() if members[-1].reformulated]


def card_universe(qpvs: Iterable[QPV]):
    """Sorted tuple of every card type seen in the log"""
    return tuple(sorted({card.card_type for qpv in qpvs for card in qpv.cards}))
