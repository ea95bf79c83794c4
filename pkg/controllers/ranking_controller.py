"""
Ranking controller: log-derived card features, training-set assembly for the
three labeling scenarios, and ranked-list prediction.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Dict, FrozenSet, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from models.label_model import CardLabel, ListLabel, PairLabel, Scenario
from models.store import write_dataframe_tsv
from utils.errors import LeakageError, RankingError
from utils.gbt import Dataset
from utils.helpers import discount_vector, ratio, stable_bucket

logger = logging.getLogger(__name__)

MAX_CANDIDATES = 8
MAX_ENUMERATED_CANDIDATES = 6

QUERY_SLOTS = ("qc_ctr", "qc_view_rate", "qc_click_rate", "query_log_freq", "position_prior")


# ==================== FEATURE INDEX ====================

@dataclass(frozen=True)
class FeatureSchema:
    universe: Tuple[str, ...]

    @property
    def names(self):
        return (*QUERY_SLOTS, *(f"card={c}" for c in self.universe), "global_ctr")

    @property
    def width(self):
        return len(QUERY_SLOTS) + len(self.universe) + 1


@dataclass(frozen=True)
class _PairStats:
    shown: int = 0
    viewed: int = 0
    clicked: int = 0
    links: int = 0
    link_clicks: int = 0
    rank_sum: int = 0


@dataclass
class FeatureIndex:
    """
    Aggregated training statistics; immutable once built

    source_ids holds the qpv_ids the statistics were computed from.
    """

    schema: FeatureSchema
    smoothing: float
    pair_stats: Dict[Tuple[str, str], _PairStats] = field(default_factory=dict)
    query_counts: Dict[str, int] = field(default_factory=dict)
    card_links: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    source_ids: FrozenSet[str] = frozenset()

    @property
    def universe(self):
        return self.schema.universe

    def assert_disjoint(self, qpvs):
        """
        Raises:
            LeakageError: some evaluation QPV also fed the statistics
        """
        leaked = sorted(q.qpv_id for q in qpvs if q.qpv_id in self.source_ids)
        if leaked:
            raise LeakageError(f"{len(leaked)} evaluation QPVs were used to build the feature index "
                               f"(first: {leaked[0]!r})")


def build_feature_index(qpvs, universe=None, smoothing=1.0) -> FeatureIndex:
    """
    Aggregate per-(query, card), per-query and per-card statistics

    Args:
        qpvs: training QPVs only
        universe: every card type features may be asked for; defaults to the
            cards seen in qpvs
        smoothing: added to every rate denominator
    """
    if universe is None:
        universe = {card.card_type for qpv in qpvs for card in qpv.cards}
    universe = tuple(sorted(universe))
    schema = FeatureSchema(universe)

    rows = [
        (qpv.query, card.card_type, int(card.viewed), int(card.clicked), card.num_links,
         card.num_link_clicks, card.rank)
        for qpv in qpvs
        for card in qpv.cards
    ]
    pair_stats, card_links = {}, {}
    if rows:
        frame = pd.DataFrame(rows, columns=["query", "card_type", "viewed", "clicked", "links", "link_clicks",
                                            "rank"])
        missing = set(frame["card_type"]) - set(universe)
        if missing:
            raise RankingError(f"cards outside the feature universe: {sorted(missing)}")

        per_pair = frame.groupby(["query", "card_type"], sort=True).agg(
            shown=("rank", "size"), viewed=("viewed", "sum"), clicked=("clicked", "sum"),
            links=("links", "sum"), link_clicks=("link_clicks", "sum"), rank_sum=("rank", "sum"))
        pair_stats = {
            key: _PairStats(*(int(v) for v in row))
            for key, row in zip(per_pair.index, per_pair.itertuples(index=False))
        }
        per_card = frame.groupby("card_type", sort=True)[["links", "link_clicks"]].sum()
        card_links = {c: (int(row.links), int(row.link_clicks)) for c, row in per_card.iterrows()}

    query_counts = {}
    for qpv in qpvs:
        query_counts[qpv.query] = query_counts.get(qpv.query, 0) + 1

    index = FeatureIndex(schema, float(smoothing), pair_stats, query_counts, card_links,
                         frozenset(q.qpv_id for q in qpvs))
    logger.debug(f"📊 Feature index: {len(query_counts)} queries, {len(pair_stats)} (query, card) pairs")
    return index


def extract_features(index: FeatureIndex, query, card_type) -> np.ndarray:
    """
    Feature vector of one card for one query, in schema order

    Raises:
        RankingError: card_type outside the index universe
    """
    try:
        slot = index.universe.index(card_type)
    except ValueError:
        raise RankingError(f"unknown card type {card_type!r}") from None

    s = index.smoothing
    stats = index.pair_stats.get((query, card_type), _PairStats())
    links, link_clicks = index.card_links.get(card_type, (0, 0))

    vector = np.zeros(index.schema.width)
    vector[0] = ratio(stats.link_clicks, stats.links, s)
    vector[1] = ratio(stats.viewed, stats.shown, s)
    vector[2] = ratio(stats.clicked, stats.shown, s)
    vector[3] = math.log1p(index.query_counts.get(query, 0))
    vector[4] = ratio(stats.rank_sum, stats.shown)
    vector[len(QUERY_SLOTS) + slot] = 1.0
    vector[-1] = ratio(link_clicks, links, s)
    return vector


def list_features(index: FeatureIndex, query, ranking) -> np.ndarray:
    """Position-discounted sum of card vectors: sum_k v(c_k) / ln(1 + k)"""
    if not ranking:
        raise RankingError("cannot featurize an empty ranking")
    vectors = np.vstack([extract_features(index, query, c) for c in ranking])
    return discount_vector(len(ranking)) @ vectors


def feature_frame(index: FeatureIndex) -> pd.DataFrame:
    """Every indexed (query, card) pair with its feature vector"""
    keys = sorted(index.pair_stats)
    matrix = (np.vstack([extract_features(index, q, c) for q, c in keys])
              if keys else np.zeros((0, index.schema.width)))
    frame = pd.DataFrame(matrix, columns=list(index.schema.names))
    frame.insert(0, "card_type", [c for _, c in keys])
    frame.insert(0, "query", [q for q, _ in keys])
    return frame


def dump_features(path, index: FeatureIndex):
    write_dataframe_tsv(path, feature_frame(index))


# ==================== TRAINING SETS ====================

def _scenario_of(labels):
    kinds = {type(label) for label in labels}
    if len(kinds) > 1:
        raise RankingError("labels mix card, pair and list records")
    kind = kinds.pop()
    if kind is CardLabel:
        strategies = {label.strategy for label in labels}
        if len(strategies) > 1:
            raise RankingError(f"labels mix strategies: {sorted(s.value for s in strategies)}")
        return Scenario.POINTWISE
    return Scenario.PAIRWISE if kind is PairLabel else Scenario.LISTWISE


def build_training_set(labels: Sequence, index: FeatureIndex, scenario=None, collapse=False) -> Dataset:
    """
    Turn labels into a regression dataset

    pointwise: one row per CardLabel; pairwise: v(preferred) - v(other);
    listwise: discounted sum over the labeled ranking. Targets are the labels.

    Args:
        scenario: expected scenario; inferred from the labels when omitted
        collapse: merge duplicate feature rows
    """
    names = list(index.schema.names)
    if not labels:
        return Dataset(np.zeros((0, index.schema.width)), np.zeros(0), feature_names=names)

    found = _scenario_of(labels)
    if scenario is not None and Scenario(scenario) is not found:
        raise RankingError(f"expected {Scenario(scenario).value} labels, got {found.value}")

    cache = {}

    def vector(query, card_type):
        key = (query, card_type)
        if key not in cache:
            cache[key] = extract_features(index, query, card_type)
        return cache[key]

    if found is Scenario.POINTWISE:
        matrix = np.vstack([vector(l.query, l.card_type) for l in labels])
    elif found is Scenario.PAIRWISE:
        matrix = np.vstack([vector(l.query, l.preferred) - vector(l.query, l.other) for l in labels])
    else:
        discounts = {}
        rows = []
        for l in labels:
            k = len(l.ranking)
            if k not in discounts:
                discounts[k] = discount_vector(k)
            rows.append(discounts[k] @ np.vstack([vector(l.query, c) for c in l.ranking]))
        matrix = np.vstack(rows)

    data = Dataset(matrix, np.array([float(l.label) for l in labels]), feature_names=names)
    if collapse:
        data = data.collapse()
    logger.debug(f"📊 {found.value} training set: {data.num_rows} rows x {data.num_features} features")
    return data


def _label_cards(label):
    if isinstance(label, CardLabel):
        return (label.card_type,)
    if isinstance(label, PairLabel):
        return (label.preferred, label.other)
    return tuple(label.ranking)


def build_out_of_query_training_set(labels: Sequence, qpvs, universe=None, smoothing=1.0, num_groups=5, seed=0,
                                    scenario=None, collapse=False) -> Dataset:
    """
    Training set whose rows never see statistics of their own query

    Queries are hashed into num_groups groups. Labels of one group are
    featurized with an index built from the QPVs of the other groups, which
    is how a query outside the training log is featurized at prediction time.

    Args:
        qpvs: the QPVs the labels were derived from
        universe: card types features may be asked for; defaults to the cards
            in qpvs and labels
    """
    if num_groups < 2:
        raise RankingError(f"num_groups must be >= 2, got {num_groups}")
    if universe is None:
        universe = {card.card_type for qpv in qpvs for card in qpv.cards}
        universe.update(c for label in labels for c in _label_cards(label))
    universe = tuple(sorted(universe))
    if not labels:
        return build_training_set(labels, build_feature_index([], universe, smoothing), scenario)

    found = _scenario_of(labels)
    if scenario is not None and Scenario(scenario) is not found:
        raise RankingError(f"expected {Scenario(scenario).value} labels, got {found.value}")

    group_of = {}
    for query in sorted({l.query for l in labels} | {q.query for q in qpvs}):
        group_of[query] = stable_bucket(query, num_groups, seed)

    parts = []
    for group in range(num_groups):
        members = [l for l in labels if group_of[l.query] == group]
        if not members:
            continue
        index = build_feature_index([q for q in qpvs if group_of[q.query] != group], universe, smoothing)
        parts.append(build_training_set(members, index, found))

    data = Dataset(np.vstack([p.features for p in parts]), np.concatenate([p.targets for p in parts]),
                   feature_names=list(FeatureSchema(universe).names))
    if collapse:
        data = data.collapse()
    logger.debug(f"📊 Out-of-query {found.value} training set: {data.num_rows} rows from {len(parts)} groups")
    return data


# ==================== PREDICTION ====================

@dataclass(frozen=True)
class RankRequest:
    query: str
    candidate_cards: Tuple[str, ...]
    max_list_size: Optional[int] = None

    def __post_init__(self):
        cards = tuple(sorted(set(self.candidate_cards)))
        if not cards:
            raise RankingError("empty candidate set")
        if len(cards) > MAX_CANDIDATES:
            raise RankingError(f"at most {MAX_CANDIDATES} candidate cards, got {len(cards)}")
        object.__setattr__(self, "candidate_cards", cards)
        size = len(cards) if self.max_list_size is None else self.max_list_size
        if size < 1:
            raise RankingError(f"max_list_size must be >= 1, got {size}")
        object.__setattr__(self, "max_list_size", size)


@dataclass(frozen=True)
class PredictedRanking:
    query: str
    ranking: Tuple[str, ...]
    score: float

    def __post_init__(self):
        if len(set(self.ranking)) != len(self.ranking):
            raise RankingError(f"ranking repeats a card: {self.ranking}")

    def to_dict(self):
        return {"query": self.query, "ranking": list(self.ranking), "score": self.score}


def _card_matrix(index, query, cards):
    return np.vstack([extract_features(index, query, c) for c in cards])


def _list_matrix(index, query, lists):
    """list_features of many rankings, each card vector extracted once"""
    cards = sorted({c for ranking in lists for c in ranking})
    vectors = dict(zip(cards, _card_matrix(index, query, cards)))
    discounts = {}
    rows = []
    for ranking in lists:
        k = len(ranking)
        if k not in discounts:
            discounts[k] = discount_vector(k)
        rows.append(discounts[k] @ np.vstack([vectors[c] for c in ranking]))
    return np.vstack(rows)


def _pick_cards(query, cards, scores, max_list_size):
    order = sorted(range(len(cards)), key=lambda i: (-scores[i], cards[i]))[:max_list_size]
    total = float(discount_vector(len(order)) @ np.asarray(scores)[order])
    return PredictedRanking(query, tuple(cards[i] for i in order), total)


def _pick_list(query, lists, scores):
    best = min(range(len(lists)), key=lambda i: (-scores[i], lists[i]))
    return PredictedRanking(query, lists[best], float(scores[best]))


def rank_pointwise(model, index: FeatureIndex, request: RankRequest) -> PredictedRanking:
    """
    Sort candidates by model score, highest first; equal scores keep
    card_type order. The ranking score is the discounted sum of card scores.
    """
    cards = request.candidate_cards
    scores = model.predict(_card_matrix(index, request.query, cards))
    return _pick_cards(request.query, cards, scores, request.max_list_size)


def enumerate_candidate_lists(cards, max_list_size):
    """Every ordering of every non-empty subset up to max_list_size cards"""
    cards = sorted(cards)
    return [ranking for size in range(1, min(max_list_size, len(cards)) + 1)
            for ranking in permutations(cards, size)]


def admissible_lists(request: RankRequest, candidate_lists):
    """
    Candidate lists that fit the request: non-empty, no repeated card, only
    candidate cards and at most max_list_size long

    Raises:
        RankingError: no list fits
    """
    allowed = set(request.candidate_cards)
    lists, skipped = [], 0
    for ranking in candidate_lists:
        ranking = tuple(ranking)
        if (ranking and len(ranking) <= request.max_list_size and len(set(ranking)) == len(ranking)
                and set(ranking) <= allowed):
            lists.append(ranking)
        else:
            skipped += 1
    if skipped:
        logger.warning(f"⚠️ Skipped {skipped} candidate lists outside the cards or size of the request")
    if not lists:
        raise RankingError(f"no candidate list fits cards {list(request.candidate_cards)} "
                           f"with at most {request.max_list_size} entries")
    return lists


def rank_listwise(model, index: FeatureIndex, request: RankRequest, candidate_lists=None) -> PredictedRanking:
    """
    Score whole lists and return the best one; ties go to the
    lexicographically smallest card tuple

    Raises:
        RankingError: more than 6 candidates and no candidate_lists, or no
            candidate list fits the request
    """
    if candidate_lists is None:
        if len(request.candidate_cards) > MAX_ENUMERATED_CANDIDATES:
            raise RankingError(
                f"{len(request.candidate_cards)} candidates need candidate_lists: enumerating every "
                f"ordered subset grows as O(2^K) and is limited to K <= {MAX_ENUMERATED_CANDIDATES}")
        lists = enumerate_candidate_lists(request.candidate_cards, request.max_list_size)
    else:
        lists = admissible_lists(request, candidate_lists)

    scores = model.predict(_list_matrix(index, request.query, lists))
    return _pick_list(request.query, lists, scores)


def predict_qpv(model, index: FeatureIndex, qpv, scenario) -> PredictedRanking:
    """Prediction for a held-out QPV drawn from the cards it showed"""
    return predict_qpvs(model, index, [qpv], scenario)[qpv.qpv_id]


def predict_qpvs(model, index: FeatureIndex, qpvs, scenario) -> Dict[str, PredictedRanking]:
    """
    Predictions for held-out QPVs, keyed by qpv_id

    Each QPV is ranked from the cards it showed; listwise models choose among
    the full-length orderings of those cards. QPVs with the same query and
    card set share one prediction, and every candidate row is scored in a
    single model call.
    """
    listwise = Scenario(scenario) is Scenario.LISTWISE
    groups = {}
    for qpv in qpvs:
        request = RankRequest(qpv.query, qpv.ranking)
        groups.setdefault((request.query, request.candidate_cards), []).append(qpv.qpv_id)

    blocks, spans, start = [], [], 0
    for query, cards in groups:
        if listwise:
            candidates = list(permutations(cards))
            blocks.append(_list_matrix(index, query, candidates))
        else:
            candidates = cards
            blocks.append(_card_matrix(index, query, cards))
        spans.append((candidates, start, start + len(candidates)))
        start += len(candidates)

    if not blocks:
        return {}
    scores = model.predict(np.vstack(blocks))

    predictions = {}
    for (query, cards), (candidates, begin, end) in zip(groups, spans):
        if listwise:
            predicted = _pick_list(query, candidates, scores[begin:end])
        else:
            predicted = _pick_cards(query, cards, scores[begin:end], len(cards))
        for qpv_id in groups[(query, cards)]:
            predictions[qpv_id] = predicted
    logger.debug(f"📊 Predicted {len(predictions)} QPVs from {len(groups)} distinct (query, card set) pairs")
    return predictions


def read_candidate_lists(path):
    """One JSON array of card types per line"""
    lists = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                ranking = json.loads(line)
            except json.JSONDecodeError as e:
                raise RankingError(f"candidate lists line {line_number}: {e.msg}") from None
            if not isinstance(ranking, list) or not all(isinstance(c, str) for c in ranking):
                raise RankingError(f"candidate lists line {line_number}: expected an array of strings")
            lists.append(tuple(ranking))
    return lists
