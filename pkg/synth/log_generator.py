"""
Synthetic QPV logs with known latent relevance

Users see a page of cards, look at them with position-dependent probability,
click relevant link-bearing cards and reformulate with a probability that
falls as the page's discounted gain approaches the ideal page's. A
reformulation shows the same query again with a ranking one step closer to
ideal.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from tqdm import tqdm

from controllers.ranking_controller import PredictedRanking
from models.qpv_model import QPV, CardObservation
from models.store import atomic_write, read_jsonl, write_jsonl
from utils.errors import DataError, SynthConfigError
from utils.helpers import dcg, logistic

logger = logging.getLogger(__name__)

CARD_NAMES = (
    "NewsCard", "WeatherCard", "NavigationCard", "Q2ACard", "LocalCard", "ImageCard", "VideoCard",
    "ShoppingCard", "WikiCard", "SportsCard", "StockCard", "MovieCard", "MusicCard", "RecipeCard",
    "FlightCard", "DictionaryCard",
)
LINKLESS_CARDS = ("WeatherCard", "Q2ACard")
GRADES = ("Excellent", "Good", "Neutral", "Poor", "Very Poor")
GRADE_CUTS = (0.8, 0.6, 0.4, 0.2)
BASE_TIMESTAMP_MS = 1_700_000_000_000


@dataclass(frozen=True)
class WorldConfig:
    num_queries: int = 200
    num_card_types: int = 12
    num_sessions: int = 20000
    cards_per_page_distribution: Dict[int, float] = field(
        default_factory=lambda: {2: 0.695, 3: 0.291, 4: 0.014})
    pool_size: int = 6
    relevance_concentration: float = 4.0
    reformulation_steepness: float = 8.0
    satisfaction_threshold: float = 0.85
    position_bias: Tuple[float, ...] = (0.95, 0.7, 0.45, 0.3, 0.2, 0.15, 0.1, 0.08)
    click_scale: float = 0.8
    p_ideal: float = 0.3
    swap_in_probability: float = 0.5
    max_chain_length: int = 3
    zipf_exponent: float = 1.1
    seed: int = 0

    def __post_init__(self):
        dist = self.cards_per_page_distribution
        if not dist or any(k < 1 for k in dist):
            raise SynthConfigError("cards_per_page_distribution needs page sizes >= 1")
        if any(not 0 <= p <= 1 for p in dist.values()) or abs(sum(dist.values()) - 1.0) > 1e-9:
            raise SynthConfigError(f"page-size weights must be probabilities summing to 1, got {dist}")
        max_page = max(dist)
        if self.num_card_types < max_page:
            raise SynthConfigError(f"{self.num_card_types} card types cannot fill a {max_page}-card page")
        if not max_page <= self.pool_size <= self.num_card_types:
            raise SynthConfigError(f"pool_size must lie in [{max_page}, {self.num_card_types}], "
                                   f"got {self.pool_size}")
        if len(self.position_bias) < max_page:
            raise SynthConfigError(f"position_bias covers {len(self.position_bias)} ranks, pages have {max_page}")
        probabilities = (*self.position_bias, self.click_scale, self.p_ideal, self.swap_in_probability)
        if any(not 0 <= p <= 1 for p in probabilities):
            raise SynthConfigError("probabilities must lie in [0, 1]")
        if self.num_queries < 1 or self.num_sessions < 0 or self.max_chain_length < 1:
            raise SynthConfigError("num_queries and max_chain_length must be >= 1, num_sessions >= 0")
        if not self.relevance_concentration > 0 or not self.reformulation_steepness > 0:
            raise SynthConfigError("relevance_concentration and reformulation_steepness must be > 0")


@dataclass(frozen=True)
class GroundTruth:
    relevance: Dict[Tuple[str, str], float]
    ideal_ranking: Dict[str, Tuple[str, ...]]

    def relevance_of(self, query, card_type):
        return self.relevance.get((query, card_type), 0.0)

    def records(self):
        for query in sorted(self.ideal_ranking):
            ideal = self.ideal_ranking[query]
            yield {
                "query": query,
                "relevance": {c: self.relevance[(query, c)] for c in sorted(ideal)},
                "ideal_ranking": list(ideal),
            }


@dataclass
class World:
    config: WorldConfig
    card_types: Tuple[str, ...]
    queries: Tuple[str, ...]
    popularity: np.ndarray
    editorial_prior: Dict[str, float]
    truth: GroundTruth

    def pool(self, query):
        return self.truth.ideal_ranking[query]


def card_type_names(count):
    names = list(CARD_NAMES[:count])
    names.extend(f"Card{i:02d}" for i in range(len(names), count))
    return tuple(names)


def rank_by_relevance(relevance, cards):
    return tuple(sorted(cards, key=lambda c: (-relevance[c], c)))


def build_world(config: WorldConfig) -> World:
    """Latent relevance, query popularity and card pools from the world seed"""
    rng = np.random.default_rng([config.seed, 0])
    card_types = card_type_names(config.num_card_types)
    width = len(str(config.num_queries - 1))
    queries = tuple(f"query-{i:0{width}d}" for i in range(config.num_queries))

    card_mean = {c: float(rng.beta(2.0, 2.0)) for c in card_types}
    editorial_prior = {c: float(rng.uniform()) for c in card_types}

    ranks = np.arange(1, config.num_queries + 1, dtype=float)
    popularity = ranks ** -config.zipf_exponent
    popularity /= popularity.sum()

    relevance, ideal = {}, {}
    kappa = config.relevance_concentration
    for query in queries:
        pool = sorted(rng.choice(card_types, size=config.pool_size, replace=False).tolist())
        scores = {}
        for card in pool:
            mean = min(max(card_mean[card], 0.02), 0.98)
            scores[card] = float(rng.beta(mean * kappa, (1.0 - mean) * kappa))
            relevance[(query, card)] = scores[card]
        ideal[query] = rank_by_relevance(scores, pool)

    return World(config, card_types, queries, popularity, editorial_prior, GroundTruth(relevance, ideal))


# ==================== USER MODEL ====================

def page_quality(truth, query, ranking):
    """DCG of the shown page over the DCG of the ideal page of the same size"""
    gains = [truth.relevance_of(query, c) for c in ranking]
    best = dcg([truth.relevance_of(query, c) for c in truth.ideal_ranking[query][:len(ranking)]])
    if best <= 0:
        return 1.0
    return dcg(gains) / best


def reformulation_probability(quality, config):
    return float(logistic(-config.reformulation_steepness * (quality - config.satisfaction_threshold)))


def improve_ranking(truth, query, ranking, rng, config):
    """
    One adjacent transposition toward ideal, then possibly swap the weakest
    shown card for the best unshown pool card
    """
    ranking = list(ranking)
    rel = {c: truth.relevance_of(query, c) for c in truth.ideal_ranking[query]}
    for k in range(len(ranking) - 1):
        if (-rel[ranking[k]], ranking[k]) > (-rel[ranking[k + 1]], ranking[k + 1]):
            ranking[k], ranking[k + 1] = ranking[k + 1], ranking[k]
            break

    if rng.random() < config.swap_in_probability:
        unshown = [c for c in truth.ideal_ranking[query] if c not in ranking]
        if unshown:
            weakest = min(range(len(ranking)), key=lambda k: (rel[ranking[k]], ranking[k]))
            if rel[unshown[0]] > rel[ranking[weakest]]:
                ranking[weakest] = unshown[0]
    return tuple(ranking)


def _observe(world, query, ranking, rng):
    config = world.config
    cards = []
    for rank, card_type in enumerate(ranking, start=1):
        viewed = bool(rng.random() < config.position_bias[rank - 1])
        links = 0 if card_type in LINKLESS_CARDS else int(rng.integers(1, 4))
        clicked = bool(links and viewed and rng.random() < config.click_scale * world.truth.relevance_of(query, card_type))
        link_clicks = int(rng.integers(1, links + 1)) if clicked else 0
        cards.append(CardObservation(card_type, rank, viewed, clicked, links, link_clicks))
    return tuple(cards)


def generate_session(world: World, index: int) -> List[QPV]:
    """One session from its own seed sequence, so sessions are independent"""
    config = world.config
    rng = np.random.default_rng([config.seed, 1, index])
    width = max(6, len(str(config.num_sessions)))
    session_id = f"s{index:0{width}d}"

    query = world.queries[int(rng.choice(len(world.queries), p=world.popularity))]
    sizes = sorted(config.cards_per_page_distribution)
    size = sizes[int(rng.choice(len(sizes), p=[config.cards_per_page_distribution[s] for s in sizes]))]
    pool = world.pool(query)
    if rng.random() < config.p_ideal:
        ranking = pool[:size]
    else:
        ranking = tuple(pool[i] for i in rng.permutation(len(pool))[:size])

    qpvs = []
    for step in range(config.max_chain_length):
        cards = _observe(world, query, ranking, rng)
        chance = reformulation_probability(page_quality(world.truth, query, ranking), config)
        reformulated = bool(rng.random() < chance)
        qpvs.append(QPV(f"{session_id}-{step}", session_id, BASE_TIMESTAMP_MS + index * 60_000 + step * 5_000,
                        query, cards, reformulated))
        if not reformulated:
            break
        ranking = improve_ranking(world.truth, query, ranking, rng, config)
    return qpvs


def generate_log(config: WorldConfig, progress=False, world=None):
    """
    Args:
        world: a world already built from config, to share with judgments

    Returns:
        (list of QPV in canonical order, GroundTruth)
    """
    world = world or build_world(config)
    qpvs = []
    for index in tqdm(range(config.num_sessions), desc="sessions", unit="session", disable=not progress):
        qpvs.extend(generate_session(world, index))
    rate = sum(q.reformulated for q in qpvs) / len(qpvs) if qpvs else 0.0
    logger.info(f"✅ Generated {len(qpvs)} QPVs from {config.num_sessions} sessions "
                f"({rate:.1%} reformulated)")
    return qpvs, world.truth


def oracle_ranking(truth: GroundTruth, query, candidate_cards) -> PredictedRanking:
    """
    Candidates by true relevance, highest first, ties in card_type order

    Raises:
        DataError: query unknown to the truth
    """
    if query not in truth.ideal_ranking:
        raise DataError(f"query {query!r} is not in the ground truth")
    ranking = tuple(sorted(candidate_cards, key=lambda c: (-truth.relevance_of(query, c), c)))
    return PredictedRanking(query, ranking, dcg([truth.relevance_of(query, c) for c in ranking]))


# ==================== JUDGMENTS ====================

def grade_of(score):
    for grade, cut in zip(GRADES, GRADE_CUTS):
        if score >= cut:
            return grade
    return GRADES[-1]


def generate_judgments(world: World, num_queries=50, noise=0.15, editorial_weight=0.5):
    """
    Editorial grades for the most popular queries

    An editor's score mixes true relevance with a per-card editorial prior
    that ignores users, plus noise, then is cut into five grades.

    Returns:
        list of (query, card_type, grade)
    """
    rng = np.random.default_rng([world.config.seed, 2])
    top = np.argsort(-world.popularity, kind="mergesort")[:num_queries]
    judgments = []
    for i in sorted(int(i) for i in top):
        query = world.queries[i]
        for card in sorted(world.pool(query)):
            score = ((1.0 - editorial_weight) * world.truth.relevance_of(query, card)
                     + editorial_weight * world.editorial_prior[card]
                     + noise * float(rng.standard_normal()))
            judgments.append((query, card, grade_of(score)))
    return judgments


# ==================== FILES ====================

def write_truth(path, truth: GroundTruth):
    return write_jsonl(path, truth.records())


def read_truth(path) -> GroundTruth:
    relevance, ideal = {}, {}
    for record in read_jsonl(path):
        try:
            query = record["query"]
            for card, value in record["relevance"].items():
                relevance[(query, card)] = float(value)
            ideal[query] = tuple(record["ideal_ranking"])
        except (KeyError, AttributeError) as e:
            raise DataError(f"malformed truth record: {e}") from None
    return GroundTruth(relevance, ideal)


def write_judgments(path, judgments):
    with atomic_write(path) as handle:
        for query, card, grade in judgments:
            handle.write(f"{query}\t{card}\t{grade}\n")
