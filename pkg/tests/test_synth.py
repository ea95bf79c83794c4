import numpy as np
import pytest

from models.qpv_model import group_sessions, parse_qpv_log, serialize_qpv_log
from synth.log_generator import (
    GRADES,
    LINKLESS_CARDS,
    GroundTruth,
    WorldConfig,
    build_world,
    generate_judgments,
    generate_log,
    improve_ranking,
    oracle_ranking,
    page_quality,
    read_truth,
    reformulation_probability,
    write_truth,
)
from utils.errors import DataError, SynthConfigError


def _first_pages(qpvs):
    return [q for q in qpvs if q.qpv_id.endswith("-0")]


# ==================== CONFIG ====================

def test_infeasible_configs():
    with pytest.raises(SynthConfigError):
        WorldConfig(num_card_types=3, pool_size=3)
    with pytest.raises(SynthConfigError):
        WorldConfig(cards_per_page_distribution={2: 0.5, 3: 0.4})
    with pytest.raises(SynthConfigError):
        WorldConfig(p_ideal=1.5)
    with pytest.raises(SynthConfigError):
        WorldConfig(reformulation_steepness=0.0)


# ==================== GENERATION ====================

def test_same_seed_gives_identical_bytes(small_world_config):
    first, _ = generate_log(small_world_config)
    second, _ = generate_log(small_world_config)
    assert serialize_qpv_log(first) == serialize_qpv_log(second)

    other, _ = generate_log(WorldConfig(num_queries=20, num_card_types=8, num_sessions=1500, pool_size=5, seed=12))
    assert serialize_qpv_log(other) != serialize_qpv_log(first)


def test_generated_logs_are_valid(small_log, small_world_config):
    qpvs, truth = small_log
    assert parse_qpv_log(serialize_qpv_log(qpvs)) == qpvs
    for qpv in qpvs:
        qpv.validate()
        assert qpv.card_set <= set(truth.ideal_ranking[qpv.query])
        for card in qpv.cards:
            if card.card_type in LINKLESS_CARDS:
                assert card.num_links == 0 and not card.clicked

    for members in group_sessions(qpvs).values():
        assert len(members) <= small_world_config.max_chain_length
        assert len({q.query for q in members}) == 1
        assert all(q.reformulated for q in members[:-1])


def test_page_sizes_follow_the_distribution(small_log):
    qpvs, _ = small_log
    sizes = np.array([len(q.cards) for q in _first_pages(qpvs)])
    assert set(sizes.tolist()) <= {2, 3, 4}
    assert np.mean(sizes == 2) == pytest.approx(0.695, abs=0.05)


def test_no_reformulations_when_users_are_always_satisfied():
    config = WorldConfig(num_queries=10, num_card_types=8, num_sessions=500, pool_size=5,
                         reformulation_steepness=1e9, p_ideal=1.0, seed=3)
    qpvs, _ = generate_log(config)
    assert len(qpvs) == 500
    assert not any(q.reformulated for q in qpvs)


def test_reformulation_rate_matches_an_independent_estimate():
    config = WorldConfig(num_queries=50, num_card_types=10, num_sessions=20000, seed=21)
    world = build_world(config)
    qpvs, truth = generate_log(config, world=world)
    first = _first_pages(qpvs)
    observed = np.mean([q.reformulated for q in first])

    rng = np.random.default_rng(987654)
    sizes = sorted(config.cards_per_page_distribution)
    size_p = [config.cards_per_page_distribution[s] for s in sizes]
    chances = []
    for _ in range(20000):
        query = world.queries[rng.choice(len(world.queries), p=world.popularity)]
        size = sizes[rng.choice(len(sizes), p=size_p)]
        pool = truth.ideal_ranking[query]
        ranking = pool[:size] if rng.random() < config.p_ideal else tuple(rng.permutation(pool)[:size])
        gains = np.array([truth.relevance_of(query, c) for c in ranking])
        ideal = np.array([truth.relevance_of(query, c) for c in pool[:size]])
        discounts = 1.0 / np.log(np.arange(2, size + 2))
        quality = gains @ discounts / (ideal @ discounts)
        chances.append(1.0 / (1.0 + np.exp(config.reformulation_steepness * (quality - config.satisfaction_threshold))))

    assert observed == pytest.approx(np.mean(chances), abs=0.02)


def test_better_pages_are_reformulated_less(small_log):
    qpvs, truth = small_log
    quality = np.array([page_quality(truth, q.query, q.ranking) for q in qpvs])
    reformulated = np.array([q.reformulated for q in qpvs])
    low, high = reformulated[quality < 0.8], reformulated[quality >= 0.95]
    assert low.size > 50 and high.size > 50
    assert low.mean() > high.mean()


def test_successor_pages_are_not_worse(small_world_config):
    world = build_world(small_world_config)
    rng = np.random.default_rng(4)
    for query in world.queries:
        pool = world.pool(query)
        ranking = tuple(pool[i] for i in rng.permutation(len(pool))[:3])
        improved = improve_ranking(world.truth, query, ranking, rng, small_world_config)
        assert len(improved) == len(ranking)
        assert page_quality(world.truth, query, improved) >= page_quality(world.truth, query, ranking) - 1e-12


def test_reformulation_probability_falls_with_quality():
    config = WorldConfig()
    assert reformulation_probability(0.5, config) > reformulation_probability(0.85, config) == 0.5
    assert reformulation_probability(0.85, config) > reformulation_probability(1.0, config)


# ==================== ORACLE & TRUTH ====================

def test_oracle_ranking_orders_by_relevance():
    truth = GroundTruth({("w", "A"): 0.9, ("w", "B"): 0.1, ("v", "A"): 0.5, ("v", "B"): 0.5},
                       {"w": ("A", "B"), "v": ("A", "B")})
    assert oracle_ranking(truth, "w", ("B", "A")).ranking == ("A", "B")
    assert oracle_ranking(truth, "v", ("B", "A")).ranking == ("A", "B")
    with pytest.raises(DataError):
        oracle_ranking(truth, "unknown", ("A",))


def test_ideal_rankings_sort_relevance(small_log):
    _, truth = small_log
    for query, ideal in truth.ideal_ranking.items():
        keys = [(-truth.relevance_of(query, c), c) for c in ideal]
        assert keys == sorted(keys)


def test_truth_file_round_trip(small_log, tmp_path):
    _, truth = small_log
    path = tmp_path / "truth.jsonl"
    write_truth(path, truth)
    assert read_truth(path) == truth


# ==================== JUDGMENTS ====================

def test_judgments_cover_popular_queries(small_world_config):
    world = build_world(small_world_config)
    judgments = generate_judgments(world, num_queries=5)
    assert judgments == generate_judgments(world, num_queries=5)
    assert {q for q, _, _ in judgments} == set(world.queries[:5])
    assert len(judgments) == 5 * small_world_config.pool_size
    assert {g for _, _, g in judgments} <= set(GRADES)
