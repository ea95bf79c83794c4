import logging
import math
from itertools import permutations

import numpy as np
import pytest

from controllers.ranking_controller import (
    QUERY_SLOTS,
    RankRequest,
    admissible_lists,
    build_feature_index,
    build_out_of_query_training_set,
    build_training_set,
    dump_features,
    enumerate_candidate_lists,
    extract_features,
    list_features,
    predict_qpv,
    predict_qpvs,
    rank_listwise,
    rank_pointwise,
    read_candidate_lists,
)
from models.label_model import CardLabel, ListLabel, PairLabel, Scenario, Strategy
from utils.errors import LeakageError, RankingError
from utils.helpers import stable_bucket

from conftest import make_qpv


class LinearModel:
    """Scores rows as a dot product; stands in for a trained ensemble"""

    def __init__(self, weights, transform=None):
        self.weights = np.asarray(weights, dtype=float)
        self.transform = transform or (lambda s: s)

    def predict(self, x):
        return self.transform(np.atleast_2d(x) @ self.weights)


def _card_scores(index, scores):
    """Weights that give each card the requested score through its one-hot slot"""
    weights = np.zeros(index.schema.width)
    for card, score in scores.items():
        weights[len(QUERY_SLOTS) + index.universe.index(card)] = score
    return LinearModel(weights)


@pytest.fixture
def index():
    qpvs = [
        make_qpv("a", "s1", 1, "apple", ["A", "B", "C"], True, viewed=[True, True, False],
                 clicked=[True, False, False], links=[2, 1, 0], link_clicks=[1, 0, 0]),
        make_qpv("b", "s1", 2, "apple", ["B", "A"], False),
        make_qpv("c", "s2", 1, "pear", ["C", "D"], False, links=[4, 0]),
    ]
    return build_feature_index(qpvs)


# ==================== FEATURES ====================

def test_width_covers_every_card(small_log):
    qpvs, _ = small_log
    index = build_feature_index(qpvs)
    for card in index.universe:
        vector = extract_features(index, qpvs[0].query, card)
        assert vector.shape == (6 + len(index.universe),)
    assert len(index.schema.names) == index.schema.width


def test_view_rate_without_smoothing():
    qpvs = [make_qpv(f"q{i}", f"s{i}", i, "w", ["A"], False, viewed=[i < 8]) for i in range(10)]
    index = build_feature_index(qpvs, smoothing=0.0)
    vector = extract_features(index, "w", "A")
    assert vector[1] == 0.8
    assert vector[3] == pytest.approx(math.log(11))
    assert vector[4] == 1.0


def test_pair_statistics_match_a_direct_count(index):
    vector = extract_features(index, "apple", "A")
    assert vector[0] == pytest.approx(1 / (2 + 1))
    assert vector[1] == pytest.approx(2 / (2 + 1))
    assert vector[2] == pytest.approx(1 / (2 + 1))
    assert vector[4] == pytest.approx((1 + 2) / 2)
    assert vector[-1] == pytest.approx(1 / (2 + 1))
    assert extract_features(index, "pear", "C")[-1] == 0.0


def test_unseen_query_gets_zero_query_slots(index):
    vector = extract_features(index, "banana", "B")
    assert np.all(vector[:len(QUERY_SLOTS)] == 0)
    assert vector[len(QUERY_SLOTS) + index.universe.index("B")] == 1.0
    assert np.array_equal(vector, extract_features(index, "banana", "B"))


def test_empty_log_index():
    index = build_feature_index([], universe=("A", "B"))
    vector = extract_features(index, "w", "A")
    assert vector.tolist() == [0, 0, 0, 0, 0, 1, 0, 0]


def test_unknown_card(index):
    with pytest.raises(RankingError):
        extract_features(index, "apple", "Z")
    with pytest.raises(RankingError):
        build_feature_index([make_qpv("a", "s", 1, "w", ["Z"], False)], universe=("A",))


def test_leakage_guard(index):
    held_out = [make_qpv("z", "s9", 1, "apple", ["A"], False)]
    index.assert_disjoint(held_out)
    with pytest.raises(LeakageError):
        index.assert_disjoint(held_out + [make_qpv("b", "s1", 2, "apple", ["B", "A"], False)])


def test_feature_dump_has_schema_header(index, tmp_path):
    path = tmp_path / "features.tsv"
    dump_features(path, index)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].split("\t")[:3] == ["query", "card_type", "qc_ctr"]
    assert len(lines) == 1 + 5


# ==================== TRAINING SETS ====================

def test_pointwise_rows_carry_labels(index):
    labels = [CardLabel("a", "apple", c, v, Strategy.DPL) for c, v in (("A", -1.4), ("B", -0.9), ("C", -0.7))]
    data = build_training_set(labels, index, Scenario.POINTWISE)
    assert data.num_rows == 3
    assert data.targets.tolist() == [-1.4, -0.9, -0.7]


def test_pairwise_rows_are_antisymmetric(index):
    forward = build_training_set([PairLabel("a", "apple", "A", "B", 1)], index)
    backward = build_training_set([PairLabel("a", "apple", "B", "A", 1)], index)
    assert np.array_equal(forward.features[0], -backward.features[0])


def test_listwise_row_is_discounted_sum(index):
    ranking = ("A", "B", "C", "D")
    data = build_training_set([ListLabel("a", "apple", ranking, -1)], index, Scenario.LISTWISE)
    expected = sum(extract_features(index, "apple", c) / math.log(1 + k) for k, c in enumerate(ranking, start=1))
    np.testing.assert_allclose(data.features[0], expected, rtol=1e-12)
    np.testing.assert_allclose(list_features(index, "apple", ranking), expected, rtol=1e-12)


def test_training_set_rejects_mixed_labels(index):
    with pytest.raises(RankingError):
        build_training_set([CardLabel("a", "apple", "A", 1.0, Strategy.NPL),
                            CardLabel("a", "apple", "B", 1.0, Strategy.DPL)], index)
    with pytest.raises(RankingError):
        build_training_set([CardLabel("a", "apple", "A", 1.0, Strategy.NPL),
                            ListLabel("a", "apple", ("A",), 1)], index)
    with pytest.raises(RankingError):
        build_training_set([ListLabel("a", "apple", ("A",), 1)], index, Scenario.POINTWISE)


def _spread_log():
    qpvs = []
    for i in range(24):
        query = f"query-{i % 8}"
        cards = ["A", "B", "C"] if i % 2 else ["C", "D"]
        qpvs.append(make_qpv(f"q{i}", f"s{i}", i, query, cards, i % 3 == 0,
                             clicked=[i % 4 == 1] + [False] * (len(cards) - 1), links=[2] * len(cards),
                             link_clicks=[i % 2] * len(cards)))
    return qpvs


def test_out_of_query_rows_use_only_other_groups():
    qpvs = _spread_log()
    universe = ("A", "B", "C", "D")
    labels = [CardLabel(q.qpv_id, q.query, q.ranking[0], float(k), Strategy.NPL) for k, q in enumerate(qpvs)]
    data = build_out_of_query_training_set(labels, qpvs, universe, num_groups=3, seed=7)

    group = {label.query: stable_bucket(label.query, 3, 7) for label in labels}
    ordered = sorted(labels, key=lambda label: group[label.query])
    expected = [
        extract_features(build_feature_index([q for q in qpvs if group[q.query] != group[label.query]], universe),
                         label.query, label.card_type)
        for label in ordered
    ]
    np.testing.assert_allclose(data.features, np.vstack(expected), rtol=1e-12)
    assert data.targets.tolist() == [label.label for label in ordered]
    assert np.all(data.features[:, :len(QUERY_SLOTS)] == 0)
    assert list(data.feature_names) == list(build_feature_index(qpvs, universe).schema.names)


def test_out_of_query_listwise_rows_and_bounds():
    qpvs = _spread_log()
    labels = [ListLabel(q.qpv_id, q.query, q.ranking, -1 if q.reformulated else 1) for q in qpvs]
    data = build_out_of_query_training_set(labels, qpvs, num_groups=2, collapse=True)
    assert 0 < data.num_rows <= len(labels)
    assert data.counts.sum() == len(labels)
    assert np.all(data.features[:, :len(QUERY_SLOTS)] == 0)

    assert build_out_of_query_training_set([], qpvs, num_groups=2).num_rows == 0
    with pytest.raises(RankingError, match="num_groups"):
        build_out_of_query_training_set(labels, qpvs, num_groups=1)
    with pytest.raises(RankingError):
        build_out_of_query_training_set(labels, qpvs, num_groups=2, scenario=Scenario.POINTWISE)


# ==================== POINTWISE RANKING ====================

def test_rank_pointwise_sorts_by_score(index):
    model = _card_scores(index, {"A": 0.9, "B": 0.2, "C": 0.5})
    predicted = rank_pointwise(model, index, RankRequest("apple", ("B", "C", "A")))
    assert predicted.ranking == ("A", "C", "B")
    assert predicted.score == pytest.approx(0.9 / math.log(2) + 0.5 / math.log(3) + 0.2 / math.log(4))


def test_rank_pointwise_ties_and_truncation(index):
    model = _card_scores(index, {"A": 0.5, "B": 0.5, "C": 0.1})
    assert rank_pointwise(model, index, RankRequest("apple", ("C", "B", "A"), max_list_size=2)).ranking == ("A", "B")
    assert rank_pointwise(model, index, RankRequest("apple", ("C",))).ranking == ("C",)


def test_rank_pointwise_ignores_monotone_transforms(index):
    weights = _card_scores(index, {"A": -0.3, "B": 0.2, "C": 0.25, "D": 0.1}).weights
    request = RankRequest("apple", ("A", "B", "C", "D"))
    plain = rank_pointwise(LinearModel(weights), index, request)
    squashed = rank_pointwise(LinearModel(weights, lambda s: np.exp(3 * s) + 1), index, request)
    assert plain.ranking == squashed.ranking == ("C", "B", "D", "A")


def test_rank_pointwise_maximizes_any_decreasing_position_weighting():
    rng = np.random.default_rng(5)
    cards = ["A", "B", "C", "D", "E"]
    index = build_feature_index([], universe=cards)
    for _ in range(10):
        scores = dict(zip(cards, rng.normal(size=5)))
        predicted = rank_pointwise(_card_scores(index, scores), index, RankRequest("w", tuple(cards)))
        position_weights = np.sort(rng.uniform(0.1, 1.0, size=5))[::-1]
        best = max(permutations(cards), key=lambda p: sum(scores[c] * w for c, w in zip(p, position_weights)))
        assert predicted.ranking == best


def test_rank_request_bounds():
    with pytest.raises(RankingError):
        RankRequest("w", ())
    with pytest.raises(RankingError):
        RankRequest("w", tuple("ABCDEFGHI"))
    with pytest.raises(RankingError):
        RankRequest("w", ("A",), max_list_size=0)
    assert RankRequest("w", ("B", "A", "B")).candidate_cards == ("A", "B")


# ==================== LISTWISE RANKING ====================

def test_enumeration_counts():
    assert len(enumerate_candidate_lists(["A", "B", "C"], 3)) == 15
    assert len(enumerate_candidate_lists(["A", "B", "C"], 1)) == 3


def test_listwise_single_candidate(index):
    model = LinearModel(np.ones(index.schema.width))
    assert rank_listwise(model, index, RankRequest("apple", ("B",))).ranking == ("B",)


def test_listwise_winner_beats_every_alternative(index):
    model = _card_scores(index, {"A": 0.4, "B": -0.2, "C": 0.9, "D": 0.1})
    request = RankRequest("apple", ("A", "B", "C"))
    winner = rank_listwise(model, index, request)
    for ranking in enumerate_candidate_lists(request.candidate_cards, 3):
        assert winner.score >= model.predict(list_features(index, "apple", ranking))[0] - 1e-12
    assert winner.ranking == ("C", "A")
    again = rank_listwise(model, index, request, candidate_lists=[winner.ranking])
    assert again.ranking == winner.ranking


def test_listwise_refuses_large_enumeration(index):
    model = LinearModel(np.ones(index.schema.width))
    request = RankRequest("apple", ("A", "B", "C", "D", "A2", "B2", "C2"))
    wide = build_feature_index([], universe=request.candidate_cards)
    with pytest.raises(RankingError, match=r"O\(2\^K\)"):
        rank_listwise(LinearModel(np.ones(wide.schema.width)), wide, request)
    assert len(rank_listwise(model, index, RankRequest("apple", ("A", "B")), [("B", "A")]).ranking) == 2


def test_candidate_lists_outside_the_request_are_skipped(index, caplog):
    model = _card_scores(index, {"A": 0.4, "B": -0.2, "C": 0.9, "D": 2.0})
    request = RankRequest("apple", ("A", "B", "C"), max_list_size=2)
    offered = [("C", "A", "B"), ("A", "D"), ("B", "B"), (), ("B",), ("C", "A")]
    with caplog.at_level(logging.WARNING):
        assert admissible_lists(request, offered) == [("B",), ("C", "A")]
    assert "Skipped 4 candidate lists" in caplog.text
    assert rank_listwise(model, index, request, offered).ranking == ("C", "A")

    with pytest.raises(RankingError, match="no candidate list fits"):
        rank_listwise(model, index, request, [("D",), ("A", "B", "C")])
    with pytest.raises(RankingError, match="no candidate list fits"):
        rank_listwise(model, index, request, [])


def test_predict_qpv_keeps_full_length_for_listwise(index):
    model = _card_scores(index, {"A": 0.4, "B": -0.2, "C": 0.9})
    qpv = make_qpv("z", "s9", 1, "apple", ["A", "B", "C"], False)
    assert predict_qpv(model, index, qpv, Scenario.LISTWISE).ranking == ("C", "A", "B")
    assert predict_qpv(model, index, qpv, Scenario.POINTWISE).ranking == ("C", "A", "B")


class CountingModel(LinearModel):
    calls = 0

    def predict(self, x):
        self.calls += 1
        return super().predict(x)


@pytest.mark.parametrize("scenario", [Scenario.POINTWISE, Scenario.LISTWISE])
def test_batched_predictions_match_single_requests(index, scenario):
    weights = _card_scores(index, {"A": 0.4, "B": -0.2, "C": 0.9, "D": 0.1}).weights
    weights[0], weights[3] = 0.7, -0.3
    qpvs = [
        make_qpv("x1", "s7", 1, "apple", ["A", "B", "C"], False),
        make_qpv("x2", "s8", 1, "apple", ["C", "B", "A"], True),
        make_qpv("x3", "s9", 1, "pear", ["D", "C"], False),
        make_qpv("x4", "s9", 2, "banana", ["B", "D", "A"], True),
    ]
    model = CountingModel(weights)
    predictions = predict_qpvs(model, index, qpvs, scenario)
    assert model.calls == 1
    assert sorted(predictions) == ["x1", "x2", "x3", "x4"]
    assert predictions["x1"] == predictions["x2"]

    for qpv in qpvs:
        request = RankRequest(qpv.query, qpv.ranking)
        if scenario is Scenario.LISTWISE:
            single = rank_listwise(LinearModel(weights), index, request, list(permutations(request.candidate_cards)))
        else:
            single = rank_pointwise(LinearModel(weights), index, request)
        assert predictions[qpv.qpv_id].ranking == single.ranking
        assert predictions[qpv.qpv_id].score == pytest.approx(single.score, rel=1e-9)

    assert predict_qpvs(model, index, [], scenario) == {}


def test_read_candidate_lists(tmp_path):
    path = tmp_path / "lists.jsonl"
    path.write_text('["A", "B"]\n\n["B"]\n', encoding="utf-8")
    assert read_candidate_lists(path) == [("A", "B"), ("B",)]
    path.write_text('["A"]\n{"a": 1}\n', encoding="utf-8")
    with pytest.raises(RankingError, match="line 2"):
        read_candidate_lists(path)
