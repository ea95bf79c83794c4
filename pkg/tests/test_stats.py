import pytest

from controllers.stats_controller import compute_stats, ratio_bucket
from utils.errors import DataError

from conftest import make_qpv


def test_empty_log_is_an_error():
    with pytest.raises(DataError):
        compute_stats([])


def test_ten_qpvs_three_reformulated_fall_in_bucket_point_three():
    qpvs = [make_qpv(f"q{i}", f"s{i}", i, "obama", ["A", "B"], i < 3) for i in range(10)]
    report = compute_stats(qpvs)
    assert report.reformulation_ratio_histogram == {0.3: 1}
    assert report.num_qpvs == 10
    assert report.num_distinct_queries == 1
    assert report.num_card_types == 2


def test_all_two_card_pages():
    qpvs = [make_qpv(f"q{i}", f"s{i}", i, f"w{i % 3}", ["A", "B"], False) for i in range(9)]
    report = compute_stats(qpvs)
    assert report.cards_per_qpv_distribution == {2: 100.0}
    assert report.cards_per_query_distribution == {2: 100.0}


def test_ratio_buckets():
    assert ratio_bucket(0.0) == 0.0
    assert ratio_bucket(0.3) == 0.3
    assert ratio_bucket(0.99) == 0.9
    assert ratio_bucket(1.0) == 1.0


def test_splits_sum_to_one_hundred(small_log):
    qpvs, _ = small_log
    report = compute_stats(qpvs)
    for positive, negative in report.label_split_per_card_count.values():
        assert positive + negative == pytest.approx(100.0, abs=0.01)
    for positive, negative in report.card_group_label_split.values():
        assert positive + negative == pytest.approx(100.0, abs=0.01)
    assert sum(report.reformulation_ratio_histogram.values()) == report.num_distinct_queries
    assert sum(report.cards_per_qpv_distribution.values()) == pytest.approx(100.0)


def test_card_group_split():
    qpvs = [
        make_qpv("a", "s1", 1, "apple", ["Nav", "News"], False),
        make_qpv("b", "s2", 2, "apple", ["Nav", "News"], True),
        make_qpv("c", "s3", 3, "apple", ["Nav", "News"], False),
        make_qpv("d", "s4", 4, "apple", ["News", "Nav"], True),
    ]
    split = compute_stats(qpvs).card_group_label_split
    assert split[("apple", ("Nav", "News"))] == pytest.approx((200.0 / 3, 100.0 / 3))
    assert split[("apple", ("News", "Nav"))] == (0.0, 100.0)


def test_generator_page_sizes_follow_configuration():
    from synth.log_generator import WorldConfig, generate_log

    config = WorldConfig(num_queries=30, num_card_types=8, num_sessions=4000, pool_size=5,
                         cards_per_page_distribution={2: 0.7, 3: 0.3}, max_chain_length=1, seed=3)
    qpvs, _ = generate_log(config)
    report = compute_stats(qpvs)
    assert report.cards_per_qpv_distribution[2] == pytest.approx(70.0, abs=2.0)


def test_report_serializes_groups_as_records():
    qpvs = [make_qpv("a", "s1", 1, "apple", ["Nav", "News"], False)]
    payload = compute_stats(qpvs).to_dict()
    assert payload["card_group_label_split"] == [
        {"query": "apple", "ranking": ["Nav", "News"], "positive": 100.0, "negative": 0.0}
    ]
    assert payload["reformulation_ratio_histogram"] == {"0.0": 1}
