import io
import json

import pytest

from models.qpv_model import (
    abandoned_qpvs,
    chain_sessions,
    parse_qpv_log,
    read_qpv_log,
    serialize_qpv_log,
)
from utils.errors import QpvParseError, QpvValidationError, SessionOrderError

from conftest import make_qpv


def _line(**overrides):
    record = {
        "qpv_id": "a",
        "session_id": "s",
        "timestamp_ms": 1,
        "query": "weather",
        "reformulated": False,
        "cards": [
            {"card_type": "WeatherCard", "rank": 1, "viewed": True, "clicked": False,
             "num_links": 0, "num_link_clicks": 0},
            {"card_type": "NewsCard", "rank": 2, "viewed": True, "clicked": True,
             "num_links": 3, "num_link_clicks": 1},
        ],
    }
    record.update(overrides)
    return json.dumps(record)


def test_empty_input_gives_empty_log():
    assert parse_qpv_log(io.BytesIO(b"")) == []


def test_parse_keeps_input_order_and_skips_blank_lines():
    data = "\n".join([_line(qpv_id="b"), "", _line(qpv_id="a", timestamp_ms=2)]) + "\n"
    qpvs = parse_qpv_log(io.BytesIO(data.encode("utf-8")))
    assert [q.qpv_id for q in qpvs] == ["b", "a"]
    assert qpvs[0].ranking == ("WeatherCard", "NewsCard")
    assert qpvs[0].label == 1


def test_whole_payloads_parse_like_streams():
    data = _line(qpv_id="b") + "\n\n" + _line(qpv_id="a", timestamp_ms=2) + "\n"
    from_stream = parse_qpv_log(io.BytesIO(data.encode("utf-8")))
    assert parse_qpv_log(data.encode("utf-8")) == from_stream
    assert parse_qpv_log(data) == from_stream
    assert parse_qpv_log(serialize_qpv_log(from_stream)) == from_stream

    with pytest.raises(QpvParseError) as info:
        parse_qpv_log((_line() + "\n{not json\n").encode("utf-8"))
    assert info.value.line_number == 2


def test_unknown_fields_are_ignored():
    record = json.loads(_line())
    record["device"] = "phone"
    qpvs = parse_qpv_log([json.dumps(record)])
    assert qpvs[0].query == "weather"


def test_duplicate_rank_is_rejected_with_line_number():
    cards = [
        {"card_type": "A", "rank": 1, "viewed": True, "clicked": False, "num_links": 0, "num_link_clicks": 0},
        {"card_type": "B", "rank": 1, "viewed": True, "clicked": False, "num_links": 0, "num_link_clicks": 0},
    ]
    data = _line() + "\n" + _line(qpv_id="dup", cards=cards) + "\n"
    with pytest.raises(QpvValidationError) as info:
        parse_qpv_log(io.BytesIO(data.encode("utf-8")))
    assert info.value.line_number == 2
    assert info.value.qpv_id == "dup"
    assert "duplicate rank" in str(info.value)


def test_duplicate_card_type_and_empty_cards_are_rejected():
    cards = [
        {"card_type": "A", "rank": 1, "viewed": True, "clicked": False, "num_links": 0, "num_link_clicks": 0},
        {"card_type": "A", "rank": 2, "viewed": True, "clicked": False, "num_links": 0, "num_link_clicks": 0},
    ]
    with pytest.raises(QpvValidationError, match="duplicate card_type"):
        parse_qpv_log([_line(cards=cards)])
    with pytest.raises(QpvValidationError, match="empty card list"):
        parse_qpv_log([_line(cards=[])])


def test_card_invariants_are_enforced():
    clicked_unviewed = [{"card_type": "A", "rank": 1, "viewed": False, "clicked": True,
                         "num_links": 1, "num_link_clicks": 1}]
    with pytest.raises(QpvValidationError, match="clicked but not viewed"):
        parse_qpv_log([_line(cards=clicked_unviewed)])
    too_many_clicks = [{"card_type": "A", "rank": 1, "viewed": True, "clicked": True,
                        "num_links": 1, "num_link_clicks": 2}]
    with pytest.raises(QpvValidationError, match="more link clicks than links"):
        parse_qpv_log([_line(cards=too_many_clicks)])


def test_malformed_lines_report_line_and_reason():
    with pytest.raises(QpvParseError) as info:
        parse_qpv_log([_line(), "{not json"])
    assert info.value.line_number == 2

    record = json.loads(_line())
    del record["query"]
    with pytest.raises(QpvParseError, match="missing required field 'query'"):
        parse_qpv_log([json.dumps(record)])

    with pytest.raises(QpvParseError, match="timestamp_ms"):
        parse_qpv_log([_line(timestamp_ms="soon")])


def test_generated_log_round_trips(small_log, tmp_path):
    qpvs, _ = small_log
    payload = serialize_qpv_log(qpvs[:100])
    again = parse_qpv_log(io.BytesIO(payload))
    assert again == qpvs[:100]
    assert serialize_qpv_log(again) == payload

    path = tmp_path / "log.jsonl"
    path.write_bytes(payload)
    assert read_qpv_log(path) == qpvs[:100]


def test_chain_negative_then_positive_gives_one_pair(worked_example):
    pairs = chain_sessions(worked_example)
    assert len(pairs) == 1
    assert (pairs[0].prior.qpv_id, pairs[0].successor.qpv_id) == ("q1", "q2")


def test_chain_only_terminal_adjacency_is_paired():
    session = [
        make_qpv("c", "s", 30, "w", ["A"], False),
        make_qpv("a", "s", 10, "w", ["A"], True),
        make_qpv("b", "s", 20, "w", ["A"], True),
    ]
    pairs = chain_sessions(session)
    assert [(p.prior.qpv_id, p.successor.qpv_id) for p in pairs] == [("b", "c")]


def test_chain_without_negative_or_with_abandonment_gives_no_pair():
    satisfied = [make_qpv("a", "s", 1, "w", ["A"], False), make_qpv("b", "s", 2, "w", ["A"], False)]
    assert chain_sessions(satisfied) == []

    abandoned = [make_qpv("a", "t", 1, "w", ["A"], False), make_qpv("b", "t", 2, "w", ["A"], True)]
    assert chain_sessions(abandoned) == []
    assert [q.qpv_id for q in abandoned_qpvs(abandoned)] == ["b"]


def test_sessions_do_not_mix():
    qpvs = [make_qpv("a", "s1", 1, "w", ["A"], True), make_qpv("b", "s2", 2, "w", ["A"], False)]
    assert chain_sessions(qpvs) == []


def test_timestamp_tie_is_an_error():
    qpvs = [make_qpv("a", "s", 5, "w", ["A"], True), make_qpv("b", "s", 5, "w", ["A"], False)]
    with pytest.raises(SessionOrderError):
        chain_sessions(qpvs)


def test_every_pair_prior_is_the_last_negative_of_its_chain(small_log):
    qpvs, _ = small_log
    pairs = chain_sessions(qpvs)
    priors = [p.prior.qpv_id for p in pairs]
    assert len(priors) == len(set(priors))
    for pair in pairs:
        assert pair.prior.session_id == pair.successor.session_id
        assert pair.prior.timestamp_ms < pair.successor.timestamp_ms
        assert pair.prior.reformulated and not pair.successor.reformulated
