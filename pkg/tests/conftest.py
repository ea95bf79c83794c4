import pytest

from models.qpv_model import QPV, CardObservation


def make_qpv(qpv_id, session_id, timestamp_ms, query, card_types, reformulated,
             viewed=None, clicked=None, links=None, link_clicks=None):
    """QPV with cards ranked in the given order; views default to all, clicks to none"""
    viewed = viewed if viewed is not None else [True] * len(card_types)
    clicked = clicked if clicked is not None else [False] * len(card_types)
    links = links if links is not None else [0] * len(card_types)
    link_clicks = link_clicks if link_clicks is not None else [0] * len(card_types)
    cards = tuple(
        CardObservation(card_type, rank, viewed[rank - 1], clicked[rank - 1], links[rank - 1], link_clicks[rank - 1])
        for rank, card_type in enumerate(card_types, start=1)
    )
    return QPV(qpv_id, session_id, timestamp_ms, query, cards, reformulated)


@pytest.fixture
def qpv_factory():
    return make_qpv


@pytest.fixture
def worked_example():
    """A reformulated page c1>c2>c3>c4 followed by a satisfying page c3>c2>c5>c4"""
    q1 = make_qpv("q1", "s1", 1000, "barack obama", ["c1", "c2", "c3", "c4"], True)
    q2 = make_qpv("q2", "s1", 2000, "barack obama", ["c3", "c2", "c5", "c4"], False)
    return [q1, q2]


@pytest.fixture
def movement_example():
    """Prior c1>c2>c3>c4, successor c3>c2>c5>c1"""
    q1 = make_qpv("q1", "s1", 1000, "barack obama", ["c1", "c2", "c3", "c4"], True)
    q2 = make_qpv("q2", "s1", 2000, "barack obama", ["c3", "c2", "c5", "c1"], False)
    return [q1, q2]


@pytest.fixture
def small_world_config():
    from synth.log_generator import WorldConfig

    return WorldConfig(num_queries=20, num_card_types=8, num_sessions=1500, pool_size=5, seed=11)


@pytest.fixture
def small_log(small_world_config):
    from synth.log_generator import generate_log

    return generate_log(small_world_config)
