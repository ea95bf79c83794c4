"""
Labeling strategies: turn QPV-level reformulation outcomes into card, card-pair
and ranking labels, plus the click-through-rate baseline and human judgments.

Every strategy walks QPVs in canonical (session, timestamp) order, so output
does not depend on input ordering.
"""

import logging
from collections import OrderedDict
from itertools import combinations
from typing import Iterable, List, Sequence

import pandas as pd

from models.label_model import CardLabel, ListLabel, MovementConfig, PairLabel, Strategy
from models.qpv_model import abandoned_qpvs, canonical_order, chain_sessions
from utils.errors import JudgmentParseError, LabelError
from utils.helpers import rank_discount

logger = logging.getLogger(__name__)

POSITIVES_ALL = "all"
POSITIVES_POST_REFORM = "post-reform"

# grade -> numeric label
HUMAN_GRADES = OrderedDict([
    ("excellent", 2.0),
    ("good", 1.0),
    ("neutral", 0.0),
    ("poor", -1.0),
    ("very poor", -2.0),
])


# ==================== POINTWISE ====================

def _pointwise_targets(qpvs, pairs, positives, include_abandoned):
    """QPVs that receive pointwise labels, with their outcome sign"""
    if positives not in (POSITIVES_ALL, POSITIVES_POST_REFORM):
        raise LabelError(f"positives must be {POSITIVES_ALL!r} or {POSITIVES_POST_REFORM!r}, got {positives!r}")
    negative_ids = {pair.prior.qpv_id for pair in pairs}
    if include_abandoned:
        negative_ids |= {qpv.qpv_id for qpv in abandoned_qpvs(qpvs)}
    successor_ids = {pair.successor.qpv_id for pair in pairs}

    for qpv in canonical_order(qpvs):
        if not qpv.reformulated:
            if positives == POSITIVES_ALL or qpv.qpv_id in successor_ids:
                yield qpv, 1
        elif qpv.qpv_id in negative_ids:
            yield qpv, -1


def label_naive_pointwise(qpvs, pairs, *, positives=POSITIVES_ALL, include_abandoned=False) -> List[CardLabel]:
    """
    Every card of a satisfied QPV gets +1, every card of the last reformulated
    QPV before a satisfied one gets -1

    Args:
        qpvs: the log
        pairs: reformulation pairs from chain_sessions(qpvs)
        positives: "all" satisfied QPVs, or only "post-reform" successors
        include_abandoned: also label final reformulated QPVs of sessions
            that never reached a satisfied query
    """
    return [
        CardLabel(qpv.qpv_id, qpv.query, card.card_type, float(sign), Strategy.NPL)
        for qpv, sign in _pointwise_targets(qpvs, pairs, positives, include_abandoned)
        for card in qpv.cards
    ]


def label_discounted_pointwise(qpvs, pairs, *, positives=POSITIVES_ALL, include_abandoned=False) -> List[CardLabel]:
    """Same emission rule as the naive strategy, label = outcome / ln(1 + rank)"""
    return [
        CardLabel(qpv.qpv_id, qpv.query, card.card_type, sign * rank_discount(card.rank), Strategy.DPL)
        for qpv, sign in _pointwise_targets(qpvs, pairs, positives, include_abandoned)
        for card in qpv.cards
    ]


def movement_labels(prior, successor, config):
    """
    Position-change labels for one reformulation, keyed to the successor QPV

    Cards in both pages get prior rank minus successor rank; cards only in the
    successor get d_plus; cards only in the prior get d_minus.
    """
    labels = []
    for card in successor.cards:
        if card.card_type in prior.card_set:
            value = float(prior.rank_of(card.card_type) - card.rank)
        else:
            value = config.d_plus
        labels.append(CardLabel(successor.qpv_id, successor.query, card.card_type, value, Strategy.MPL))
    for card in prior.cards:
        if card.card_type not in successor.card_set:
            labels.append(CardLabel(successor.qpv_id, successor.query, card.card_type, config.d_minus,
                                    Strategy.MPL))
    return labels


def label_movement_pointwise(pairs, config=None) -> List[CardLabel]:
    """Movement-based labels for every reformulation pair"""
    config = config or MovementConfig()
    ordered = sorted(pairs, key=lambda p: (p.successor.session_id, p.successor.timestamp_ms, p.successor.qpv_id))
    labels = []
    for pair in ordered:
        labels.extend(movement_labels(pair.prior, pair.successor, config))
    return labels


# ==================== PAIRWISE ====================

def label_pairwise(qpvs) -> List[PairLabel]:
    """K(K-1)/2 preference labels per QPV, each carrying the QPV outcome"""
    return [
        PairLabel(qpv.qpv_id, qpv.query, higher, lower, qpv.label)
        for qpv in canonical_order(qpvs)
        for higher, lower in combinations(qpv.ranking, 2)
    ]


def label_approx_pairwise(qpvs, combine=True, *, flip_negative_pairs=True) -> List[CardLabel]:
    """
    Break pair preferences down to card labels

    A +1 pair gives (preferred +1, other -1); a -1 pair gives (preferred -1,
    other +1). With combine, labels of the same card in the same QPV are summed.

    Args:
        flip_negative_pairs: False applies the +1 rule to every pair whatever
            its label
    """
    labels = []
    for qpv in canonical_order(qpvs):
        pair_labels = [pair for pair in label_pairwise([qpv])]
        pieces = []
        for pair in pair_labels:
            sign = pair.label if flip_negative_pairs else 1
            pieces.append((pair.preferred, float(sign)))
            pieces.append((pair.other, float(-sign)))

        if combine:
            totals = {card_type: 0.0 for card_type in qpv.ranking}
            for card_type, value in pieces:
                totals[card_type] += value
            pieces = list(totals.items())
        labels.extend(CardLabel(qpv.qpv_id, qpv.query, card_type, value, Strategy.APL)
                      for card_type, value in pieces)
    return labels


# ==================== LISTWISE ====================

def label_listwise(qpvs) -> List[ListLabel]:
    """One label per QPV for its whole observed ranking"""
    return [ListLabel(qpv.qpv_id, qpv.query, qpv.ranking, qpv.label) for qpv in canonical_order(qpvs)]


# ==================== CLICK-THROUGH RATE ====================

def ctr_table(qpvs) -> pd.DataFrame:
    """
    Pooled link CTR per (query, card_type)

    Returns:
        DataFrame with columns query, card_type, links, link_clicks, ctr;
        ctr is 0 for cards that never showed a link
    """
    rows = [
        (qpv.query, card.card_type, card.num_links, card.num_link_clicks)
        for qpv in qpvs
        for card in qpv.cards
    ]
    frame = pd.DataFrame(rows, columns=["query", "card_type", "links", "link_clicks"])
    table = frame.groupby(["query", "card_type"], sort=True, as_index=False)[["links", "link_clicks"]].sum()
    table["ctr"] = [
        clicks / links if links > 0 else 0.0
        for links, clicks in zip(table["links"], table["link_clicks"])
    ]
    return table


def label_ctr(qpvs) -> List[CardLabel]:
    """Every shown card gets its query-level pooled CTR"""
    if not qpvs:
        return []
    table = ctr_table(qpvs)
    lookup = {(q, c): float(v) for q, c, v in zip(table["query"], table["card_type"], table["ctr"])}
    return [
        CardLabel(qpv.qpv_id, qpv.query, card.card_type, lookup[(qpv.query, card.card_type)], Strategy.CTR)
        for qpv in canonical_order(qpvs)
        for card in qpv.cards
    ]


# ==================== HUMAN JUDGMENTS ====================

def import_human_judgments(stream: Iterable) -> List[CardLabel]:
    """
    Read (query, card_type, grade) TSV lines

    Grades Excellent/Good/Neutral/Poor/Very Poor map to +2..-2. Blank lines
    and lines starting with '#' are skipped.

    Raises:
        JudgmentParseError: undecodable line, wrong column count or unknown grade
    """
    labels = []
    for line_number, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise JudgmentParseError(line_number, f"not UTF-8: {e}") from e
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        columns = line.split("\t")
        if len(columns) != 3:
            raise JudgmentParseError(line_number, f"expected 3 tab-separated columns, got {len(columns)}")
        query, card_type, grade = (column.strip() for column in columns)
        key = " ".join(grade.lower().split())
        if key not in HUMAN_GRADES:
            raise JudgmentParseError(line_number, f"unknown grade {grade!r}")
        labels.append(CardLabel("", query, card_type, HUMAN_GRADES[key], Strategy.HUMAN))
    logger.info(f"📊 Imported {len(labels)} human judgments")
    return labels


def read_human_judgments(path):
    with open(path, "rb") as handle:
        return import_human_judgments(handle)


# ==================== DISPATCH ====================

def derive_labels(strategy, qpvs: Sequence, *, movement_config=None, combine=True, positives=POSITIVES_ALL,
                  include_abandoned=False, flip_negative_pairs=True, ltl_models=None, judgments=None):
    """
    Run one strategy over a log

    Args:
        strategy: Strategy or its lowercase name
        ltl_models: dict query -> LtlModel, required for ltl
        judgments: imported human labels, required for human

    Returns:
        list of CardLabel (ListLabel for ll)
    """
    strategy = Strategy.parse(strategy) if not isinstance(strategy, Strategy) else strategy

    if strategy in (Strategy.NPL, Strategy.DPL, Strategy.MPL):
        pairs = chain_sessions(qpvs)
        if strategy is Strategy.NPL:
            labels = label_naive_pointwise(qpvs, pairs, positives=positives, include_abandoned=include_abandoned)
        elif strategy is Strategy.DPL:
            labels = label_discounted_pointwise(qpvs, pairs, positives=positives,
                                                include_abandoned=include_abandoned)
        else:
            labels = label_movement_pointwise(pairs, movement_config)
    elif strategy is Strategy.APL:
        labels = label_approx_pairwise(qpvs, combine, flip_negative_pairs=flip_negative_pairs)
    elif strategy is Strategy.LL:
        labels = label_listwise(qpvs)
    elif strategy is Strategy.CTR:
        labels = label_ctr(qpvs)
    elif strategy is Strategy.LTL:
        if ltl_models is None:
            raise LabelError("ltl labels need fitted models")
        from utils.ltl import ltl_log_labels
        labels = ltl_log_labels(ltl_models, qpvs)
    else:
        if judgments is None:
            raise LabelError("human labels need a judgments file")
        queries = {qpv.query for qpv in qpvs}
        labels = [label for label in judgments if label.query in queries]

    logger.info(f"✅ {strategy.value}: {len(labels)} labels from {len(qpvs)} QPVs")
    return labels
