"""
Learning-to-label: per-query logistic credit models

For one query term w the outcome of each QPV is modeled as

    P(satisfied) = sigmoid(bias + sum over shown cards of
                           clicked * click_weight[c] + viewed * view_weight[c])

and fit by L2-regularized maximum likelihood. A card's label in a QPV is then
the part of the logit it contributed.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import pandas as pd
from tqdm import tqdm

from models.label_model import CardLabel, Strategy
from models.qpv_model import canonical_order
from models.store import read_jsonl, write_dataframe_tsv, write_jsonl
from utils.errors import LabelError, LtlFitError
from utils.helpers import logistic, resolve_workers

logger = logging.getLogger(__name__)

ARMIJO_C = 1e-4
MAX_BACKTRACKS = 60
RESOLUTION = 1e-10


@dataclass(frozen=True)
class FitConfig:
    l2_lambda: float = 0.01
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8
    min_qpvs: int = 5

    def __post_init__(self):
        if self.l2_lambda < 0:
            raise LtlFitError(f"l2_lambda must be >= 0, got {self.l2_lambda}")
        if self.max_iterations < 1:
            raise LtlFitError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.gradient_tolerance > 0:
            raise LtlFitError(f"gradient_tolerance must be > 0, got {self.gradient_tolerance}")


@dataclass
class LtlModel:
    query: str
    bias: float
    click_weight: Dict[str, float]
    view_weight: Dict[str, float]
    num_qpvs_fit: int
    converged: bool
    low_confidence: bool = False
    objective_history: List[float] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if set(self.click_weight) != set(self.view_weight):
            raise LtlFitError(f"query {self.query!r}: click and view weights cover different cards")
        values = [self.bias, *self.click_weight.values(), *self.view_weight.values()]
        if not np.all(np.isfinite(values)):
            raise LtlFitError(f"query {self.query!r}: non-finite weight")

    @property
    def card_types(self):
        return tuple(sorted(self.click_weight))

    def to_dict(self):
        return {
            "query": self.query,
            "bias": self.bias,
            "click_weight": {c: self.click_weight[c] for c in self.card_types},
            "view_weight": {c: self.view_weight[c] for c in self.card_types},
            "converged": self.converged,
            "num_qpvs_fit": self.num_qpvs_fit,
            "low_confidence": self.low_confidence,
        }

    @classmethod
    def from_dict(cls, record):
        try:
            return cls(
                query=record["query"],
                bias=float(record["bias"]),
                click_weight={k: float(v) for k, v in record["click_weight"].items()},
                view_weight={k: float(v) for k, v in record["view_weight"].items()},
                num_qpvs_fit=int(record["num_qpvs_fit"]),
                converged=bool(record["converged"]),
                low_confidence=bool(record.get("low_confidence", False)),
            )
        except KeyError as e:
            raise LtlFitError(f"model record missing field {e.args[0]!r}") from None


# ==================== OBJECTIVE ====================

def design_matrix(qpvs, card_types):
    """
    Rows [1, clicked(c_1..c_K), viewed(c_1..c_K)] and targets +1 / -1

    Cards not shown in a QPV contribute zeros.
    """
    column = {c: i for i, c in enumerate(card_types)}
    k = len(card_types)
    x = np.zeros((len(qpvs), 1 + 2 * k))
    x[:, 0] = 1.0
    y = np.empty(len(qpvs))
    for row, qpv in enumerate(qpvs):
        y[row] = qpv.label
        for card in qpv.cards:
            j = column[card.card_type]
            x[row, 1 + j] = float(card.clicked)
            x[row, 1 + k + j] = float(card.viewed)
    return x, y


def _collapse(x, y):
    """Merge identical (row, target) pairs into weighted rows"""
    stacked = np.column_stack([x, y])
    unique, counts = np.unique(stacked, axis=0, return_counts=True)
    return unique[:, :-1], unique[:, -1], counts.astype(float)


def objective(theta, x, y, l2_lambda, weights=None):
    """Sum of logistic losses plus l2_lambda * ||theta||^2"""
    margins = y * (x @ theta)
    losses = np.logaddexp(0.0, -margins)
    if weights is not None:
        losses = losses * weights
    return float(losses.sum() + l2_lambda * np.dot(theta, theta))


def gradient(theta, x, y, l2_lambda, weights=None):
    margins = y * (x @ theta)
    coef = -y * logistic(-margins)
    if weights is not None:
        coef = coef * weights
    return x.T @ coef + 2.0 * l2_lambda * theta


def hessian(theta, x, l2_lambda, weights=None):
    probability = logistic(x @ theta)
    curvature = probability * (1.0 - probability)
    if weights is not None:
        curvature = curvature * weights
    return (x * curvature[:, None]).T @ x + 2.0 * l2_lambda * np.eye(x.shape[1])


def _minimize(x, y, weights, config):
    """
    Newton steps with Armijo backtracking

    Columns that are zero in every row keep a zero weight. Once the predicted
    decrease is below what the objective can resolve, a full step is taken
    only if it shrinks the gradient. The history is non-increasing.
    """
    theta = np.zeros(x.shape[1])
    active = np.flatnonzero(np.any(x != 0, axis=0))
    x = x[:, active]
    lam = config.l2_lambda

    current = np.zeros(len(active))
    value = objective(current, x, y, lam, weights)
    grad = gradient(current, x, y, lam, weights)
    history = [value]
    converged = False

    for _ in range(config.max_iterations):
        if float(np.abs(grad).max()) < config.gradient_tolerance:
            converged = True
            break

        direction = np.linalg.lstsq(hessian(current, x, lam, weights), -grad, rcond=None)[0]
        slope = float(np.dot(grad, direction))
        if not np.all(np.isfinite(direction)) or slope >= 0:
            direction, slope = -grad, -float(np.dot(grad, grad))

        if -slope <= RESOLUTION * max(1.0, abs(value)):
            candidate = current + direction
            candidate_grad = gradient(candidate, x, y, lam, weights)
            if float(np.abs(candidate_grad).max()) >= float(np.abs(grad).max()):
                break
            value = min(value, objective(candidate, x, y, lam, weights))
            current, grad = candidate, candidate_grad
            history.append(value)
            continue

        trial = 1.0
        for _ in range(MAX_BACKTRACKS):
            candidate = current + trial * direction
            candidate_value = objective(candidate, x, y, lam, weights)
            if candidate_value <= value + ARMIJO_C * trial * slope:
                break
            trial *= 0.5
        else:
            break

        current, value = candidate, candidate_value
        grad = gradient(current, x, y, lam, weights)
        history.append(value)
    else:
        converged = float(np.abs(grad).max()) < config.gradient_tolerance

    theta[active] = current
    return theta, history, converged


# ==================== FIT ====================

def fit_ltl(qpvs, config=None) -> LtlModel:
    """
    Fit one query term's credit model

    Raises:
        LtlFitError: no QPVs, or QPVs of more than one query
    """
    config = config or FitConfig()
    if not qpvs:
        raise LtlFitError("cannot fit a credit model on zero QPVs")
    queries = {qpv.query for qpv in qpvs}
    if len(queries) != 1:
        raise LtlFitError(f"QPVs span {len(queries)} queries; fit one query at a time")
    query = queries.pop()

    card_types = sorted({card.card_type for qpv in qpvs for card in qpv.cards})
    x, y = design_matrix(qpvs, card_types)
    x, y, weights = _collapse(x, y)
    theta, history, converged = _minimize(x, y, weights, config)

    k = len(card_types)
    model = LtlModel(
        query=query,
        bias=float(theta[0]),
        click_weight={c: float(theta[1 + j]) for j, c in enumerate(card_types)},
        view_weight={c: float(theta[1 + k + j]) for j, c in enumerate(card_types)},
        num_qpvs_fit=len(qpvs),
        converged=converged,
        low_confidence=len(qpvs) < config.min_qpvs,
        objective_history=history,
    )
    if not converged:
        logger.debug(f"⚠️ LtL {query!r}: stopped after {len(history) - 1} steps without reaching tolerance")
    return model


def fit_all(qpvs, config=None, workers=None, progress=False) -> Dict[str, LtlModel]:
    """
    Fit every query term independently, in parallel

    Returns:
        dict query -> LtlModel, keyed in sorted query order
    """
    config = config or FitConfig()
    by_query = {}
    for qpv in canonical_order(qpvs):
        by_query.setdefault(qpv.query, []).append(qpv)
    queries = sorted(by_query)

    with ThreadPoolExecutor(max_workers=resolve_workers(workers)) as pool:
        fitted = pool.map(lambda q: fit_ltl(by_query[q], config), queries)
        models = list(tqdm(fitted, total=len(queries), desc="ltl", unit="query", disable=not progress))

    result = dict(zip(queries, models))
    low = sum(1 for m in models if m.low_confidence)
    if low:
        logger.warning(f"⚠️ {low} of {len(models)} query terms have fewer than {config.min_qpvs} QPVs")
    logger.info(f"✅ Fitted {len(models)} credit models "
                f"({sum(1 for m in models if m.converged)} converged)")
    return result


# ==================== LABELS ====================

def ltl_qpv_labels(model: LtlModel, qpv) -> List[CardLabel]:
    """Per-card credit in one QPV; cards the model never saw get 0 and a cold flag"""
    if model.query != qpv.query:
        raise LabelError(f"model for {model.query!r} cannot label a QPV of {qpv.query!r}")
    labels = []
    for card in qpv.cards:
        if card.card_type in model.click_weight:
            value = (float(card.viewed) * model.view_weight[card.card_type]
                     + float(card.clicked) * model.click_weight[card.card_type])
            labels.append(CardLabel(qpv.qpv_id, qpv.query, card.card_type, value, Strategy.LTL))
        else:
            labels.append(CardLabel(qpv.qpv_id, qpv.query, card.card_type, 0.0, Strategy.LTL, cold=True))
    return labels


def ltl_log_labels(models: Dict[str, LtlModel], qpvs) -> List[CardLabel]:
    """Label every QPV with its query's model; queries without a model are all cold"""
    labels = []
    for qpv in canonical_order(qpvs):
        model = models.get(qpv.query)
        if model is None:
            labels.extend(CardLabel(qpv.qpv_id, qpv.query, card.card_type, 0.0, Strategy.LTL, cold=True)
                          for card in qpv.cards)
        else:
            labels.extend(ltl_qpv_labels(model, qpv))
    cold = sum(1 for label in labels if label.cold)
    if cold:
        logger.warning(f"⚠️ {cold} LtL labels belong to cards without a fitted weight")
    return labels


# ==================== EXPECTED VALUES ====================

@dataclass(frozen=True)
class CardValue:
    card_type: str
    click_value: float
    click_weight: float
    click_mean: float
    view_value: float
    view_weight: float
    view_mean: float
    total_value: float

    @classmethod
    def build(cls, card_type, click_weight, click_mean, view_weight, view_mean):
        click_value = click_weight * click_mean
        view_value = view_weight * view_mean
        return cls(card_type, click_value, click_weight, click_mean,
                   view_value, view_weight, view_mean, click_value + view_value)


@dataclass(frozen=True)
class CardValueReport:
    query: str
    cards: tuple

    def to_frame(self):
        columns = ["query", "card_type", "click_value", "click_weight", "click_mean",
                   "view_value", "view_weight", "view_mean", "total_value"]
        rows = [(self.query, v.card_type, v.click_value, v.click_weight, v.click_mean,
                 v.view_value, v.view_weight, v.view_mean, v.total_value) for v in self.cards]
        return pd.DataFrame(rows, columns=columns)


def ltl_card_values(model: LtlModel, qpvs) -> CardValueReport:
    """
    Expected credit of each card: weight times the empirical indicator mean
    over the query's QPVs, sorted by total value descending
    """
    n = len(qpvs)
    clicks, views = {}, {}
    for qpv in qpvs:
        for card in qpv.cards:
            clicks[card.card_type] = clicks.get(card.card_type, 0) + int(card.clicked)
            views[card.card_type] = views.get(card.card_type, 0) + int(card.viewed)

    values = [
        CardValue.build(
            card_type,
            model.click_weight[card_type], clicks.get(card_type, 0) / n if n else 0.0,
            model.view_weight[card_type], views.get(card_type, 0) / n if n else 0.0,
        )
        for card_type in model.card_types
    ]
    values.sort(key=lambda v: (-v.total_value, v.card_type))
    return CardValueReport(model.query, tuple(values))


# ==================== FILES ====================

def write_ltl_models(path, models):
    count = write_jsonl(path, (models[q].to_dict() for q in sorted(models)))
    logger.info(f"✅ Wrote {count} credit models to {path}")
    return count


def read_ltl_models(path) -> Dict[str, LtlModel]:
    models = {}
    for record in read_jsonl(path):
        model = LtlModel.from_dict(record)
        models[model.query] = model
    return models


def write_value_reports(path, reports):
    frames = [report.to_frame() for report in reports]
    frame = pd.concat(frames, ignore_index=True) if frames else CardValueReport("", ()).to_frame()
    write_dataframe_tsv(path, frame)
