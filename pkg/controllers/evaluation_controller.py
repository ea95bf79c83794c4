"""
Exact-match evaluation and query-grouped cross-validation

A logged ranking counts as matched only when the predicted card tuple equals
it element for element. Matching satisfied (positive) rankings is rewarded,
matching reformulated (negative) rankings is penalized.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np
import pandas as pd
from tqdm import tqdm

from controllers.labeling_controller import derive_labels
from controllers.ranking_controller import (
    build_feature_index,
    build_out_of_query_training_set,
    build_training_set,
    predict_qpvs,
)
from models.label_model import Strategy
from models.qpv_model import canonical_order, card_universe
from models.store import write_dataframe_tsv, write_json
from utils.errors import EvaluationError
from utils.gbt import GbtConfig, fit_gbt
from utils.helpers import resolve_workers, stable_bucket
from utils.ltl import fit_all

logger = logging.getLogger(__name__)

ORACLE = "oracle"


@dataclass(frozen=True)
class MetricsReport:
    tpr: float
    tnr: float
    f_measure: float
    n_positive: int
    n_negative: int
    matched_positive: int
    matched_negative: int

    @classmethod
    def from_counts(cls, n_positive, n_negative, matched_positive, matched_negative):
        tpr = matched_positive / n_positive if n_positive else 0.0
        tnr = matched_negative / n_negative if n_negative else 0.0
        return cls(tpr, tnr, f_measure(tpr, tnr), n_positive, n_negative, matched_positive, matched_negative)

    @property
    def degenerate(self):
        return self.n_positive == 0 or self.n_negative == 0

    def to_dict(self):
        return asdict(self)


def f_measure(tpr, tnr):
    """Harmonic mean of TPR and 1 - TNR; 0 when both are 0"""
    miss = 1.0 - tnr
    denominator = tpr + miss
    if denominator == 0:
        return 0.0
    return 2.0 * tpr * miss / denominator


def evaluate(predictions, qpvs) -> MetricsReport:
    """
    Args:
        predictions: dict qpv_id -> PredictedRanking
        qpvs: evaluation QPVs

    Raises:
        EvaluationError: a QPV has no prediction
    """
    counts = {"n_positive": 0, "n_negative": 0, "matched_positive": 0, "matched_negative": 0}
    for qpv in qpvs:
        predicted = predictions.get(qpv.qpv_id)
        if predicted is None:
            raise EvaluationError(f"no prediction for qpv {qpv.qpv_id!r}")
        matched = tuple(predicted.ranking) == qpv.ranking
        side = "negative" if qpv.reformulated else "positive"
        counts[f"n_{side}"] += 1
        counts[f"matched_{side}"] += int(matched)
    return MetricsReport.from_counts(**counts)


# ==================== CROSS-VALIDATION ====================

@dataclass(frozen=True)
class CvConfig:
    num_folds: int = 5
    split_key: str = "by_query"
    seed: int = 0
    out_of_query: bool = True

    def __post_init__(self):
        if self.num_folds < 2:
            raise EvaluationError(f"num_folds must be >= 2, got {self.num_folds}")
        if self.split_key != "by_query":
            raise EvaluationError(f"unsupported split key {self.split_key!r}")


@dataclass
class FoldResult:
    fold: int
    num_train_qpvs: int
    num_test_qpvs: int
    metrics: MetricsReport
    trained: bool = True

    def to_dict(self):
        return {"fold": self.fold, "num_train_qpvs": self.num_train_qpvs,
                "num_test_qpvs": self.num_test_qpvs, "trained": self.trained, **self.metrics.to_dict()}


@dataclass
class CvReport:
    method: str
    num_folds: int
    seed: int
    folds: List[FoldResult] = field(default_factory=list)

    def _values(self, name):
        return np.array([getattr(f.metrics, name) for f in self.folds], dtype=float)

    @property
    def summary(self):
        result = {}
        for name in ("tpr", "tnr", "f_measure"):
            values = self._values(name)
            result[f"mean_{name}"] = float(values.mean()) if values.size else 0.0
            result[f"std_{name}"] = float(values.std()) if values.size else 0.0
        return result

    def to_dict(self):
        return {
            "method": self.method,
            "num_folds": self.num_folds,
            "seed": self.seed,
            "folds": [f.to_dict() for f in self.folds],
            "summary": self.summary,
        }

    def comparison_row(self):
        summary = self.summary
        return {"Method": self.method.upper(), "TPR": summary["mean_tpr"], "TNR": summary["mean_tnr"],
                "1-TNR": 1.0 - summary["mean_tnr"], "F": summary["mean_f_measure"]}


def fold_of(query, cv_config):
    return stable_bucket(query, cv_config.num_folds, cv_config.seed)


def split_folds(qpvs, cv_config):
    """List of (train, test) QPV lists, one pair per fold; no query is on both sides"""
    assignment = [fold_of(q.query, cv_config) for q in qpvs]
    return [
        ([q for q, f in zip(qpvs, assignment) if f != k], [q for q, f in zip(qpvs, assignment) if f == k])
        for k in range(cv_config.num_folds)
    ]


def _warn_degenerate(method, fold, metrics):
    if metrics.degenerate:
        logger.warning(f"⚠️ {method} fold {fold}: {metrics.n_positive} positive / {metrics.n_negative} "
                       f"negative QPVs; empty sides score 0")


def _untrained_fold(fold, train, test, method):
    """A fold whose training side produced no labels matches nothing"""
    logger.warning(f"⚠️ {method} fold {fold}: training folds produced no labels; fold scores 0")
    n_positive = sum(1 for q in test if not q.reformulated)
    metrics = MetricsReport.from_counts(n_positive, len(test) - n_positive, 0, 0)
    return FoldResult(fold, len(train), len(test), metrics, trained=False)


def _run_fold(fold, train, test, strategy, gbt_config, cv_config, options):
    labels_kwargs = {
        "movement_config": options.get("movement_config"),
        "combine": True,
        "judgments": options.get("judgments"),
    }
    if strategy is Strategy.LTL:
        labels_kwargs["ltl_models"] = fit_all(train, options.get("fit_config"), workers=1)
    labels = derive_labels(strategy, train, **labels_kwargs)
    if strategy is Strategy.HUMAN:
        labels = [label for label in labels if label.card_type in options["universe"]]
    if not labels:
        return _untrained_fold(fold, train, test, strategy.value)

    universe, smoothing = options["universe"], options.get("smoothing", 1.0)
    index = build_feature_index(train, universe=universe, smoothing=smoothing)
    index.assert_disjoint(test)

    if cv_config.out_of_query:
        data = build_out_of_query_training_set(labels, train, universe, smoothing, num_groups=cv_config.num_folds,
                                               seed=cv_config.seed, scenario=strategy.scenario, collapse=True)
    else:
        data = build_training_set(labels, index, strategy.scenario, collapse=True)
    if data.num_rows == 0:
        return _untrained_fold(fold, train, test, strategy.value)
    model = fit_gbt(data, gbt_config)

    predictions = predict_qpvs(model, index, test, strategy.scenario)
    return FoldResult(fold, len(train), len(test), evaluate(predictions, test))


def cross_validate(qpvs, strategy, gbt_config=None, cv_config=None, *, movement_config=None, fit_config=None,
                   judgments=None, smoothing=1.0, workers=None, progress=False) -> CvReport:
    """
    k-fold cross-validation of one labeling strategy

    Labels, feature statistics and credit models come from the training
    folds only; each held-out QPV is ranked from the cards it showed.
    """
    strategy = Strategy.parse(strategy) if not isinstance(strategy, Strategy) else strategy
    gbt_config = gbt_config or GbtConfig()
    cv_config = cv_config or CvConfig()
    if not qpvs:
        raise EvaluationError("cannot cross-validate an empty log")

    qpvs = canonical_order(qpvs)
    options = {
        "movement_config": movement_config,
        "fit_config": fit_config,
        "judgments": judgments,
        "smoothing": smoothing,
        "universe": card_universe(qpvs),
    }
    folds = split_folds(qpvs, cv_config)

    def run(k):
        train, test = folds[k]
        return _run_fold(k, train, test, strategy, gbt_config, cv_config, options)

    with ThreadPoolExecutor(max_workers=min(resolve_workers(workers), cv_config.num_folds)) as pool:
        results = list(tqdm(pool.map(run, range(cv_config.num_folds)), total=cv_config.num_folds,
                            desc=strategy.value, unit="fold", disable=not progress))

    report = CvReport(strategy.value, cv_config.num_folds, cv_config.seed, results)
    for result in results:
        _warn_degenerate(strategy.value, result.fold, result.metrics)
    logger.info(f"📊 {strategy.value}: mean F {report.summary['mean_f_measure']:.4f} "
                f"over {cv_config.num_folds} folds")
    return report


def cross_validate_oracle(qpvs, truth, cv_config=None) -> CvReport:
    """Same folds, ranked by the generator's true relevance"""
    from synth.log_generator import oracle_ranking

    cv_config = cv_config or CvConfig()
    qpvs = canonical_order(qpvs)
    report = CvReport(ORACLE, cv_config.num_folds, cv_config.seed)
    for k, (train, test) in enumerate(split_folds(qpvs, cv_config)):
        predictions = {q.qpv_id: oracle_ranking(truth, q.query, q.ranking) for q in test}
        metrics = evaluate(predictions, test)
        _warn_degenerate(ORACLE, k, metrics)
        report.folds.append(FoldResult(k, len(train), len(test), metrics))
    return report


# ==================== REPORTS ====================

def write_cv_report(path, reports):
    """One report object, or a list of them under "methods" when an oracle row rides along"""
    if len(reports) == 1:
        write_json(path, reports[0].to_dict())
    else:
        write_json(path, {"methods": [r.to_dict() for r in reports]})


def comparison_frame(reports) -> pd.DataFrame:
    return pd.DataFrame([r.comparison_row() for r in reports], columns=["Method", "TPR", "TNR", "1-TNR", "F"])


def write_comparison_tsv(path, reports):
    write_dataframe_tsv(path, comparison_frame(reports))
