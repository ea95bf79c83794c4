"""
Controllers package: statistics, labeling, ranking and evaluation pipelines
"""

from .stats_controller import StatsReport, compute_stats
from .labeling_controller import derive_labels, import_human_judgments
from .ranking_controller import (
    FeatureIndex,
    RankRequest,
    PredictedRanking,
    build_feature_index,
    extract_features,
    build_training_set,
    build_out_of_query_training_set,
    rank_pointwise,
    rank_listwise,
    admissible_lists,
    predict_qpvs,
)
from .evaluation_controller import MetricsReport, CvConfig, evaluate, cross_validate

__all__ = [
    'StatsReport',
    'compute_stats',
    'derive_labels',
    'import_human_judgments',
    'FeatureIndex',
    'RankRequest',
    'PredictedRanking',
    'build_feature_index',
    'extract_features',
    'build_training_set',
    'build_out_of_query_training_set',
    'rank_pointwise',
    'rank_listwise',
    'admissible_lists',
    'predict_qpvs',
    'MetricsReport',
    'CvConfig',
    'evaluate',
    'cross_validate',
]
