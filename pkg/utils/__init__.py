"""
Utilities package: error types and numeric helpers
"""

from .errors import QpvRankError, UsageError, DataError
from .helpers import rank_discount, dcg, logistic, stable_bucket

__all__ = [
    'QpvRankError',
    'UsageError',
    'DataError',
    'rank_discount',
    'dcg',
    'logistic',
    'stable_bucket',
]
