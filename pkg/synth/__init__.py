"""
Synthetic QPV log generator with ground-truth relevance
"""

from .log_generator import WorldConfig, GroundTruth, build_world, generate_log, oracle_ranking

__all__ = [
    'WorldConfig',
    'GroundTruth',
    'build_world',
    'generate_log',
    'oracle_ranking',
]
