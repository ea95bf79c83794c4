"""
Models package: QPV log records, label records and file persistence
"""

from .qpv_model import (
    CardObservation,
    QPV,
    ReformulationPair,
    parse_qpv_log,
    serialize_qpv_log,
    read_qpv_log,
    chain_sessions,
)
from .label_model import (
    Strategy,
    Scenario,
    CardLabel,
    PairLabel,
    ListLabel,
    MovementConfig,
)

__all__ = [
    'CardObservation',
    'QPV',
    'ReformulationPair',
    'parse_qpv_log',
    'serialize_qpv_log',
    'read_qpv_log',
    'chain_sessions',
    'Strategy',
    'Scenario',
    'CardLabel',
    'PairLabel',
    'ListLabel',
    'MovementConfig',
]
