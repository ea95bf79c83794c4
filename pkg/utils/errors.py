"""
Error hierarchy for the card ranking toolkit.

Library code raises these; only the command-line layer turns them into exit
codes (1 for usage problems, 2 for data problems).
"""


class QpvRankError(RuntimeError):
    """Base class for every error raised by the toolkit."""

    exit_code = 2

    def __init__(self, message, *, hint=None):
        super().__init__(message)
        self.message = message
        self.hint = hint


class UsageError(QpvRankError):
    """Bad flags, unknown subcommand, unreadable config file."""

    exit_code = 1


class DataError(QpvRankError):
    """The input data cannot be processed."""

    exit_code = 2


class QpvParseError(DataError):
    """A log line is not a well-formed QPV record."""

    def __init__(self, line_number, reason):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


class QpvValidationError(DataError):
    """A QPV record breaks one of its invariants."""

    def __init__(self, qpv_id, reason, line_number=None):
        where = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{where}qpv {qpv_id!r} rejected: {reason}")
        self.qpv_id = qpv_id
        self.reason = reason
        self.line_number = line_number


class SessionOrderError(DataError):
    """Two QPVs of one session share a timestamp."""


class JudgmentParseError(DataError):
    """A human-judgment line cannot be read."""

    def __init__(self, line_number, reason):
        super().__init__(f"judgments line {line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


class LabelError(DataError):
    """Label streams that cannot be combined or written."""


class LtlFitError(DataError):
    """Learning-to-label fit cannot run on the given QPVs."""


class GbtError(DataError):
    """Boosted tree training or prediction failure."""


class RankingError(DataError):
    """Feature extraction or ranking failure."""


class LeakageError(RankingError):
    """A feature index was built from QPVs that are being evaluated."""


class EvaluationError(DataError):
    """Metrics cannot be computed for the given predictions."""


class SynthConfigError(DataError):
    """The synthetic world configuration is infeasible."""
