"""Exception hierarchy shared by every fedmm module.

CLI exit codes: ConfigError -> 2, DataError (and subclasses) -> 3,
everything else below -> 4.
"""


class FedmmError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(FedmmError):
    """Invalid experiment configuration (bad key, bad value, bad layer spec)."""


class DataError(FedmmError):
    """Dataset-level problem: empty split, bad label, missing modality rows."""


class ParseError(DataError):
    """Malformed feature CSV; message carries file and line number."""


class ShapeError(FedmmError):
    """Dimension mismatch between tensors, layers, or parameter trees."""


class AggregationError(FedmmError):
    """Server-side aggregation cannot proceed (no reporters, bad weights)."""


class ProtocolError(FedmmError):
    """Federation protocol contract violated (mask, prototype, or round rule)."""


class NumericError(FedmmError):
    """Non-finite value where finiteness was promised."""


class MetricError(FedmmError):
    """Metric precondition violated (empty input, single-class labels)."""
