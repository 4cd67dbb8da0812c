"""Exception hierarchy shared across the package.

Everything raised on purpose derives from MaglevError so callers (and the
CLI exit-code mapping) can distinguish our failures from genuine bugs.
"""


class MaglevError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MaglevError):
    """Operand shapes are incompatible with the requested operation."""


class ArcIndexError(MaglevError):
    """A row/arc index points outside the table it indexes."""


class LabelError(MaglevError):
    """A class label is outside [0, num_classes)."""


class BatchError(MaglevError):
    """A batch cannot be formed or contains nothing usable."""


class GraphIntegrityError(MaglevError):
    """An arc or node insertion violates graph structure rules."""


class DuplicateNodeError(GraphIntegrityError):
    """A (take, view, segment, type) key was inserted twice."""


class GraphValidationError(MaglevError):
    """Finalize-time validation failed; `violations` lists every problem."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(
            "graph validation failed:\n" + "\n".join(f"  - {v}" for v in self.violations)
        )


class IngestionError(MaglevError):
    """Input data (files or records) is missing or malformed."""


class EmptyTakeError(IngestionError):
    """A take with zero segments cannot produce a graph."""


class FormatError(MaglevError):
    """A serialized container is corrupt or has the wrong magic/version."""


class ConfigError(MaglevError):
    """A configuration value or model/graph combination is invalid."""


class TrainingError(MaglevError):
    """The training loop cannot proceed (e.g. no labeled nodes)."""


class MetricError(MaglevError):
    """A metric is undefined for the given inputs (e.g. empty eval set)."""


class SplitError(MaglevError):
    """A cross-validation split cannot be constructed."""
