"""
Exception hierarchy for the continual-learning engine.

Every error raised on purpose by ``apps.continual`` derives from
``ContinualError`` so management commands can map failures to exit codes
without catching unrelated bugs.
"""


class ContinualError(Exception):
    """Base class for engine errors."""


class ConfigurationError(ContinualError, ValueError):
    """Invalid experiment, predictor or generator configuration."""


class InputError(ContinualError, ValueError):
    """Data that violates an operation's preconditions."""


class InternalError(ContinualError, RuntimeError):
    """Inconsistent internal state, e.g. parameter vectors of different length."""


class UndefinedMetricError(ContinualError, ValueError):
    """A metric requested where it is not defined (BWT before the 2nd task)."""


class CheckpointError(ContinualError):
    """Checkpoint could not be read, is corrupt, or has an unsupported version."""
