"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible, non-broadcastable, or indivisible shapes."""


class ConfigError(ValueError):
    """Invalid configuration file, unknown key, or bad option value."""


class SingularSystemError(RuntimeError):
    """The spline system could not be solved even after diagonal jitter."""


class CheckpointError(RuntimeError):
    """Base class for checkpoint persistence failures."""


class CorruptCheckpointError(CheckpointError):
    """Checkpoint bytes fail the integrity checksum or are truncated."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written with an unsupported schema version."""


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN or infinite loss value."""


class EvaluationError(ValueError):
    """Evaluation inputs are empty or have mismatched file sets."""
