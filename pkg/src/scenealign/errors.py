"""Exception hierarchy shared across the package."""


class SceneAlignError(Exception):
    """Base class for all package errors."""


class ConfigError(SceneAlignError):
    """Invalid or degenerate configuration."""


class DatasetError(SceneAlignError):
    """Dataset directory missing, unreadable, or structurally broken."""


class ValidationError(SceneAlignError):
    """A record or domain object violates an invariant or cross-reference."""


class InputError(SceneAlignError):
    """An operation received an argument outside its contract."""


class NumericError(SceneAlignError):
    """Non-finite values or numerically degenerate state."""


class CheckpointError(SceneAlignError):
    """Checkpoint missing, corrupt, or fingerprint mismatch."""
