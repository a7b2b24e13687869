"""Exception hierarchy shared across the package."""


class AvatarKitError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(AvatarKitError, ValueError):
    """Invalid argument values, shapes, or mismatched dimensions."""


class ConfigurationError(AvatarKitError):
    """Invalid, incomplete, or contradictory configuration."""


class LoadError(AvatarKitError):
    """An asset file failed to parse or validate."""


class FitError(AvatarKitError):
    """Landmark fitting cannot proceed (degenerate input)."""


class AttachmentError(AvatarKitError):
    """Component cannot be attached to the rig (duplicate id, mode clash)."""


class OracleError(AvatarKitError):
    """A guidance-oracle call failed."""

    def __init__(self, message: str, *, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class StageError(AvatarKitError):
    """A pipeline stage failed; carries context to resume where it stopped."""

    def __init__(self, message: str, *, stage: str | None = None, view: int | None = None):
        super().__init__(message)
        self.stage = stage
        self.view = view


class PrerequisiteError(StageError):
    """A stage ran before the stage it depends on."""


class NumericError(AvatarKitError):
    """Optimization produced non-finite values; diagnostics attached."""

    def __init__(self, message: str, *, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
