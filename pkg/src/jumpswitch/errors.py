class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""

    category = "validation"


class FormatError(ValueError):
    """Raised when a persisted file is truncated, corrupt or inconsistent."""

    category = "format"


class TrainingError(RuntimeError):
    """Raised when training diverges (non-finite loss)."""

    category = "training"
