"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or violated precondition."""

    def __init__(self, message, field=None):
        self.field = field
        self.message = message
        if field is not None and field not in message:
            message = f"{field}: {message}"
        super().__init__(message)


class ShapeError(ValueError):
    pass


class IngestionError(ValueError):
    pass


class DegenerateScaleError(ValueError):
    pass


class InsufficientLabelsError(ValueError):
    pass


class ContractError(RuntimeError):
    """An API contract between cooperating calls was broken (e.g. stale cache)."""


class NonFiniteError(FloatingPointError):
    """A loss, gradient or prediction became NaN or infinite."""
