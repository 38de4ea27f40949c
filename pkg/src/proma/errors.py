"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the operation."""


class InputError(ValueError):
    """Operand values are invalid (non-finite entries, out-of-range tokens)."""


class ConfigError(ValueError):
    """A run configuration could not be loaded or validated."""


class NumericalAbort(RuntimeError):
    """Training produced a non-finite quantity and was stopped.

    ``dump`` holds whatever state was available at the point of failure.
    """

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}
