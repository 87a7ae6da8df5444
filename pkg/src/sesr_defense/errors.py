"""Exception types shared across the package."""


class SesrError(Exception):
    """Base class for all package errors."""


class DimensionError(SesrError, ValueError):
    """A tensor has the wrong extent along some axis."""

    def __init__(self, message: str, axis: str | None = None):
        super().__init__(message if axis is None else f"{message} (axis: {axis})")
        self.axis = axis


class ConfigurationError(SesrError, ValueError):
    """Invalid hyperparameters or unsupported configuration."""


class UnsupportedConfigurationError(ConfigurationError):
    pass


class StructuralError(SesrError, ValueError):
    """A network description is malformed for the requested operation."""


class InvalidResidualError(StructuralError):
    pass


class StateError(SesrError, RuntimeError):
    """A backward pass was requested with a cache that does not match."""


class TrainingDivergedError(SesrError, RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class FormatError(SesrError, ValueError):
    """Malformed weight / image / description file."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} at byte offset {offset}"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(FormatError):
    pass


class DescriptionSyntaxError(FormatError):
    """Parse failure in a text network description."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line
