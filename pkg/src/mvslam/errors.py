"""Exception types shared across the package."""


class SlamError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SlamError, ValueError):
    pass


class EstimationFailed(SlamError):
    """A robust estimator could not produce a model (too few or degenerate inputs)."""


class AlignmentFailed(SlamError):
    pass


class InsufficientData(SlamError, ValueError):
    pass


class OutOfBounds(SlamError, IndexError):
    pass


class ConfigError(SlamError):
    """Invalid configuration. The CLI maps this to exit code 2."""


class DataError(SlamError):
    """Unreadable or inconsistent dataset content. The CLI maps this to exit code 3."""


class FormatError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None, source=None):
        self.message = message
        self.line = line
        self.source = source
        text = message if line is None else f"line {line}: {message}"
        if source is not None:
            text = f"{source}: {text}"
        super().__init__(text)
