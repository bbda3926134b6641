"""Exception hierarchy shared across the package."""


class SeqSurrogateError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(SeqSurrogateError):
    """Invalid configuration, arguments, or input files (user error)."""


class ShapeMismatchError(SeqSurrogateError):
    """Array operands with incompatible or inconsistent shapes."""


class NonFiniteError(SeqSurrogateError):
    """A NaN or infinity appeared where only finite values are allowed."""


class SingularSystemError(SeqSurrogateError):
    """Linear system with a zero pivot; carries the offending index."""

    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"singular tridiagonal system: zero pivot at index {index}")


class FormatVersionError(SeqSurrogateError):
    """A persisted file declares an unsupported format version."""


class MalformedFileError(SeqSurrogateError):
    """A persisted file cannot be parsed or lacks required fields."""
