"""Exception hierarchy for the adaptation engine and its file formats."""


class CrgError(Exception):
    """Base class for every error raised by this package."""


class DegenerateVector(CrgError):
    """A vector (or matrix row) with zero norm where a direction is required.

    ``rows`` carries the offending row indices when the source was a matrix.
    """

    def __init__(self, message: str, rows: tuple[int, ...] = ()):
        super().__init__(message)
        self.rows = tuple(rows)


class NumericalError(CrgError):
    """Non-finite values or a failed factorization in a numeric routine."""


class InvalidDistribution(CrgError):
    """A probability vector violating non-negativity or normalization."""


class ConfigMismatch(CrgError):
    """Configuration values or shapes inconsistent with each other."""


class FilterEmpty(CrgError):
    """View filtering left nothing to aggregate."""


class InvalidInput(CrgError):
    """An argument outside an operation's domain (empty list, bad count)."""


class InternalInvariantViolation(CrgError):
    """A state invariant the engine itself is supposed to maintain broke."""


class FormatError(CrgError):
    """Malformed manifest or binary block.

    ``offset`` is the byte position of the corrupt record when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class VersionError(FormatError):
    """A file with a recognized magic but an unsupported version."""
