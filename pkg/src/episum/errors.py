"""Exception types shared across the package."""


class EpisumError(Exception):
    """Base class for all errors raised by episum."""


class ParseError(EpisumError, ValueError):
    """A file could not be decoded.

    ``offset`` is the byte offset where decoding failed and ``field`` the
    name (or path) of the offending field, when known.
    """

    def __init__(self, message, offset=None, field=None):
        self.offset = offset
        self.field = field
        where = []
        if offset is not None:
            where.append(f"byte {offset}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class InvariantError(EpisumError, ValueError):
    """A value violates a documented structural invariant."""


class GenerationError(EpisumError, RuntimeError):
    """An environment generator could not produce a valid episode."""


class ConvergenceError(EpisumError, RuntimeError):
    """A numerical routine failed to converge or produced non-finite output."""
