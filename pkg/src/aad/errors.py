"""Exception hierarchy shared by every stage of the pipeline."""


class AADError(Exception):
    """Base class for recoverable input, format and configuration errors."""


class FormatError(AADError, ValueError):
    """Malformed file header or token stream."""


class LengthError(AADError, ValueError):
    """Payload shorter (or longer) than its header announces."""


class ShapeError(AADError, ValueError):
    """Array or frame dimensions do not agree."""


class InsufficientDataError(AADError, ValueError):
    """Too few frames, samples or points for the requested computation."""


class InputError(AADError, ValueError):
    """Non-finite or otherwise invalid observation."""


class StateError(AADError, RuntimeError):
    """Operation not permitted in the current accumulator state."""


class NoHistoryError(StateError):
    """A probability was requested at a pixel that has no observations."""


class ParseError(AADError, ValueError):
    """A line of a text input could not be parsed.

    Attributes:
        line: 1-based line number of the offending line, when known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RangeError(ParseError):
    """A parsed value lies outside its permitted range."""


class ConfigError(AADError):
    """Invalid or incomplete run configuration."""


class InvariantError(RuntimeError):
    """An internal consistency check failed. Indicates a bug, not bad input."""
