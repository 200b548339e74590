"""Exception hierarchy for the decoding engine.

Everything raised on purpose derives from DecodeError so callers can catch
one base class; the CLI maps ConfigError to exit 1 and ModelError (and its
subclasses) to exit 2.
"""


class DecodeError(Exception):
    """Base class for all engine errors."""


class ConfigError(DecodeError):
    """Invalid or inconsistent configuration."""


class OverlapError(ConfigError):
    """Template spans collide or are mis-ordered."""


class LengthError(ConfigError):
    """Template spans or token lists do not fit the canvas length."""


class LengthMismatch(DecodeError):
    """Sequence/model/answer lengths disagree."""


class EmptyCandidates(DecodeError):
    """A scheduler was called with no candidate positions."""


class NoProgress(DecodeError):
    """The decode loop could not select any position to fill."""


class EmptyData(DecodeError):
    """Training was asked to run on an empty dataset."""


class CapExceeded(DecodeError):
    """An exact enumeration would exceed the configured size cap."""


class SupportMismatch(DecodeError):
    """KL(a || b) is undefined: a has mass where b has none."""

    def __init__(self, message, outcome=None):
        super().__init__(message)
        self.outcome = outcome


class DegenerateConditional(DecodeError):
    """Conditioning event has zero probability; conditionals are undefined."""


class InconsistentTrace(DecodeError):
    """A trace does not replay cleanly against its initial canvas."""


class ModelError(DecodeError):
    """A model call failed."""


class ProtocolError(ModelError):
    """Malformed or invalid frame on the wire protocol."""


class ServerError(ModelError):
    """The remote server reported an error for a request."""


class Timeout(ModelError):
    """The remote server did not answer within the deadline."""
