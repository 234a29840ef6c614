"""
Exception hierarchy for the toolkit.

Every exception the command-line layer can surface derives from TbqkdError and
carries the process exit code that represents it.
"""


class TbqkdError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class DomainError(TbqkdError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(TbqkdError):
    """A run configuration failed to parse or validate."""

    exit_code = 2


class FileFormatError(TbqkdError):
    """A file is malformed, truncated or could not be read or written."""

    exit_code = 3


class ProtocolAbort(TbqkdError):
    """A post-processing session was aborted."""

    exit_code = 4

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class NoKeyError(TbqkdError):
    """The input statistics do not allow any secret key."""

    exit_code = 5


class DecodeFailure(TbqkdError):
    """Syndrome decoding did not converge to the remote syndrome."""

    def __init__(self, message: str, reliability=None):
        super().__init__(message)
        self.reliability = reliability


class LdpcConstructionError(TbqkdError):
    """A parity-check matrix with the requested structure could not be built."""


class DegenerateBlockError(DomainError):
    """A block of centroids has zero variance, so r0 would be infinite."""


class FrameError(ProtocolAbort):
    """A wire frame failed to decode (magic, version, length or CRC)."""
