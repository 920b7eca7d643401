"""Exception taxonomy shared across the toolkit."""


class FaithevalError(Exception):
    """Base class for all toolkit errors."""


class InvalidInput(FaithevalError):
    """A precondition on user-supplied data or arguments was violated."""


class OracleError(FaithevalError):
    """The prediction/gradient oracle failed or returned an error."""


class OracleTimeout(OracleError):
    """No response from the oracle within the configured timeout."""


class ProtocolError(OracleError):
    """Malformed or inconsistent traffic on the oracle wire protocol."""

    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class AlignmentError(FaithevalError):
    """Tokens could not be reconciled with the word sequence."""


class EmptyExplanation(FaithevalError):
    """Explanation attribution requested for an empty generation."""


class IngestError(FaithevalError):
    """A record in an input file failed validation."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
