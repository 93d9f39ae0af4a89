"""Exception hierarchy shared across the package.

CLI exit-code mapping: ValidationError (and subclasses) -> 1,
PartialDataError -> 2, anything else -> 3.
"""

from __future__ import annotations


class CapevalError(Exception):
    """Base class for all package errors."""


class ValidationError(CapevalError):
    """Input data or configuration violates a documented contract."""


class InsufficientAnnotationsError(ValidationError):
    """Fewer raw judgments than the configured minimum for a sample."""


class DegenerateInputError(ValidationError):
    """Rank statistic is undefined for the given vectors (e.g. all tied)."""


class DuplicateKeyError(ValidationError):
    """Two records or samples share a key that must be unique."""


class DimensionMismatchError(ValidationError):
    """Vector or matrix dimensions disagree with the configured sizes."""


class StoreFormatError(ValidationError):
    """Embedding file violates the binary layout (magic, version, payload)."""


class MissingRecordError(CapevalError, KeyError):
    """Lookup miss in an embedding store; distinct from validation failures."""


class CheckpointError(ValidationError):
    """Checkpoint file is malformed or incompatible with the configuration."""


class TransportError(CapevalError):
    """Embedding service unreachable after the configured retries."""


class ProtocolError(CapevalError):
    """Embedding service returned a malformed or inconsistent response."""


class PartialDataError(CapevalError):
    """A command completed partially; some samples could not be processed.

    Carries the per-sample failure descriptions so callers can report them.
    """

    def __init__(self, message: str, failures: list[str]):
        super().__init__(message)
        self.failures = failures
