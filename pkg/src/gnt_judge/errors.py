"""Exception types shared across the harness."""

from __future__ import annotations


class GntJudgeError(Exception):
    """Base class for all errors raised by this package."""


class DataFormatError(GntJudgeError):
    """A data file (corpus, hypotheses, records) violates its format contract."""


class ConfigError(GntJudgeError):
    """A configuration value, asset, or call precondition is invalid."""


class SchemaViolation(GntJudgeError):
    """A raw judge payload failed strict validation.

    Carries the path of the first violation (e.g. ``phrases[2].assessment``)
    and a human-readable reason.
    """

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}" if path else reason)


class BackendFailure(GntJudgeError):
    """A judge backend call failed (network error, bad status, timeout).

    ``retryable`` drives the retry policy; ``status`` is the HTTP status
    code when one was received.
    """

    def __init__(self, message: str, *, retryable: bool, status: int | None = None):
        self.retryable = retryable
        self.status = status
        super().__init__(message)
