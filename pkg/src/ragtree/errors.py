"""Exception types shared across the package."""

from __future__ import annotations


class RagTreeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(RagTreeError):
    """Invalid configuration, or a non-retryable (4xx) backend response."""


class BackendUnavailable(RagTreeError):
    """A backend could not be reached after exhausting retries."""


class NodeExpansionFailed(RagTreeError):
    """Every candidate for a tree layer was malformed; the question is abandoned.

    Carries enough context for the batch manifest to record a useful
    per-question failure.
    """

    def __init__(self, question_id: str, layer: int, reason: str):
        super().__init__(f"question {question_id!r}, layer {layer}: {reason}")
        self.question_id = question_id
        self.layer = layer
        self.reason = reason


class ExportError(RagTreeError):
    """A snapshot cannot yield the requested training records."""


class DatasetError(RagTreeError):
    """A dataset file failed validation."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
