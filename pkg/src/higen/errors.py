"""Exception hierarchy shared across the package."""

from __future__ import annotations


class HigenError(Exception):
    """Base class for every error raised by this package."""


class DatasetError(HigenError):
    """Malformed dataset file or record (carries file/line context in the message)."""


class ConfigError(HigenError):
    """Invalid or incomplete experiment configuration."""


class RenderError(HigenError):
    """A template placeholder could not be filled."""


class ParseError(HigenError):
    """A structured model output did not match the expected scaffold."""


class EndpointError(HigenError):
    """Non-retryable HTTP failure from the inference endpoint."""

    def __init__(self, status: int, body_excerpt: str = ""):
        self.status = status
        self.body_excerpt = body_excerpt
        super().__init__(f"endpoint returned HTTP {status}: {body_excerpt}")


class TransportError(HigenError):
    """Retries exhausted on transient failures (timeouts, 429, 5xx)."""


class OversizeError(HigenError):
    """The backend rejected a request for exceeding its context window."""

    def __init__(self, message: str, doc_id: str | None = None):
        self.doc_id = doc_id
        if doc_id:
            message = f"{message} (document {doc_id})"
        super().__init__(message)


class CapabilityError(HigenError):
    """The backend lacks a required capability (e.g. echoed token logprobs)."""


class SeamAlignmentError(HigenError):
    """The context/continuation boundary could not be aligned to a token boundary."""


class DomainError(HigenError):
    """A value outside the mathematical domain of an operation."""


class AttributionError(HigenError):
    """Attribution failed (scoring error or too few usable ablation samples)."""


class ReportError(HigenError):
    """Result aggregation could not proceed (e.g. empty document join)."""
