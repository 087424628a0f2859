"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class CkmaError(Exception):
    """Base class for all errors raised by this package."""


class MinigraphParseError(CkmaError):
    """The minigraph JSON payload is malformed or misses a required key."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{message} (at {path})")
        self.path = path


class MinigraphValidationError(CkmaError):
    """Raised by strict validation when a candidate relation is rejected."""

    def __init__(self, index: int, reason: str):
        super().__init__(f"relation #{index} rejected: {reason}")
        self.index = index
        self.reason = reason


class BackendError(CkmaError):
    """Any failure while talking to a completion backend."""


class BackendConfigError(BackendError):
    pass


class TransportError(BackendError):
    """Network failure or retryable status that survived every retry."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class RequestError(BackendError):
    """Non-retryable HTTP status (4xx other than 429)."""

    def __init__(self, status: int, body: str):
        super().__init__(f"HTTP {status}: {body}")
        self.status = status
        self.body = body


class ScriptExhaustedError(BackendError):
    pass


class ExtractionError(CkmaError):
    """No balanced JSON object could be recovered from a completion."""

    def __init__(self, message: str, excerpt: str):
        super().__init__(f"{message}; text starts with: {excerpt!r}")
        self.excerpt = excerpt


class ContextOverflowError(CkmaError):
    def __init__(self, length: int, limit: int, longest_reference: str | None):
        super().__init__(
            f"rendered prompt has {length} chars, limit is {limit}"
            f" (longest abstract: {longest_reference})"
        )
        self.length = length
        self.limit = limit
        self.longest_reference = longest_reference


class StageError(CkmaError):
    """Wraps a failure with the pipeline stage and item index it happened in."""

    def __init__(self, stage: str, index: int | None, cause: BaseException):
        where = stage if index is None else f"{stage}[{index}]"
        super().__init__(f"{where}: {cause}")
        self.stage = stage
        self.index = index
        self.cause = cause


class CorpusError(CkmaError):
    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class EvaluationError(CkmaError):
    pass
