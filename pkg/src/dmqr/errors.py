"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class DmqrError(Exception):
    """Base class for every error raised by this package."""


class EmptyQuery(DmqrError, ValueError):
    pass


class DuplicateStrategy(DmqrError, ValueError):
    pass


class UnknownStrategy(DmqrError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown strategy"


class EmptyDocument(DmqrError, ValueError):
    pass


class MissingPlaceholder(DmqrError, KeyError):
    def __init__(self, name: str) -> None:
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"missing binding for placeholder {{{self.name}}}"


class ParseFailure(DmqrError):
    """LLM output could not be turned into a usable value."""

    def __init__(self, message: str, raw: str = "") -> None:
        super().__init__(message)
        self.raw = raw


# Transport-level errors. Shared by the LLM gateway, the remote search client
# and the remote reranker client.


class ServiceError(DmqrError):
    pass


class TransportError(ServiceError):
    pass


class AuthError(ServiceError):
    pass


class BadRequest(ServiceError):
    pass


class RateLimited(ServiceError):
    def __init__(self, message: str, retry_after: float | None = None) -> None:
        super().__init__(message)
        self.retry_after = retry_after


class EmptyCompletion(ServiceError):
    pass


class ProtocolError(ServiceError):
    """The remote side answered, but not in the agreed wire format."""


class ConfigError(DmqrError):
    pass


# Retrieval


class IndexMissing(DmqrError):
    pass


class EmptyCorpus(DmqrError, ValueError):
    pass


class DuplicateDocId(DmqrError, ValueError):
    pass


class PipelineError(DmqrError):
    """Hard failure that aborts a pipeline run."""
