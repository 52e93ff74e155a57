"""Exception taxonomy shared across the pipeline.

Everything raised on purpose derives from :class:`PrihaError` so callers can
distinguish expected pipeline failures from genuine bugs.
"""

from __future__ import annotations


class PrihaError(Exception):
    """Base class for all expected failures."""


# --- corpus ingestion ---------------------------------------------------------


class MissingFrontMatter(PrihaError):
    """File does not begin with a ``---`` front-matter block."""


class MissingField(PrihaError):
    def __init__(self, name: str):
        super().__init__(f"front matter is missing required field {name!r}")
        self.name = name


class BadTier(PrihaError):
    def __init__(self, value: object):
        super().__init__(f"authority_tier must be 0, 1 or 2, got {value!r}")
        self.value = value


class BadDate(PrihaError):
    def __init__(self, value: object):
        super().__init__(f"updated_time is not an ISO-8601 date: {value!r}")
        self.value = value


class EmptyDocument(PrihaError):
    """Document body has no non-whitespace content."""


# --- providers ----------------------------------------------------------------


class ProviderError(PrihaError):
    """Base for provider transport and protocol failures."""


class ProviderUnreachable(ProviderError):
    pass


class RateLimited(ProviderError):
    pass


class ContextTooLong(ProviderError):
    pass


class MalformedModelOutput(ProviderError):
    """Model output failed schema validation even after the repair attempt."""


class NoFixture(ProviderError):
    """A mock provider has no fixture for the request (test-authoring gap)."""


class EmbeddingProviderError(ProviderError):
    def __init__(self, message: str, child_id: str | None = None):
        super().__init__(message)
        self.child_id = child_id


class RerankerUnavailable(ProviderError):
    """External reranker failed; caller should fall back to rank fusion."""


# --- fetching -----------------------------------------------------------------


class FetchError(ProviderError):
    pass


class FetchTimeout(FetchError):
    pass


class DnsFailure(FetchError):
    pass


class TooManyRedirects(FetchError):
    pass


# --- retrieval / rerank -------------------------------------------------------


class UnknownChild(PrihaError):
    def __init__(self, child_id: str):
        super().__init__(f"child chunk {child_id!r} is not in the snapshot")
        self.child_id = child_id


# --- optimizer ----------------------------------------------------------------


class EmptySubQueries(PrihaError):
    """Generalizer produced no usable sub-queries even after repair."""


# --- safelist -----------------------------------------------------------------


class BadLine(PrihaError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason


# --- reconciler ---------------------------------------------------------------


class DanglingCitation(PrihaError):
    def __init__(self, markers: set[int]):
        super().__init__(
            "answer cites markers with no assembled evidence: "
            + ", ".join(f"[{m}]" for m in sorted(markers))
        )
        self.markers = markers


# --- pipeline / sessions ------------------------------------------------------


class PipelineFailed(PrihaError):
    """Both retrieval channels failed in dual mode."""


class SessionNotFound(PrihaError):
    def __init__(self, session_id: str):
        super().__init__(f"unknown session {session_id!r}")
        self.session_id = session_id


class CorruptSession(PrihaError):
    def __init__(self, session_id: str, reason: str):
        super().__init__(f"session {session_id!r} could not be loaded: {reason}")
        self.session_id = session_id


# --- eval harness -------------------------------------------------------------


class DuplicateId(PrihaError):
    def __init__(self, qa_id: str):
        super().__init__(f"duplicate dataset id {qa_id!r}")
        self.qa_id = qa_id


class NoScoredRows(PrihaError):
    """Every row in the evaluation run is missing judge scores."""
