"""Contracts for every external service the pipeline talks to.

Each provider is a small protocol with an HTTP implementation and a
deterministic mock; the pipeline only ever sees the protocol. Internal chat
calls always run at temperature 0 so pipeline decisions stay reproducible.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from html.parser import HTMLParser
from typing import Protocol

from ..config import ProvidersConfig
from ..errors import ProviderUnreachable, RateLimited


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str


@dataclass
class ChatRequest:
    messages: list[ChatMessage]
    temperature: float = 0.0
    response_schema: str | None = None  # schema id, for providers that enforce it
    max_tokens: int = 1024

    def system_text(self) -> str:
        return "\n".join(m.content for m in self.messages if m.role == "system")

    def last_user_text(self) -> str:
        for message in reversed(self.messages):
            if message.role == "user":
                return message.content
        return ""


@dataclass
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_s: float = 0.0


@dataclass(frozen=True)
class SearchResult:
    url: str
    title: str
    snippet: str
    rank: int  # 1-based engine position


@dataclass
class FetchOutcome:
    status: int
    final_url: str
    body: str  # extracted text; empty for non-2xx
    content_type: str = ""


class ChatProvider(Protocol):
    def complete(self, req: ChatRequest) -> ChatResponse: ...


class Embedder(Protocol):
    def embed(self, texts: list[str]) -> list[list[float]]: ...


class SearchProvider(Protocol):
    def search(self, query: str, limit: int = 10) -> list[SearchResult]: ...


class Fetcher(Protocol):
    def fetch(self, url: str) -> FetchOutcome: ...


class RerankClient(Protocol):
    def rerank(self, query: str, documents: list[str]) -> list[float]: ...


class Clock(Protocol):
    def now(self) -> datetime: ...


class RealClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


@dataclass
class FixedClock:
    """Constant clock for mock runs: identical runs stamp identical times."""

    at: datetime = field(
        default_factory=lambda: datetime(2025, 7, 1, 12, 0, 0, tzinfo=timezone.utc)
    )

    def now(self) -> datetime:
        return self.at


@dataclass
class ProviderSet:
    """Everything external the pipeline needs, bundled for injection."""

    chat: ChatProvider
    embedder: Embedder
    search: SearchProvider
    fetcher: Fetcher
    rerank: RerankClient | None = None
    clock: Clock = field(default_factory=RealClock)


def chat_complete(provider: ChatProvider, req: ChatRequest, cfg: ProvidersConfig) -> ChatResponse:
    """Call the chat provider, retrying transient failures with backoff.

    Rate limits and unreachable endpoints are retried up to cfg.max_retries;
    anything else surfaces immediately.
    """
    delay = cfg.retry_backoff_s
    for attempt in range(cfg.max_retries + 1):
        try:
            return provider.complete(req)
        except (ProviderUnreachable, RateLimited):
            if attempt == cfg.max_retries:
                raise
            if delay > 0:
                time.sleep(delay)
            delay *= 2
    raise AssertionError("unreachable")


class _TextExtractor(HTMLParser):
    _SKIP = {"script", "style", "noscript"}
    _BREAKERS = {"p", "br", "div", "li", "tr", "h1", "h2", "h3", "h4", "h5", "h6"}

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.parts: list[str] = []
        self._skip_depth = 0

    def handle_starttag(self, tag, attrs):
        if tag in self._SKIP:
            self._skip_depth += 1
        elif tag in self._BREAKERS:
            self.parts.append("\n")

    def handle_endtag(self, tag):
        if tag in self._SKIP and self._skip_depth:
            self._skip_depth -= 1
        elif tag in self._BREAKERS:
            self.parts.append("\n")

    def handle_data(self, data):
        if not self._skip_depth:
            self.parts.append(data)


def html_to_text(html: str) -> str:
    """Strip tags, drop script/style bodies, collapse the whitespace."""
    extractor = _TextExtractor()
    extractor.feed(html)
    extractor.close()
    text = "".join(extractor.parts)
    text = re.sub(r"[ \t]+", " ", text)
    text = re.sub(r"\s*\n\s*", "\n", text)
    return text.strip()
