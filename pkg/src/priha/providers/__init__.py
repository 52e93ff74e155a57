"""Provider contracts, HTTP implementations and deterministic mocks."""

from .base import (
    ChatMessage,
    ChatProvider,
    ChatRequest,
    ChatResponse,
    Clock,
    Embedder,
    FetchOutcome,
    Fetcher,
    FixedClock,
    ProviderSet,
    RealClock,
    RerankClient,
    SearchProvider,
    SearchResult,
    chat_complete,
    html_to_text,
)
from .mock import (
    MockChatProvider,
    MockEmbedder,
    MockFetcher,
    MockSearchProvider,
    OverlapRerankClient,
    PageSpec,
    ScriptedRerankClient,
    hashed_embedding,
    query_slug,
    request_tag,
)
from .structured import constrained_json, parse_json_output

__all__ = [
    "ChatMessage",
    "ChatProvider",
    "ChatRequest",
    "ChatResponse",
    "Clock",
    "Embedder",
    "FetchOutcome",
    "Fetcher",
    "FixedClock",
    "MockChatProvider",
    "MockEmbedder",
    "MockFetcher",
    "MockSearchProvider",
    "OverlapRerankClient",
    "PageSpec",
    "ProviderSet",
    "RealClock",
    "RerankClient",
    "ScriptedRerankClient",
    "SearchProvider",
    "SearchResult",
    "chat_complete",
    "constrained_json",
    "hashed_embedding",
    "html_to_text",
    "parse_json_output",
    "query_slug",
    "request_tag",
]


def build_provider_set(cfg) -> ProviderSet:
    """Assemble providers from config: ``kind`` selects mock or http."""
    from ..config import PipelineConfig

    assert isinstance(cfg, PipelineConfig)
    p = cfg.providers
    if p.kind == "mock":
        rerank = None
        if cfg.rerank.endpoint == "mock":
            rerank = OverlapRerankClient()
        return ProviderSet(
            chat=MockChatProvider(fixtures_dir=p.fixtures_dir),
            embedder=MockEmbedder(dim=p.embed_dim),
            search=MockSearchProvider(fixtures_dir=p.fixtures_dir),
            fetcher=MockFetcher(fixtures_dir=p.fixtures_dir, max_redirects=p.max_redirects),
            rerank=rerank,
            clock=FixedClock(),
        )
    if p.kind == "http":
        from .http import (
            HttpChatProvider,
            HttpEmbedder,
            HttpFetcher,
            HttpRerankClient,
            HttpSearchProvider,
        )

        rerank = None
        if cfg.rerank.endpoint and cfg.rerank.endpoint != "mock":
            rerank = HttpRerankClient(cfg.rerank.endpoint, cfg.rerank.model, p)
        return ProviderSet(
            chat=HttpChatProvider(p),
            embedder=HttpEmbedder(p),
            search=HttpSearchProvider(p),
            fetcher=HttpFetcher(p),
            rerank=rerank,
            clock=RealClock(),
        )
    raise ValueError(f"unknown providers.kind {p.kind!r}")
