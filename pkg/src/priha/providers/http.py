"""Live HTTP providers: OpenAI-compatible chat/embeddings, reranker, search, fetch.

These carry the wire formats; none of them run in CI, which is mock-only.
API keys come from the PRIHA_LLM_KEY environment variable.
"""

from __future__ import annotations

import os
import time
from urllib.parse import urljoin, urlparse

import httpx

from ..config import LLM_KEY_ENV, ProvidersConfig
from ..errors import (
    ContextTooLong,
    DnsFailure,
    FetchTimeout,
    ProviderUnreachable,
    RateLimited,
    TooManyRedirects,
)
from .base import ChatRequest, ChatResponse, FetchOutcome, SearchResult, html_to_text


def _auth_headers() -> dict[str, str]:
    key = os.environ.get(LLM_KEY_ENV)
    return {"Authorization": f"Bearer {key}"} if key else {}


class HttpChatProvider:
    """OpenAI-compatible chat-completions endpoint."""

    def __init__(self, cfg: ProvidersConfig):
        if not cfg.chat_endpoint or not cfg.chat_model:
            raise ValueError("providers.chat_endpoint and chat_model are required")
        self.cfg = cfg

    def complete(self, req: ChatRequest) -> ChatResponse:
        payload = {
            "model": self.cfg.chat_model,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.response_schema is not None:
            payload["response_format"] = {"type": "json_object"}
        started = time.monotonic()
        try:
            response = httpx.post(
                self.cfg.chat_endpoint,
                json=payload,
                headers=_auth_headers(),
                timeout=self.cfg.chat_timeout_s,
            )
        except httpx.TimeoutException as exc:
            raise ProviderUnreachable(f"chat endpoint timed out: {exc}") from exc
        except httpx.HTTPError as exc:
            raise ProviderUnreachable(f"chat endpoint unreachable: {exc}") from exc
        if response.status_code == 429:
            raise RateLimited("chat endpoint rate limit")
        if response.status_code >= 400:
            detail = response.text[:500]
            if "context_length" in detail or "maximum context" in detail:
                raise ContextTooLong(detail)
            raise ProviderUnreachable(f"chat endpoint HTTP {response.status_code}: {detail}")
        data = response.json()
        usage = data.get("usage", {})
        return ChatResponse(
            text=data["choices"][0]["message"]["content"] or "",
            prompt_tokens=usage.get("prompt_tokens", 0),
            completion_tokens=usage.get("completion_tokens", 0),
            latency_s=time.monotonic() - started,
        )


class HttpEmbedder:
    """OpenAI-compatible embeddings endpoint; vectors are re-normalized downstream."""

    def __init__(self, cfg: ProvidersConfig):
        if not cfg.embed_endpoint or not cfg.embed_model:
            raise ValueError("providers.embed_endpoint and embed_model are required")
        self.cfg = cfg

    def embed(self, texts: list[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("texts must be non-empty")
        try:
            response = httpx.post(
                self.cfg.embed_endpoint,
                json={"model": self.cfg.embed_model, "input": texts},
                headers=_auth_headers(),
                timeout=self.cfg.chat_timeout_s,
            )
        except httpx.HTTPError as exc:
            raise ProviderUnreachable(f"embedding endpoint unreachable: {exc}") from exc
        if response.status_code == 429:
            raise RateLimited("embedding endpoint rate limit")
        if response.status_code >= 400:
            raise ProviderUnreachable(
                f"embedding endpoint HTTP {response.status_code}: {response.text[:500]}"
            )
        data = response.json()
        rows = sorted(data["data"], key=lambda row: row.get("index", 0))
        return [row["embedding"] for row in rows]


class HttpRerankClient:
    """POST {query, documents} -> {scores}, the common hosted reranker shape."""

    def __init__(self, endpoint: str, model: str | None, cfg: ProvidersConfig):
        self.endpoint = endpoint
        self.model = model
        self.cfg = cfg

    def rerank(self, query: str, documents: list[str]) -> list[float]:
        payload: dict = {"query": query, "documents": documents}
        if self.model:
            payload["model"] = self.model
        try:
            response = httpx.post(
                self.endpoint,
                json=payload,
                headers=_auth_headers(),
                timeout=self.cfg.chat_timeout_s,
            )
        except httpx.HTTPError as exc:
            raise ProviderUnreachable(f"reranker unreachable: {exc}") from exc
        if response.status_code >= 400:
            raise ProviderUnreachable(
                f"reranker HTTP {response.status_code}: {response.text[:500]}"
            )
        return [float(s) for s in response.json()["scores"]]


class HttpSearchProvider:
    """POST {query, limit} -> {results:[{url,title,snippet}]}."""

    def __init__(self, cfg: ProvidersConfig):
        if not cfg.search_endpoint:
            raise ValueError("providers.search_endpoint is required")
        self.cfg = cfg

    def search(self, query: str, limit: int = 10) -> list[SearchResult]:
        if not query.strip():
            raise ValueError("query must be non-empty")
        try:
            response = httpx.post(
                self.cfg.search_endpoint,
                json={"query": query, "limit": limit},
                headers=_auth_headers(),
                timeout=self.cfg.search_timeout_s,
            )
        except httpx.HTTPError as exc:
            raise ProviderUnreachable(f"search endpoint unreachable: {exc}") from exc
        if response.status_code >= 400:
            raise ProviderUnreachable(
                f"search endpoint HTTP {response.status_code}: {response.text[:500]}"
            )
        rows = response.json().get("results", [])
        return [
            SearchResult(
                url=row["url"],
                title=row.get("title", row["url"]),
                snippet=row.get("snippet", ""),
                rank=rank,
            )
            for rank, row in enumerate(rows[:limit], start=1)
        ]


class HttpFetcher:
    """Redirect-following page fetcher that records the final URL."""

    def __init__(self, cfg: ProvidersConfig):
        self.cfg = cfg

    def fetch(self, url: str) -> FetchOutcome:
        current = url
        for _ in range(self.cfg.max_redirects + 1):
            try:
                response = httpx.get(
                    current,
                    timeout=self.cfg.fetch_timeout_s,
                    follow_redirects=False,
                )
            except httpx.TimeoutException as exc:
                raise FetchTimeout(f"fetch of {current} timed out") from exc
            except httpx.ConnectError as exc:
                if _looks_like_dns_failure(current, exc):
                    raise DnsFailure(f"cannot resolve {urlparse(current).hostname}") from exc
                raise FetchTimeout(f"cannot connect to {current}: {exc}") from exc
            if response.status_code in (301, 302, 303, 307, 308):
                location = response.headers.get("location")
                if not location:
                    return FetchOutcome(status=response.status_code, final_url=current, body="")
                current = urljoin(current, location)
                continue
            content_type = response.headers.get("content-type", "")
            if 200 <= response.status_code < 300:
                body = response.text
                if "html" in content_type:
                    body = html_to_text(body)
                return FetchOutcome(
                    status=response.status_code,
                    final_url=current,
                    body=body,
                    content_type=content_type,
                )
            return FetchOutcome(
                status=response.status_code,
                final_url=current,
                body="",
                content_type=content_type,
            )
        raise TooManyRedirects(
            f"redirect chain from {url} exceeded {self.cfg.max_redirects} hops"
        )


def _looks_like_dns_failure(url: str, exc: Exception) -> bool:
    message = str(exc).lower()
    return "name" in message or "resolve" in message or "getaddrinfo" in message
