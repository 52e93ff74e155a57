"""Deterministic scripted providers for tests, fixtures and offline runs.

Every mock is a pure function of its inputs and fixture set: fresh instances
fed the same fixtures produce byte-identical transcripts run after run.

Chat replies resolve in three layers: programmatic scripts (tests), fixture
files under ``llm/<tag>.txt`` (``%%%`` lines separate a reply sequence), and
rule-based defaults that keep the whole pipeline operational with no fixture
authoring at all.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass
from pathlib import Path
from urllib.parse import urljoin, urlparse

from ..errors import NoFixture, TooManyRedirects
from .base import ChatRequest, ChatResponse, FetchOutcome, SearchResult, html_to_text

_TAG_RE = re.compile(r"\[TAG:(\w+)\]")


def request_tag(req: ChatRequest) -> str | None:
    """The machine tag a pipeline prompt carries in its system message."""
    match = _TAG_RE.search(req.system_text())
    return match.group(1) if match else None


def extract_block(text: str, label: str) -> str:
    """Content between ``label`` and the next blank line (prompt sections)."""
    idx = text.find(label)
    if idx < 0:
        return ""
    rest = text[idx + len(label) :]
    block, _, _ = rest.partition("\n\n")
    return block.strip()


_EVIDENCE_LINE_RE = re.compile(r"^\[(\d+)\] \(tier \d, dated [0-9-]+, (?:local|web)\) (.*)$", re.M)


def _default_reply(tag: str, req: ChatRequest) -> str:
    user = req.last_user_text()
    if tag == "classify":
        return '{"label": "SIMPLE"}'
    if tag == "clarify":
        return '{"done": true, "question": null}'
    if tag == "finalize":
        question = extract_block(user, "USER QUESTION:") or user.strip()
        return json.dumps(
            {"intent_text": question, "priorities": [], "background_facts": []}
        )
    if tag == "generalize":
        intent = extract_block(user, "CLARIFIED INTENT:") or user.strip()
        return json.dumps(
            {
                "health_topical": True,
                "sub_queries": [
                    {"text": intent, "purpose": "guideline"},
                    {"text": f"{intent} community services", "purpose": "community_service"},
                ],
            }
        )
    if tag == "webrank":
        count = len(re.findall(r"^\[(\d+)\] ", user, re.M))
        return json.dumps({"order": list(range(count))})
    if tag == "sufficiency":
        return '{"sufficient": true, "missing": []}'
    if tag == "synthesize":
        return _default_synthesis(user)
    if tag == "judge":
        return json.dumps(
            {
                "accuracy": 4,
                "completeness": 4,
                "trustworthiness": 4,
                "clarity": 5,
                "relevance": 4,
            }
        )
    raise NoFixture(f"no scripted reply, fixture or default for chat tag {tag!r}")


def _default_synthesis(user: str) -> str:
    evidence = _EVIDENCE_LINE_RE.findall(user)
    if not evidence:
        return (
            "## Summary\n"
            "Here is general guidance based on broad knowledge; no sources were "
            "retrieved for this answer.\n\n"
            "## Next steps\n"
            "Consider consulting your family doctor or a district health centre."
        )
    lines = [f"- {title.strip()} [{eid}]" for eid, title in evidence]
    first = evidence[0][0]
    return (
        "## Summary\n"
        f"The most authoritative available guidance answers this directly [{first}].\n\n"
        "## Details\n" + "\n".join(lines) + "\n\n"
        "## Next steps\n"
        "Follow the cited references for service locations and eligibility."
    )


class MockChatProvider:
    """Scripted chat model keyed by the ``[TAG:...]`` marker in the prompt.

    ``scripts`` maps a tag to either a callable ``(ChatRequest) -> str`` or a
    list of replies consumed in order (falling through when exhausted).
    """

    def __init__(self, fixtures_dir: str | Path | None = None, scripts: dict | None = None,
                 use_defaults: bool = True):
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir else None
        self.scripts = dict(scripts) if scripts else {}
        self.use_defaults = use_defaults
        self._fixture_cursor: dict[str, int] = {}

    def complete(self, req: ChatRequest) -> ChatResponse:
        tag = request_tag(req) or "untagged"
        text = self._resolve(tag, req)
        return ChatResponse(text=text, prompt_tokens=0, completion_tokens=0, latency_s=0.0)

    def _resolve(self, tag: str, req: ChatRequest) -> str:
        script = self.scripts.get(tag)
        if callable(script):
            return script(req)
        if isinstance(script, list) and script:
            return script.pop(0)
        fixture = self._fixture_reply(tag)
        if fixture is not None:
            return fixture
        if self.use_defaults:
            return _default_reply(tag, req)
        raise NoFixture(f"no scripted reply or fixture for chat tag {tag!r}")

    def _fixture_reply(self, tag: str) -> str | None:
        if self.fixtures_dir is None:
            return None
        path = self.fixtures_dir / "llm" / f"{tag}.txt"
        if not path.is_file():
            return None
        parts = re.split(r"^%%%$", path.read_text(encoding="utf-8"), flags=re.M)
        parts = [p.strip("\n") for p in parts]
        cursor = self._fixture_cursor.get(tag, 0)
        self._fixture_cursor[tag] = cursor + 1
        return parts[min(cursor, len(parts) - 1)]


def hashed_embedding(text: str, dim: int = 256) -> list[float]:
    """Bag-of-words hashed into ``dim`` buckets, L2-normalized.

    CRC32 keys the buckets so vectors are stable across processes.
    """
    from ..indexing import tokenize

    counts = [0.0] * dim
    tokens = tokenize(text) or [""]
    for token in tokens:
        counts[zlib.crc32(token.encode("utf-8")) % dim] += 1.0
    norm = sum(c * c for c in counts) ** 0.5
    return [c / norm for c in counts]


@dataclass
class MockEmbedder:
    dim: int = 256

    def embed(self, texts: list[str]) -> list[list[float]]:
        if not texts:
            raise ValueError("texts must be non-empty")
        return [hashed_embedding(t, self.dim) for t in texts]


def query_slug(query: str) -> str:
    """Filename-safe key for a search query fixture."""
    slug = "".join(ch if ch.isalnum() else "-" for ch in query.strip().lower())
    slug = re.sub(r"-+", "-", slug).strip("-")
    return slug or "empty"


class MockSearchProvider:
    """Search engine fed from an in-memory table and/or fixture files.

    Lookup order: table, ``search/<query-slug>.json`` fixture, then the
    optional ``default_results`` function; a miss everywhere is NoFixture,
    which flags a test-authoring gap rather than an empty result.
    """

    def __init__(self, table: dict[str, list] | None = None,
                 fixtures_dir: str | Path | None = None,
                 default_results=None):
        self.table = {query_slug(k): v for k, v in (table or {}).items()}
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir else None
        self.default_results = default_results

    def search(self, query: str, limit: int = 10) -> list[SearchResult]:
        if not query.strip():
            raise ValueError("query must be non-empty")
        slug = query_slug(query)
        rows = self.table.get(slug)
        if rows is None and self.fixtures_dir is not None:
            path = self.fixtures_dir / "search" / f"{slug}.json"
            if path.is_file():
                rows = json.loads(path.read_text(encoding="utf-8"))
        if rows is None and self.default_results is not None:
            rows = self.default_results(query)
        if rows is None:
            raise NoFixture(f"no search fixture for query {query!r} (slug {slug!r})")
        results = []
        for rank, row in enumerate(rows[:limit], start=1):
            if isinstance(row, SearchResult):
                results.append(SearchResult(row.url, row.title, row.snippet, rank))
            else:
                results.append(
                    SearchResult(
                        url=row["url"],
                        title=row.get("title", row["url"]),
                        snippet=row.get("snippet", ""),
                        rank=rank,
                    )
                )
        return results


@dataclass
class PageSpec:
    """One mock web page: a terminal response or a redirect hop."""

    status: int = 200
    body: str = ""
    content_type: str = "text/html"
    location: str | None = None


class MockFetcher:
    """Fixture web: follows scripted redirect chains like a real client.

    ``pages`` maps URL to a :class:`PageSpec` or an exception instance to
    raise. URLs not covered by pages or fixture files resolve to 404.
    """

    def __init__(self, pages: dict | None = None, fixtures_dir: str | Path | None = None,
                 max_redirects: int = 5):
        self.pages = dict(pages or {})
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir else None
        self.max_redirects = max_redirects

    def fetch(self, url: str) -> FetchOutcome:
        current = url
        for _ in range(self.max_redirects + 1):
            spec = self._lookup(current)
            if isinstance(spec, Exception):
                raise spec
            if spec.status in (301, 302, 303, 307, 308) and spec.location:
                current = urljoin(current, spec.location)
                continue
            if 200 <= spec.status < 300:
                body = spec.body
                if "html" in spec.content_type:
                    body = html_to_text(body)
                return FetchOutcome(
                    status=spec.status, final_url=current, body=body,
                    content_type=spec.content_type,
                )
            return FetchOutcome(
                status=spec.status, final_url=current, body="",
                content_type=spec.content_type,
            )
        raise TooManyRedirects(f"redirect chain from {url} exceeded {self.max_redirects} hops")

    def _lookup(self, url: str):
        if url in self.pages:
            return self.pages[url]
        if self.fixtures_dir is not None:
            parsed = urlparse(url)
            host = (parsed.hostname or "").lower()
            rel = parsed.path.lstrip("/") or "index"
            if not rel.endswith(".html"):
                rel += ".html"
            path = self.fixtures_dir / "web" / host / rel
            if path.is_file():
                return PageSpec(status=200, body=path.read_text(encoding="utf-8"))
        return PageSpec(status=404)


class OverlapRerankClient:
    """Deterministic stand-in cross-encoder: scores by token overlap in [0,1]."""

    def rerank(self, query: str, documents: list[str]) -> list[float]:
        from ..indexing import tokenize

        query_tokens = set(tokenize(query))
        scores = []
        for doc in documents:
            doc_tokens = set(tokenize(doc))
            if not query_tokens:
                scores.append(0.0)
            else:
                scores.append(len(query_tokens & doc_tokens) / len(query_tokens))
        return scores


class ScriptedRerankClient:
    def __init__(self, fn):
        self.fn = fn

    def rerank(self, query: str, documents: list[str]) -> list[float]:
        return self.fn(query, documents)
