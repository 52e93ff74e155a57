"""Stage 2, dynamic channel: the iterative web search agent.

Each sub-query runs its own bounded loop of search, safelist filtering,
LLM reranking, crawl validation and a sufficiency check whose ``missing``
strings literally become the next round's search queries. Hard caps hold
regardless of model behavior: at most ``max_iterations`` searches and
``max_iterations * crawl_budget`` fetches per sub-query, and nothing enters
the evidence list unless its final URL still sits on the safelist after
redirects and its page yielded real text.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from .config import PipelineConfig
from .errors import (
    BadLine,
    DnsFailure,
    FetchTimeout,
    MalformedModelOutput,
    TooManyRedirects,
)
from .providers import (
    ChatMessage,
    ChatProvider,
    ChatRequest,
    ProviderSet,
    SearchResult,
    constrained_json,
)
from urllib.parse import urlparse

MIN_EXTRACT_CHARS = 50
SEARCH_LIMIT = 10

REJECT_BROKEN = "broken"
REJECT_OFFLIST = "offlist_redirect"
REJECT_EMPTY = "empty_content"
REJECT_TIMEOUT = "timeout"

VALID = "valid"


@dataclass(frozen=True)
class SafelistEntry:
    pattern: str
    tier: int


@dataclass(frozen=True)
class Safelist:
    """Registrable-domain suffixes the agent may cite, each with a tier."""

    entries: tuple[SafelistEntry, ...] = ()

    def match_tier(self, host: str) -> int | None:
        """Tier of the most specific matching pattern, or None when off-list.

        A pattern matches when the host equals it or ends with ``.pattern``,
        anchored at a label boundary, so ``notgov.hk.evil.com`` never matches
        ``gov.hk``.
        """
        host = host.lower().rstrip(".")
        best: SafelistEntry | None = None
        for entry in self.entries:
            if host == entry.pattern or host.endswith("." + entry.pattern):
                if best is None or len(entry.pattern) > len(best.pattern):
                    best = entry
        return best.tier if best else None


@dataclass(frozen=True)
class WebEvidence:
    """One crawl-validated web page accepted as citable evidence."""

    url: str
    final_url: str
    title: str
    excerpt: str
    fetched_at: datetime
    authority_tier: int
    validation_status: str = VALID


@dataclass(frozen=True)
class CrawlRejection:
    url: str
    reason: str
    status: int | None = None


@dataclass
class AgentRound:
    """Trace record of one loop iteration."""

    query: str
    result_count: int = 0
    on_safelist: int = 0
    crawled: list[str] = field(default_factory=list)
    accepted: list[str] = field(default_factory=list)
    rejected: list[CrawlRejection] = field(default_factory=list)
    sufficient: bool = True
    missing: list[str] = field(default_factory=list)


@dataclass
class AgentState:
    goal: str
    iteration: int = 0
    plan_notes: str = ""
    evidence: list[WebEvidence] = field(default_factory=list)
    gaps: list[str] = field(default_factory=list)


def load_safelist(path: str | Path) -> Safelist:
    """Parse a ``pattern<TAB>tier`` file; ``#`` comments and blanks skipped."""
    entries: list[SafelistEntry] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split("\t")
        if len(parts) != 2:
            raise BadLine(lineno, "expected pattern<TAB>tier")
        pattern, tier_text = parts[0].strip().lower(), parts[1].strip()
        if not pattern or "/" in pattern or "://" in pattern:
            raise BadLine(lineno, "pattern must be a bare domain suffix")
        if tier_text not in ("0", "1"):
            raise BadLine(lineno, "tier must be 0 or 1")
        entries.append(SafelistEntry(pattern=pattern, tier=int(tier_text)))
    return Safelist(entries=tuple(entries))


def filter_safelist(results: list[SearchResult], sl: Safelist) -> list[SearchResult]:
    """Keep results whose host is on the safelist, preserving order."""
    kept = []
    for result in results:
        host = (urlparse(result.url).hostname or "").lower()
        if host and sl.match_tier(host) is not None:
            kept.append(result)
    return kept


WEBRANK_SYSTEM = (
    "[TAG:webrank] You rank search results for an official-information crawl. "
    "Prefer pages from government bodies, public hospitals and certified "
    "health organizations, and pages that look like primary sources for the "
    "goal (policy pages, service directories) over news echoes. Reply with a "
    'JSON object {"order": [indices]} listing result indices best first; omit '
    "results not worth crawling."
)


WEBRANK_SCHEMA = {
    "$id": "webrank_reply",
    "type": "object",
    "properties": {"order": {"type": "array", "items": {"type": "integer"}}},
    "required": ["order"],
}


def llm_rerank_results(
    goal: str, results: list[SearchResult], chat: ChatProvider, cfg: PipelineConfig
) -> list[SearchResult]:
    """Model-ordered subset of the filtered results, capped at crawl_budget.

    Invalid or duplicate indices are dropped; a malformed reply falls back to
    engine order truncated to the budget.
    """
    budget = cfg.agent.crawl_budget
    if not results:
        return []
    lines = []
    for i, r in enumerate(results):
        lines.append(f"[{i}] {r.title} | {r.url}")
        if r.snippet:
            lines.append(f"    {r.snippet}")
    req = ChatRequest(
        messages=[
            ChatMessage(role="system", content=WEBRANK_SYSTEM),
            ChatMessage(
                role="user",
                content=f"GOAL:\n{goal}\n\nSEARCH RESULTS:\n" + "\n".join(lines)
                + "\n\nRank the results worth crawling.",
            ),
        ]
    )
    try:
        value, _ = constrained_json(chat, req, WEBRANK_SCHEMA, cfg.providers)
    except MalformedModelOutput:
        return results[:budget]
    picked: list[SearchResult] = []
    seen: set[int] = set()
    for index in value["order"]:
        if index in seen or not 0 <= index < len(results):
            continue
        seen.add(index)
        picked.append(results[index])
        if len(picked) == budget:
            break
    return picked


def crawl_validate(
    result: SearchResult, sl: Safelist, providers: ProviderSet, cfg: PipelineConfig
) -> WebEvidence | CrawlRejection:
    """Fetch one ranked result and accept it only if it proves trustworthy.

    Acceptance needs all three: a 2xx terminal status, a final URL still on
    the safelist after any redirects, and at least 50 characters of extracted
    text. The authority tier comes from the final URL's matched pattern.
    """
    try:
        outcome = providers.fetcher.fetch(result.url)
    except FetchTimeout:
        return CrawlRejection(url=result.url, reason=REJECT_TIMEOUT)
    except (DnsFailure, TooManyRedirects):
        return CrawlRejection(url=result.url, reason=REJECT_BROKEN)
    if not 200 <= outcome.status < 300:
        return CrawlRejection(url=result.url, reason=REJECT_BROKEN, status=outcome.status)
    host = (urlparse(outcome.final_url).hostname or "").lower()
    tier = sl.match_tier(host) if host else None
    if tier is None:
        return CrawlRejection(url=result.url, reason=REJECT_OFFLIST)
    text = outcome.body.strip()
    if len(text) < MIN_EXTRACT_CHARS:
        return CrawlRejection(url=result.url, reason=REJECT_EMPTY)
    return WebEvidence(
        url=result.url,
        final_url=outcome.final_url,
        title=result.title,
        excerpt=text[: cfg.agent.excerpt_chars],
        fetched_at=providers.clock.now(),
        authority_tier=tier,
    )


SUFFICIENCY_SYSTEM = (
    "[TAG:sufficiency] You judge whether collected web evidence suffices to "
    "answer a goal. If something essential is absent, name it as short search "
    'queries. Reply with a JSON object {"sufficient": true|false, "missing": '
    '["query", ...]} where missing is empty when sufficient.'
)


SUFFICIENCY_SCHEMA = {
    "$id": "sufficiency_reply",
    "type": "object",
    "properties": {
        "sufficient": {"type": "boolean"},
        "missing": {"type": "array", "items": {"type": "string"}},
    },
    "required": ["sufficient"],
}


def assess_sufficiency(
    state: AgentState, chat: ChatProvider, cfg: PipelineConfig
) -> tuple[bool, list[str]]:
    """Ask the model whether the loop can stop; malformed replies mean stop.

    Failing closed on continuation bounds cost: a broken assessor ends the
    loop with whatever evidence exists instead of burning the remaining
    iterations.
    """
    if not state.evidence:
        summary = "(no valid evidence collected yet)"
    else:
        parts = []
        for ev in state.evidence:
            head = ev.excerpt[:200].replace("\n", " ")
            parts.append(f"- {ev.title} ({ev.final_url})\n  {head}")
        summary = "\n".join(parts)
    req = ChatRequest(
        messages=[
            ChatMessage(role="system", content=SUFFICIENCY_SYSTEM),
            ChatMessage(
                role="user",
                content=f"GOAL:\n{state.goal}\n\nEVIDENCE COLLECTED:\n{summary}\n\n"
                "Is this sufficient to answer the goal?",
            ),
        ]
    )
    try:
        value, _ = constrained_json(chat, req, SUFFICIENCY_SCHEMA, cfg.providers)
    except MalformedModelOutput:
        return True, []
    missing = [m.strip()[:200] for m in value.get("missing", []) if m.strip()]
    return bool(value["sufficient"]), missing


def run_agent_loop(
    goal: str, sl: Safelist, providers: ProviderSet, cfg: PipelineConfig
) -> tuple[list[WebEvidence], list[AgentRound]]:
    """Run the bounded search loop for one sub-query.

    Returns the accumulated evidence (possibly empty, which is a legal
    outcome) and a per-round trace. Evidence is deduplicated by final URL.
    Transport errors propagate so the caller can degrade this sub-query's
    web channel without touching the local one.
    """
    state = AgentState(goal=goal, plan_notes=f"round 1 searches the sub-query verbatim: {goal}")
    rounds: list[AgentRound] = []
    pending: list[str] = [goal]
    searched: set[str] = set()
    seen_final: set[str] = set()
    while pending and state.iteration < cfg.agent.max_iterations:
        state.iteration += 1
        query = pending.pop(0)
        searched.add(query)
        record = AgentRound(query=query)
        rounds.append(record)
        results = providers.search.search(query, limit=SEARCH_LIMIT)
        record.result_count = len(results)
        filtered = filter_safelist(results, sl)
        record.on_safelist = len(filtered)
        for result in llm_rerank_results(goal, filtered, providers.chat, cfg):
            record.crawled.append(result.url)
            verdict = crawl_validate(result, sl, providers, cfg)
            if isinstance(verdict, CrawlRejection):
                record.rejected.append(verdict)
                continue
            if verdict.final_url in seen_final:
                continue
            seen_final.add(verdict.final_url)
            state.evidence.append(verdict)
            record.accepted.append(verdict.final_url)
        sufficient, missing = assess_sufficiency(state, providers.chat, cfg)
        record.sufficient = sufficient
        record.missing = missing
        if sufficient:
            break
        state.gaps = missing
        for query_text in missing:
            if query_text not in searched and query_text not in pending:
                pending.append(query_text)
    return state.evidence, rounds


def round_to_dict(record: AgentRound) -> dict:
    """JSON-ready view of one agent round for the pipeline trace."""
    return {
        "query": record.query,
        "result_count": record.result_count,
        "on_safelist": record.on_safelist,
        "crawled": list(record.crawled),
        "accepted": list(record.accepted),
        "rejected": [
            {"url": r.url, "reason": r.reason, "status": r.status}
            for r in record.rejected
        ],
        "sufficient": record.sufficient,
        "missing": list(record.missing),
    }
