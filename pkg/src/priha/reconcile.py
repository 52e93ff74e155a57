"""Stage 3: precedence ordering, synthesis and citation integrity.

Evidence from both channels is flattened into one list ordered by a
mechanical precedence key (authority tier, then recency, then local origin),
deduplicated and budget-trimmed, and handed to one synthesis call whose
prompt makes the order binding: higher-listed items override lower ones on
conflict. The model's inline ``[n]`` markers are then checked against the
assembled list and the reference section is rebuilt mechanically; a model
cannot invent a source that survives this module.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from datetime import date

from .agent import WebEvidence
from .config import PipelineConfig
from .errors import DanglingCitation, MalformedModelOutput
from .optimizer import ClarifiedIntent
from .providers import (
    ChatMessage,
    ChatProvider,
    ChatRequest,
    chat_complete,
)
from .rerank import RankedContext

ORIGIN_LOCAL = "local"
ORIGIN_WEB = "web"

DISCLAIMER = (
    "This assistant provides general service information, not medical advice. "
    "Consult a healthcare professional for decisions about your own care."
)

_MARKER_RE = re.compile(r"\[(\d+)\]")


@dataclass
class UserProfile:
    """What this session's clarification dialogue revealed about the user."""

    stated_priorities: list[str] = field(default_factory=list)
    background_facts: list[str] = field(default_factory=list)
    locale_hints: list[str] = field(default_factory=list)


def build_profile(intent: ClarifiedIntent) -> UserProfile:
    return UserProfile(
        stated_priorities=list(intent.priorities),
        background_facts=list(intent.background_facts),
    )


@dataclass(frozen=True)
class EvidenceItem:
    eid: int
    origin: str
    title: str
    locator: str
    authority_tier: int
    date: date
    text: str


@dataclass(frozen=True)
class Citation:
    eid: int
    title: str
    locator: str
    kind: str
    date: date


@dataclass
class FinalResponse:
    answer: str
    references: list[Citation] = field(default_factory=list)
    disclaimers: list[str] = field(default_factory=list)


def precedence_key(item: EvidenceItem) -> tuple:
    """Total order: better tier, then newer, then local before web, then eid."""
    origin_rank = 0 if item.origin == ORIGIN_LOCAL else 1
    return (item.authority_tier, -item.date.toordinal(), origin_rank, item.eid)


def _local_items(local: dict[str, RankedContext]) -> list[EvidenceItem]:
    items = []
    for entries in local.values():
        for entry in entries:
            items.append(
                EvidenceItem(
                    eid=0,
                    origin=ORIGIN_LOCAL,
                    title=entry.meta.title,
                    locator=entry.meta.source_url,
                    authority_tier=entry.meta.authority_tier,
                    date=entry.meta.updated_time,
                    text=entry.parent.text,
                )
            )
    return items


def _web_items(web: dict[str, list[WebEvidence]]) -> list[EvidenceItem]:
    items = []
    for evidence in web.values():
        for ev in evidence:
            items.append(
                EvidenceItem(
                    eid=0,
                    origin=ORIGIN_WEB,
                    title=ev.title,
                    locator=ev.final_url,
                    authority_tier=ev.authority_tier,
                    date=ev.fetched_at.date(),
                    text=ev.excerpt,
                )
            )
    return items


def assemble_context(
    local: dict[str, RankedContext],
    web: dict[str, list[WebEvidence]],
    profile: UserProfile,
    budget_chars: int,
) -> list[EvidenceItem]:
    """Flatten, dedup, order and trim both channels into the citable list.

    Sorting happens before eids exist; the flatten order (local channel
    first, each in retrieval order) is the stable tie-break, and eids are
    assigned 1..M afterwards so the final list is sorted under
    :func:`precedence_key`. The character budget drops lowest-precedence
    items whole, never truncating one mid-text, and never drops the last
    remaining item.
    """
    flat = _local_items(local) + _web_items(web)
    ordered = sorted(
        flat,
        key=lambda e: (
            e.authority_tier,
            -e.date.toordinal(),
            0 if e.origin == ORIGIN_LOCAL else 1,
        ),
    )
    deduped: list[EvidenceItem] = []
    seen: set[str] = set()
    for item in ordered:
        if item.locator in seen:
            continue
        seen.add(item.locator)
        deduped.append(item)
    total = 0
    kept: list[EvidenceItem] = []
    for item in deduped:
        if kept and total + len(item.text) > budget_chars:
            break
        kept.append(item)
        total += len(item.text)
    return [replace(item, eid=i) for i, item in enumerate(kept, start=1)]


SYNTH_SYSTEM = (
    "[TAG:synthesize] You are the reconciliation step of a primary-healthcare "
    "assistant. The evidence list below is in precedence order: when two "
    "items conflict, the higher-listed item overrides the lower one. Present "
    "a superseded fact as updated guidance, saying what changed and which "
    "source is current; never assert both versions as true. Support every "
    "factual claim with an inline marker like [2] placed right after it, "
    "citing only eids that appear in the list. Do not write your own "
    "reference section; it is generated from your markers. Structure the "
    "answer as a short Markdown report with the sections '## Summary', "
    "'## Details' and '## Next steps'. If the evidence list is empty, answer "
    "carefully from general knowledge and use no citation markers."
)


def _evidence_block(items: list[EvidenceItem]) -> str:
    if not items:
        return "(none; answer from general knowledge, with no citations)"
    parts = []
    for item in items:
        header = (
            f"[{item.eid}] (tier {item.authority_tier}, dated "
            f"{item.date.isoformat()}, {item.origin}) {item.title}"
        )
        parts.append(f"{header}\n{item.text}")
    return "\n\n".join(parts)


def _profile_block(profile: UserProfile) -> str:
    priorities = ", ".join(profile.stated_priorities) or "(none stated)"
    background = "; ".join(profile.background_facts) or "(none stated)"
    return f"- priorities: {priorities}\n- background: {background}"


def _synthesis_request(
    intent: ClarifiedIntent, items: list[EvidenceItem], profile: UserProfile
) -> ChatRequest:
    user = (
        f"QUESTION:\n{intent.intent_text}\n\n"
        f"USER PROFILE (context only, never citable evidence):\n{_profile_block(profile)}\n\n"
        f"EVIDENCE (precedence order, cite by [eid]):\n{_evidence_block(items)}\n\n"
        "Write the report."
    )
    return ChatRequest(
        messages=[
            ChatMessage(role="system", content=SYNTH_SYSTEM),
            ChatMessage(role="user", content=user),
        ],
        max_tokens=2048,
    )


def parse_markers(answer: str) -> set[int]:
    return {int(m) for m in _MARKER_RE.findall(answer)}


def validate_citations(resp: FinalResponse, items: list[EvidenceItem]) -> FinalResponse:
    """Rebuild the reference list from the markers the answer actually uses.

    Any marker without a matching assembled eid raises; model-authored
    reference lists are discarded, so references always equal the used
    markers exactly.
    """
    by_eid = {item.eid: item for item in items}
    markers = parse_markers(resp.answer)
    unknown = {m for m in markers if m not in by_eid}
    if unknown:
        raise DanglingCitation(unknown)
    references = [
        Citation(
            eid=eid,
            title=by_eid[eid].title,
            locator=by_eid[eid].locator,
            kind=by_eid[eid].origin,
            date=by_eid[eid].date,
        )
        for eid in sorted(markers)
    ]
    return replace(resp, references=references)


def synthesize(
    intent: ClarifiedIntent,
    items: list[EvidenceItem],
    profile: UserProfile,
    chat: ChatProvider,
    cfg: PipelineConfig,
) -> FinalResponse:
    """One reasoning pass over the assembled evidence, citation-checked.

    The model gets a single corrective re-prompt when its answer is empty or
    cites a marker with no assembled evidence; a second failure raises.
    """
    req = _synthesis_request(intent, items, profile)
    answer = chat_complete(chat, req, cfg.providers).text.strip()
    problem: str | None = None
    if not answer:
        problem = "the answer was empty."
    else:
        try:
            return validate_citations(
                FinalResponse(answer=answer, disclaimers=[DISCLAIMER]), items
            )
        except DanglingCitation as exc:
            bad = ", ".join(f"[{m}]" for m in sorted(exc.markers))
            eids = ", ".join(str(i.eid) for i in items) or "none"
            problem = (
                f"it cited {bad}, but the available evidence eids are: {eids}. "
                "Cite only those eids."
            )
    repair = ChatRequest(
        messages=[
            *req.messages,
            ChatMessage(role="assistant", content=answer),
            ChatMessage(
                role="user",
                content=f"Your answer was rejected: {problem} Rewrite the full report.",
            ),
        ],
        max_tokens=req.max_tokens,
    )
    answer = chat_complete(chat, repair, cfg.providers).text.strip()
    if not answer:
        raise MalformedModelOutput("synthesis produced an empty answer after repair")
    return validate_citations(
        FinalResponse(answer=answer, disclaimers=[DISCLAIMER]), items
    )
