"""Stage 1: intent triage, bounded clarification, and sub-query generation.

A first message is classified SIMPLE or COMPLEX. COMPLEX questions go through
at most ``max_rounds`` clarifying questions; the clarified intention is then
generalized into atomic, purpose-tagged sub-queries that the two retrieval
channels consume. Every model decision is a schema-constrained JSON call so
the flow is scriptable and the failure rules are mechanical.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime

from .config import PipelineConfig
from .errors import EmptySubQueries, MalformedModelOutput
from .providers import ChatMessage, ChatProvider, ChatRequest, constrained_json

SIMPLE = "SIMPLE"
COMPLEX = "COMPLEX"
INTENT_LABELS = (SIMPLE, COMPLEX)

STATUS_PENDING = "pending"
STATUS_DONE = "done"

SUBQUERY_PURPOSES = ("guideline", "community_service", "scheme", "logistics", "other")
COMMUNITY_PURPOSES = frozenset({"community_service", "scheme"})

MAX_SUBQUERY_CHARS = 200


@dataclass(frozen=True)
class UserInput:
    """The user's opening message for one question."""

    text: str
    timestamp: datetime
    session_id: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("user input text must be non-empty")


@dataclass
class ClarificationState:
    rounds_used: int = 0
    asked_questions: list[str] = field(default_factory=list)
    user_answers: list[str] = field(default_factory=list)
    status: str = STATUS_PENDING


@dataclass(frozen=True)
class Question:
    """One clarifying question; options are quick-reply choices when discrete."""

    text: str
    options: tuple[str, ...] = ()


@dataclass(frozen=True)
class SubQuery:
    text: str
    purpose: str


@dataclass
class ClarifiedIntent:
    """The clarified intention plus the atomic sub-queries derived from it."""

    intent_text: str
    priorities: list[str] = field(default_factory=list)
    background_facts: list[str] = field(default_factory=list)
    sub_queries: list[SubQuery] = field(default_factory=list)


CLASSIFY_SCHEMA = {
    "$id": "classify_reply",
    "type": "object",
    "properties": {"label": {"enum": list(INTENT_LABELS)}},
    "required": ["label"],
}

CLARIFY_SCHEMA = {
    "$id": "clarify_reply",
    "type": "object",
    "properties": {
        "done": {"type": "boolean"},
        "question": {"type": ["string", "null"]},
        "options": {"type": "array", "items": {"type": "string"}},
    },
    "required": ["done"],
}

FINALIZE_SCHEMA = {
    "$id": "finalize_reply",
    "type": "object",
    "properties": {
        "intent_text": {"type": "string", "minLength": 1},
        "priorities": {"type": "array", "items": {"type": "string"}},
        "background_facts": {"type": "array", "items": {"type": "string"}},
    },
    "required": ["intent_text", "priorities", "background_facts"],
}

GENERALIZE_SCHEMA = {
    "$id": "generalize_reply",
    "type": "object",
    "properties": {
        "health_topical": {"type": "boolean"},
        "sub_queries": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "text": {"type": "string"},
                    "purpose": {"enum": list(SUBQUERY_PURPOSES)},
                },
                "required": ["text", "purpose"],
            },
        },
    },
    "required": ["health_topical", "sub_queries"],
}


CLASSIFY_SYSTEM = (
    "[TAG:classify] You are the intake triage step of a primary-healthcare "
    "assistant. Label the user's question SIMPLE when it asks one direct, "
    "self-contained factual thing (an address, a phone number, the rules of a "
    "named scheme) that can be answered as asked. Label it COMPLEX when "
    "answering well needs clarification first: comparisons, trade-offs, vague "
    "symptoms, or questions that depend on the user's own circumstances.\n"
    'Reply with a JSON object: {"label": "SIMPLE"} or {"label": "COMPLEX"}.'
)

CLARIFY_SYSTEM = (
    "[TAG:clarify] You are running a short clarification dialogue for a "
    "primary-healthcare assistant. Decide whether the user's intention, "
    "background and priorities are now clear enough to research. If they are, "
    'reply {"done": true, "question": null}. Otherwise ask exactly one '
    'focused question: reply {"done": false, "question": "...", "options": '
    '["..."]} where options lists short discrete choices when natural ones '
    "exist (otherwise an empty list). Never ask about anything the user "
    "already answered."
)

FINALIZE_SYSTEM = (
    "[TAG:finalize] Condense the dialogue below into the user's clarified "
    "intention. Write intent_text as one self-contained sentence; priorities "
    "as short tags ordered by importance (for example affordability, quality, "
    "proximity); background_facts as plain statements the user revealed.\n"
    'Reply with a JSON object: {"intent_text": "...", "priorities": [...], '
    '"background_facts": [...]}.'
)

GENERALIZE_SYSTEM = (
    "[TAG:generalize] Decompose the clarified intention into atomic search "
    "queries for a primary-healthcare assistant. Each sub-query asks for one "
    "thing, stands alone without the dialogue, and stays under 200 "
    "characters. Tag each with its purpose: guideline (clinical or official "
    "guidance), community_service (district health centres, NGO and "
    "community-level services), scheme (subsidies, vouchers, government "
    "schemes), logistics (addresses, hours, bookings), or other. Set "
    "health_topical true when the intention concerns health or care. When it "
    "is, at least one sub-query MUST have purpose community_service or "
    "scheme, so community-level options always enter the search.\n"
    'Reply with a JSON object: {"health_topical": true|false, "sub_queries": '
    '[{"text": "...", "purpose": "..."}]}.'
)


def _transcript(state: ClarificationState) -> str:
    if not state.asked_questions:
        return "(none)"
    lines: list[str] = []
    for i, question in enumerate(state.asked_questions):
        lines.append(f"Q: {question}")
        answer = state.user_answers[i] if i < len(state.user_answers) else ""
        lines.append(f"A: {answer}" if answer else "A: (no answer yet)")
    return "\n".join(lines)


def _chat_request(system: str, user: str) -> ChatRequest:
    return ChatRequest(
        messages=[
            ChatMessage(role="system", content=system),
            ChatMessage(role="user", content=user),
        ]
    )


def classify_intent(inp: UserInput, chat: ChatProvider, cfg: PipelineConfig) -> str:
    """Label the opening question SIMPLE or COMPLEX.

    Fail-open: an unusable model reply classifies as SIMPLE, so a broken
    classifier degrades to answering directly instead of trapping the user in
    clarification. Transport errors still propagate.
    """
    req = _chat_request(
        CLASSIFY_SYSTEM,
        f"USER QUESTION:\n{inp.text}\n\nClassify this question.",
    )
    try:
        value, _ = constrained_json(chat, req, CLASSIFY_SCHEMA, cfg.providers)
    except MalformedModelOutput:
        return SIMPLE
    return value["label"]


def record_answer(state: ClarificationState, text: str) -> None:
    """Attach the user's reply to the most recent clarifying question."""
    if len(state.user_answers) >= state.rounds_used:
        raise ValueError("no unanswered clarifying question")
    state.user_answers.append(text)


def next_clarification(
    inp: UserInput, state: ClarificationState, chat: ChatProvider, cfg: PipelineConfig
) -> Question | None:
    """Ask the next clarifying question, or mark the state done and return None.

    The round cap wins over the model: once ``max_rounds`` questions have been
    asked no further model call is made. A malformed clarify reply also ends
    the dialogue (fail-open) rather than stalling it.
    """
    if state.status != STATUS_PENDING:
        raise ValueError("clarification already finished")
    if state.rounds_used >= cfg.optimizer.max_rounds:
        state.status = STATUS_DONE
        return None
    req = _chat_request(
        CLARIFY_SYSTEM,
        f"USER QUESTION:\n{inp.text}\n\nDIALOGUE SO FAR:\n{_transcript(state)}\n\n"
        "Is the intention clear, or what should be asked next?",
    )
    try:
        value, _ = constrained_json(chat, req, CLARIFY_SCHEMA, cfg.providers)
    except MalformedModelOutput:
        state.status = STATUS_DONE
        return None
    question_text = (value.get("question") or "").strip()
    if value["done"] or not question_text:
        state.status = STATUS_DONE
        return None
    state.rounds_used += 1
    state.asked_questions.append(question_text)
    options = tuple(o for o in value.get("options", []) if o.strip())
    return Question(text=question_text, options=options)


def finalize_intent(
    inp: UserInput,
    state: ClarificationState,
    label: str,
    chat: ChatProvider,
    cfg: PipelineConfig,
) -> ClarifiedIntent:
    """Produce the clarified intention once the dialogue (if any) is over.

    SIMPLE questions skip the model entirely: the intention is the question,
    seeded with itself as a single sub-query so the pipeline can run even if
    generalization later fails.
    """
    if label == SIMPLE:
        return ClarifiedIntent(
            intent_text=inp.text,
            sub_queries=[SubQuery(text=inp.text[:MAX_SUBQUERY_CHARS], purpose="other")],
        )
    if state.status != STATUS_DONE:
        raise ValueError("clarification still pending")
    req = _chat_request(
        FINALIZE_SYSTEM,
        f"USER QUESTION:\n{inp.text}\n\nCLARIFICATION TRANSCRIPT:\n{_transcript(state)}\n\n"
        "Summarize the clarified intention.",
    )
    value, _ = constrained_json(chat, req, FINALIZE_SCHEMA, cfg.providers)
    return ClarifiedIntent(
        intent_text=value["intent_text"],
        priorities=list(value["priorities"]),
        background_facts=list(value["background_facts"]),
    )


def _clean_sub_queries(raw: list[dict], cap: int) -> list[SubQuery]:
    # Truncate, drop empties, dedup by exact text keeping model order, cap.
    out: list[SubQuery] = []
    seen: set[str] = set()
    for row in raw:
        text = row["text"].strip()[:MAX_SUBQUERY_CHARS]
        if not text or text in seen:
            continue
        seen.add(text)
        out.append(SubQuery(text=text, purpose=row["purpose"]))
        if len(out) == cap:
            break
    return out


def _generalize_user_text(intent: ClarifiedIntent) -> str:
    priorities = "\n".join(f"- {p}" for p in intent.priorities) or "(none)"
    background = "\n".join(f"- {b}" for b in intent.background_facts) or "(none)"
    return (
        f"CLARIFIED INTENT:\n{intent.intent_text}\n\n"
        f"PRIORITIES:\n{priorities}\n\n"
        f"BACKGROUND:\n{background}\n\n"
        "Generate the sub-queries."
    )


def generalize(
    intent: ClarifiedIntent, chat: ChatProvider, cfg: PipelineConfig
) -> ClarifiedIntent:
    """Populate ``sub_queries`` from the clarified intention.

    The community-first rule is structural: a health-topical intention must
    yield at least one community_service or scheme sub-query. A violation (or
    an empty list) gets exactly one corrective re-prompt before erroring, so a
    ClarifiedIntent leaving here always satisfies the rule.
    """
    req = _chat_request(GENERALIZE_SYSTEM, _generalize_user_text(intent))
    value, _ = constrained_json(chat, req, GENERALIZE_SCHEMA, cfg.providers)
    subs = _clean_sub_queries(value["sub_queries"], cfg.optimizer.max_subqueries)
    problem = _structural_problem(subs, value["health_topical"])
    if problem is not None:
        retry = _chat_request(
            GENERALIZE_SYSTEM,
            _generalize_user_text(intent)
            + f"\n\nYour previous sub-query list was rejected: {problem} "
            "Produce a corrected list.",
        )
        value, _ = constrained_json(chat, retry, GENERALIZE_SCHEMA, cfg.providers)
        subs = _clean_sub_queries(value["sub_queries"], cfg.optimizer.max_subqueries)
        problem = _structural_problem(subs, value["health_topical"])
        if problem is not None:
            if not subs:
                raise EmptySubQueries("model produced no usable sub-queries")
            raise MalformedModelOutput(f"sub-query list invalid after repair: {problem}")
    return replace(intent, sub_queries=subs)


def _structural_problem(subs: list[SubQuery], health_topical: bool) -> str | None:
    if not subs:
        return "it contained no usable sub-queries."
    if health_topical and not any(s.purpose in COMMUNITY_PURPOSES for s in subs):
        return (
            "the intention is health-topical but no sub-query has purpose "
            "community_service or scheme."
        )
    return None
