"""Orchestration: per-question pipeline runs, sessions, and persistence.

``run_pipeline`` fans the clarified intention's sub-queries out across the
two retrieval channels (per the configured mode), reconciles the evidence and
returns the cited answer plus a JSON-ready trace of every stage. Provider
calls are counted through thin wrappers so a trace can prove that disabled
channels were never touched.

``AssistantService`` owns the session lifecycle around it: classify, clarify
turn by turn, answer, persist. One lock per session serializes its mutations;
the corpus snapshot and indexes are shared immutable.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

from .agent import AgentRound, Safelist, load_safelist, round_to_dict, run_agent_loop
from .config import MODES, PipelineConfig
from .corpus import RepositorySnapshot, ingest_directory
from .errors import (
    CorruptSession,
    PipelineFailed,
    PrihaError,
    ProviderError,
    RerankerUnavailable,
    SessionNotFound,
)
from .indexing import (
    KeywordIndex,
    VectorIndex,
    build_indexes,
    keyword_search,
    load_index,
    merge_pools,
    semantic_search,
)
from .optimizer import (
    COMPLEX,
    SIMPLE,
    STATUS_DONE,
    ClarificationState,
    ClarifiedIntent,
    Question,
    SubQuery,
    UserInput,
    classify_intent,
    finalize_intent,
    generalize,
    next_clarification,
    record_answer,
)
from .providers import ProviderSet, build_provider_set
from .reconcile import (
    Citation,
    FinalResponse,
    UserProfile,
    assemble_context,
    build_profile,
    synthesize,
)
from .rerank import (
    RankedContext,
    fuse_fallback,
    rerank_external,
    resolve_parents,
    topk_filter,
)

KIND_CLARIFYING = "clarifying_question"
KIND_FINAL = "final_answer"
KIND_ERROR = "error"

PHASE_AWAITING = "awaiting_input"
PHASE_CLARIFYING = "clarifying"
PHASE_ANSWERED = "answered"


class Counters:
    """Thread-safe tally of externally visible calls during one pipeline run."""

    FIELDS = ("searches", "fetches", "index_queries", "embed_calls", "chat_calls")

    def __init__(self):
        self._lock = threading.Lock()
        self._values = {name: 0 for name in self.FIELDS}

    def bump(self, name: str, by: int = 1) -> None:
        with self._lock:
            self._values[name] += by

    def as_dict(self) -> dict[str, int]:
        with self._lock:
            return dict(self._values)


class _CountingSearch:
    def __init__(self, inner, counters: Counters):
        self._inner = inner
        self._counters = counters

    def search(self, query: str, limit: int = 10):
        self._counters.bump("searches")
        return self._inner.search(query, limit)


class _CountingFetcher:
    def __init__(self, inner, counters: Counters):
        self._inner = inner
        self._counters = counters

    def fetch(self, url: str):
        self._counters.bump("fetches")
        return self._inner.fetch(url)


class _CountingEmbedder:
    def __init__(self, inner, counters: Counters):
        self._inner = inner
        self._counters = counters

    def embed(self, texts):
        self._counters.bump("embed_calls")
        return self._inner.embed(texts)


class _CountingChat:
    def __init__(self, inner, counters: Counters):
        self._inner = inner
        self._counters = counters

    def complete(self, req):
        self._counters.bump("chat_calls")
        return self._inner.complete(req)


def _counted(providers: ProviderSet, counters: Counters) -> ProviderSet:
    return ProviderSet(
        chat=_CountingChat(providers.chat, counters),
        embedder=_CountingEmbedder(providers.embedder, counters),
        search=_CountingSearch(providers.search, counters),
        fetcher=_CountingFetcher(providers.fetcher, counters),
        rerank=providers.rerank,
        clock=providers.clock,
    )


@dataclass
class Runtime:
    """Everything a pipeline run needs, built once at startup."""

    cfg: PipelineConfig
    providers: ProviderSet
    snapshot: RepositorySnapshot
    kw_index: KeywordIndex
    vec_index: VectorIndex
    safelist: Safelist


def build_runtime(cfg: PipelineConfig, providers: ProviderSet | None = None) -> Runtime:
    """Ingest, index and load the safelist as the configured mode requires.

    Structures a mode cannot use stay empty, which keeps mode discipline
    honest: a web_only runtime has no index to query at all.
    """
    if cfg.mode not in MODES:
        raise ValueError(f"unknown mode {cfg.mode!r}")
    providers = providers or build_provider_set(cfg)
    needs_local = cfg.mode in ("local_only", "dual")
    needs_web = cfg.mode in ("web_only", "dual")
    snapshot = RepositorySnapshot()
    kw_index, vec_index = KeywordIndex(), VectorIndex()
    if needs_local and cfg.corpus_path:
        snapshot = ingest_directory(cfg.corpus_path, cfg.chunking)
        if cfg.index_path and Path(cfg.index_path).is_file():
            kw_index, vec_index = load_index(cfg.index_path)
            expected = [c.child_id for c in snapshot.children]
            if vec_index.child_ids != expected:
                raise PrihaError(
                    f"index file {cfg.index_path} does not match the corpus; "
                    "re-run ingest"
                )
        else:
            kw_index, vec_index = build_indexes(snapshot, providers.embedder)
    safelist = Safelist()
    if needs_web and cfg.safelist_path:
        safelist = load_safelist(cfg.safelist_path)
    return Runtime(
        cfg=cfg,
        providers=providers,
        snapshot=snapshot,
        kw_index=kw_index,
        vec_index=vec_index,
        safelist=safelist,
    )


def _local_channel(
    rt: Runtime, providers: ProviderSet, counters: Counters, query: str
) -> tuple[RankedContext, dict]:
    cfg = rt.cfg
    kw = keyword_search(rt.kw_index, query, cfg.retrieval.pool_size)
    counters.bump("index_queries")
    sem = semantic_search(rt.vec_index, query, providers.embedder, cfg.retrieval.pool_size)
    counters.bump("index_queries")
    pool = merge_pools(kw, sem)
    fragment: dict = {
        "keyword_hits": len(kw),
        "semantic_hits": len(sem),
        "pool": len(pool),
        "ranker": None,
        "ranked": [],
        "parents": [],
    }
    if not pool:
        return [], fragment
    if providers.rerank is not None:
        try:
            ranked = rerank_external(query, pool, rt.snapshot, providers.rerank)
            threshold = cfg.rerank.min_score_external
            fragment["ranker"] = "external"
        except RerankerUnavailable:
            ranked = fuse_fallback(kw, sem, cfg.rerank.rrf_k)
            threshold = cfg.rerank.min_score_rrf
            fragment["ranker"] = "rrf_fallback"
    else:
        ranked = fuse_fallback(kw, sem, cfg.rerank.rrf_k)
        threshold = cfg.rerank.min_score_rrf
        fragment["ranker"] = "rrf"
    top = topk_filter(ranked, cfg.rerank.k, threshold)
    context = resolve_parents(top, rt.snapshot)
    fragment["ranked"] = [{"child_id": cid, "score": score} for cid, score in top]
    fragment["parents"] = [entry.parent.parent_id for entry in context]
    return context, fragment


def _web_channel(
    rt: Runtime, providers: ProviderSet, counters: Counters, query: str
) -> tuple[list, dict]:
    evidence, rounds = run_agent_loop(query, rt.safelist, providers, rt.cfg)
    fragment = {
        "rounds": [round_to_dict(r) for r in rounds],
        "evidence": [
            {
                "url": ev.url,
                "final_url": ev.final_url,
                "title": ev.title,
                "authority_tier": ev.authority_tier,
                "fetched_at": ev.fetched_at.isoformat(),
            }
            for ev in evidence
        ],
    }
    return evidence, fragment


def run_pipeline(
    intent: ClarifiedIntent, mode: str, rt: Runtime
) -> tuple[FinalResponse, dict]:
    """Run retrieval, reconciliation and synthesis for one clarified intention.

    Channel failures degrade to an empty channel and are recorded in the
    trace; only a dual run where every sub-query failed on both channels
    raises PipelineFailed. The returned trace is JSON-ready and carries call
    counters proving which channels ran.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    sub_queries = [sq.text for sq in intent.sub_queries]
    if mode != "zeroshot" and not sub_queries:
        raise ValueError("intent has no sub-queries")
    counters = Counters()
    providers = _counted(rt.providers, counters)
    started = rt.providers.clock.now().isoformat()

    run_local = mode in ("local_only", "dual")
    run_web = mode in ("web_only", "dual")
    local_map: dict[str, RankedContext] = {}
    web_map: dict[str, list] = {}
    local_trace: dict[str, dict] = {}
    web_trace: dict[str, dict] = {}

    if mode != "zeroshot":
        tasks: list[tuple[str, str]] = []
        if run_local:
            tasks.extend(("local", q) for q in sub_queries)
        if run_web:
            tasks.extend(("web", q) for q in sub_queries)
        workers = max(1, rt.cfg.providers.max_concurrent)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                (channel, q): pool.submit(
                    _local_channel if channel == "local" else _web_channel,
                    rt,
                    providers,
                    counters,
                    q,
                )
                for channel, q in tasks
            }
        for (channel, q), future in futures.items():
            trace_slot = local_trace if channel == "local" else web_trace
            try:
                result, fragment = future.result()
                fragment["error"] = None
            except ProviderError as exc:
                result, fragment = [], {"error": f"{type(exc).__name__}: {exc}"}
            trace_slot[q] = fragment
            if channel == "local":
                local_map[q] = result
            else:
                web_map[q] = result

    if mode == "dual" and sub_queries:
        all_local_failed = all(local_trace[q].get("error") for q in sub_queries)
        all_web_failed = all(web_trace[q].get("error") for q in sub_queries)
        if all_local_failed and all_web_failed:
            raise PipelineFailed("both retrieval channels failed for every sub-query")

    profile = build_profile(intent)
    items = assemble_context(
        local_map, web_map, profile, rt.cfg.reconciler.context_budget_chars
    )
    response = synthesize(intent, items, profile, providers.chat, rt.cfg)
    finished = rt.providers.clock.now().isoformat()

    trace = {
        "trace_id": "",
        "mode": mode,
        "started": started,
        "finished": finished,
        "intent": {
            "intent_text": intent.intent_text,
            "priorities": list(intent.priorities),
            "background_facts": list(intent.background_facts),
            "sub_queries": [
                {"text": sq.text, "purpose": sq.purpose} for sq in intent.sub_queries
            ],
        },
        "channels": {"local": local_trace, "web": web_trace},
        "reconciler": {
            "budget_chars": rt.cfg.reconciler.context_budget_chars,
            "assembled": [
                {
                    "eid": item.eid,
                    "origin": item.origin,
                    "authority_tier": item.authority_tier,
                    "date": item.date.isoformat(),
                    "locator": item.locator,
                    "title": item.title,
                    "chars": len(item.text),
                }
                for item in items
            ],
        },
        "answer": {
            "text": response.answer,
            "references": [_citation_row(c) for c in response.references],
            "disclaimers": list(response.disclaimers),
        },
        "counters": counters.as_dict(),
    }
    digest = hashlib.sha256(
        json.dumps(trace, sort_keys=True, ensure_ascii=False).encode("utf-8")
    ).hexdigest()
    trace["trace_id"] = f"t-{digest[:16]}"
    return response, trace


def _citation_row(c: Citation) -> dict:
    return {
        "n": c.eid,
        "title": c.title,
        "locator": c.locator,
        "kind": c.kind,
        "date": c.date.isoformat(),
    }


@dataclass
class ServerReply:
    kind: str
    text: str
    references: list[dict] = field(default_factory=list)
    options: list[str] = field(default_factory=list)
    trace_id: str | None = None

    def as_dict(self) -> dict:
        payload: dict = {"kind": self.kind, "text": self.text}
        if self.kind == KIND_FINAL:
            payload["references"] = self.references
            payload["trace_id"] = self.trace_id
        if self.kind == KIND_CLARIFYING and self.options:
            payload["options"] = self.options
        return payload


@dataclass
class SessionState:
    session_id: str
    phase: str = PHASE_AWAITING
    transcript: list[dict] = field(default_factory=list)
    clarification: ClarificationState = field(default_factory=ClarificationState)
    pending_question: str | None = None
    pending_label: str | None = None
    intent: ClarifiedIntent | None = None
    last_response: FinalResponse | None = None
    traces: list[dict] = field(default_factory=list)


def session_to_dict(session: SessionState) -> dict:
    intent = None
    if session.intent is not None:
        intent = {
            "intent_text": session.intent.intent_text,
            "priorities": list(session.intent.priorities),
            "background_facts": list(session.intent.background_facts),
            "sub_queries": [
                {"text": sq.text, "purpose": sq.purpose}
                for sq in session.intent.sub_queries
            ],
        }
    response = None
    if session.last_response is not None:
        response = {
            "answer": session.last_response.answer,
            "references": [
                {
                    "eid": c.eid,
                    "title": c.title,
                    "locator": c.locator,
                    "kind": c.kind,
                    "date": c.date.isoformat(),
                }
                for c in session.last_response.references
            ],
            "disclaimers": list(session.last_response.disclaimers),
        }
    return {
        "session_id": session.session_id,
        "phase": session.phase,
        "transcript": list(session.transcript),
        "clarification": {
            "rounds_used": session.clarification.rounds_used,
            "asked_questions": list(session.clarification.asked_questions),
            "user_answers": list(session.clarification.user_answers),
            "status": session.clarification.status,
        },
        "pending_question": session.pending_question,
        "pending_label": session.pending_label,
        "intent": intent,
        "last_response": response,
        "traces": list(session.traces),
    }


def session_from_dict(data: dict) -> SessionState:
    try:
        clar = data["clarification"]
        intent = None
        if data["intent"] is not None:
            intent = ClarifiedIntent(
                intent_text=data["intent"]["intent_text"],
                priorities=list(data["intent"]["priorities"]),
                background_facts=list(data["intent"]["background_facts"]),
                sub_queries=[
                    SubQuery(text=s["text"], purpose=s["purpose"])
                    for s in data["intent"]["sub_queries"]
                ],
            )
        response = None
        if data["last_response"] is not None:
            raw = data["last_response"]
            response = FinalResponse(
                answer=raw["answer"],
                references=[
                    Citation(
                        eid=c["eid"],
                        title=c["title"],
                        locator=c["locator"],
                        kind=c["kind"],
                        date=date.fromisoformat(c["date"]),
                    )
                    for c in raw["references"]
                ],
                disclaimers=list(raw["disclaimers"]),
            )
        return SessionState(
            session_id=data["session_id"],
            phase=data["phase"],
            transcript=list(data["transcript"]),
            clarification=ClarificationState(
                rounds_used=clar["rounds_used"],
                asked_questions=list(clar["asked_questions"]),
                user_answers=list(clar["user_answers"]),
                status=clar["status"],
            ),
            pending_question=data["pending_question"],
            pending_label=data["pending_label"],
            intent=intent,
            last_response=response,
            traces=list(data["traces"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptSession(str(data.get("session_id", "?")), str(exc)) from exc


def persist_session(session: SessionState, store_dir: str | Path) -> Path:
    store = Path(store_dir)
    store.mkdir(parents=True, exist_ok=True)
    path = store / f"{session.session_id}.json"
    payload = json.dumps(
        session_to_dict(session), sort_keys=True, ensure_ascii=False, indent=1
    )
    path.write_text(payload, encoding="utf-8")
    return path


def load_session(session_id: str, store_dir: str | Path) -> SessionState:
    path = Path(store_dir) / f"{session_id}.json"
    if not path.is_file():
        raise SessionNotFound(session_id)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptSession(session_id, str(exc)) from exc
    if not isinstance(data, dict):
        raise CorruptSession(session_id, "store file is not a JSON object")
    return session_from_dict(data)


_SESSION_ID_RE = re.compile(r"^s-(\d{6})$")


class AssistantService:
    """Multi-session front door over one shared Runtime."""

    def __init__(self, rt: Runtime):
        self.rt = rt
        self._sessions: dict[str, SessionState] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._traces: dict[str, dict] = {}
        self._registry_lock = threading.Lock()
        self._next_serial = self._seed_serial()

    def _seed_serial(self) -> int:
        # Continue the numeric id sequence across restarts of a mock-mode store.
        serial = 1
        state_dir = self.rt.cfg.state_dir
        if state_dir and Path(state_dir).is_dir():
            for path in Path(state_dir).glob("s-*.json"):
                match = _SESSION_ID_RE.match(path.stem)
                if match:
                    serial = max(serial, int(match.group(1)) + 1)
        return serial

    def create_session(self) -> SessionState:
        with self._registry_lock:
            if self.rt.cfg.providers.kind == "mock":
                session_id = f"s-{self._next_serial:06d}"
                self._next_serial += 1
            else:
                session_id = f"s-{uuid.uuid4().hex[:12]}"
            session = SessionState(session_id=session_id)
            self._sessions[session_id] = session
            self._locks[session_id] = threading.Lock()
        self._persist(session)
        return session

    def _persist(self, session: SessionState) -> None:
        if self.rt.cfg.state_dir:
            persist_session(session, self.rt.cfg.state_dir)

    def get_session(self, session_id: str) -> SessionState:
        with self._registry_lock:
            session = self._sessions.get(session_id)
            if session is None and self.rt.cfg.state_dir:
                try:
                    session = load_session(session_id, self.rt.cfg.state_dir)
                except SessionNotFound:
                    session = None
                if session is not None:
                    self._sessions[session_id] = session
                    self._locks[session_id] = threading.Lock()
                    for trace in session.traces:
                        self._traces[trace["trace_id"]] = trace
            if session is None:
                raise SessionNotFound(session_id)
            return session

    def get_trace(self, trace_id: str) -> dict | None:
        return self._traces.get(trace_id)

    def health(self) -> dict:
        return {
            "status": "ok",
            "mode": self.rt.cfg.mode,
            "corpus_docs": len(self.rt.snapshot.documents),
            "index_children": len(self.rt.kw_index.doc_len),
        }

    def handle_message(self, session_id: str, text: str) -> ServerReply:
        session = self.get_session(session_id)
        if not text.strip():
            raise ValueError("message text must be non-empty")
        text = text.strip()
        with self._locks[session_id]:
            now = self.rt.providers.clock.now().isoformat()
            session.transcript.append(
                {"role": "user", "kind": "user_message", "text": text, "at": now}
            )
            try:
                reply = self._advance(session, text)
            except PrihaError as exc:
                reply = ServerReply(
                    kind=KIND_ERROR, text=f"{type(exc).__name__}: {exc}"
                )
            session.transcript.append(
                {
                    "role": "assistant",
                    "kind": reply.kind,
                    "text": reply.text,
                    "at": self.rt.providers.clock.now().isoformat(),
                }
            )
            self._persist(session)
            return reply

    def _advance(self, session: SessionState, text: str) -> ServerReply:
        cfg = self.rt.cfg
        chat = self.rt.providers.chat
        if session.phase in (PHASE_AWAITING, PHASE_ANSWERED):
            inp = UserInput(
                text=text,
                timestamp=self.rt.providers.clock.now(),
                session_id=session.session_id,
            )
            label = classify_intent(inp, chat, cfg)
            session.pending_question = text
            session.pending_label = label
            session.clarification = ClarificationState()
            if label == COMPLEX and cfg.optimizer.clarification:
                question = next_clarification(inp, session.clarification, chat, cfg)
                if question is not None:
                    session.phase = PHASE_CLARIFYING
                    return _question_reply(question)
            return self._answer(session, inp, label)
        # phase == clarifying: this message answers the pending question
        record_answer(session.clarification, text)
        inp = UserInput(
            text=session.pending_question or text,
            timestamp=self.rt.providers.clock.now(),
            session_id=session.session_id,
        )
        question = next_clarification(inp, session.clarification, chat, cfg)
        if question is not None:
            return _question_reply(question)
        return self._answer(session, inp, session.pending_label or COMPLEX)

    def _answer(self, session: SessionState, inp: UserInput, label: str) -> ServerReply:
        cfg = self.rt.cfg
        chat = self.rt.providers.chat
        if label == COMPLEX and session.clarification.status != STATUS_DONE:
            session.clarification.status = STATUS_DONE
        intent = finalize_intent(inp, session.clarification, label, chat, cfg)
        if cfg.mode != "zeroshot":
            intent = generalize(intent, chat, cfg)
        response, trace = run_pipeline(intent, cfg.mode, self.rt)
        session.intent = intent
        session.last_response = response
        session.traces.append(trace)
        session.phase = PHASE_ANSWERED
        self._traces[trace["trace_id"]] = trace
        return ServerReply(
            kind=KIND_FINAL,
            text=response.answer,
            references=[_citation_row(c) for c in response.references],
            trace_id=trace["trace_id"],
        )


def _question_reply(question: Question) -> ServerReply:
    return ServerReply(
        kind=KIND_CLARIFYING, text=question.text, options=list(question.options)
    )
