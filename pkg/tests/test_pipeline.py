"""Pipeline orchestration: modes, counters, degradation, sessions, service."""

from __future__ import annotations

import json

import pytest

from priha.errors import (
    CorruptSession,
    EmbeddingProviderError,
    PipelineFailed,
    PrihaError,
    ProviderUnreachable,
    SessionNotFound,
)
from priha.indexing import build_indexes, save_index
from priha.optimizer import ClarifiedIntent, SubQuery
from priha.pipeline import (
    KIND_CLARIFYING,
    KIND_ERROR,
    KIND_FINAL,
    PHASE_ANSWERED,
    PHASE_AWAITING,
    PHASE_CLARIFYING,
    AssistantService,
    Counters,
    ServerReply,
    build_runtime,
    load_session,
    persist_session,
    run_pipeline,
    session_from_dict,
    session_to_dict,
)
from priha.providers import OverlapRerankClient, ScriptedRerankClient

from .conftest import (
    FRESH_WEB_URL,
    STALE_DOC_URL,
    ZHUHAI_QUESTION,
    build_runtime_over,
    make_config,
    make_providers,
    write_stale_corpus,
    zhuhai_runtime,
)


def zhuhai_intent() -> ClarifiedIntent:
    return ClarifiedIntent(
        intent_text=ZHUHAI_QUESTION,
        sub_queries=[SubQuery(text=ZHUHAI_QUESTION, purpose="scheme")],
    )


class TestCounters:
    def test_bump_and_snapshot(self):
        counters = Counters()
        counters.bump("searches")
        counters.bump("fetches", 3)
        view = counters.as_dict()
        assert view["searches"] == 1
        assert view["fetches"] == 3
        assert view["chat_calls"] == 0


class TestBuildRuntime:
    def test_web_only_builds_no_index(self, tmp_path):
        corpus = write_stale_corpus(tmp_path / "corpus")
        safelist = tmp_path / "sl.txt"
        safelist.write_text("gov.hk\t0\n", encoding="utf-8")
        cfg = make_config(
            mode="web_only", corpus_path=str(corpus), safelist_path=str(safelist)
        )
        rt = build_runtime(cfg, make_providers())
        assert rt.snapshot.documents == []
        assert rt.kw_index.n_children == 0
        assert len(rt.safelist.entries) == 1

    def test_local_only_skips_safelist(self, tmp_path):
        corpus = write_stale_corpus(tmp_path / "corpus")
        safelist = tmp_path / "sl.txt"
        safelist.write_text("gov.hk\t0\n", encoding="utf-8")
        cfg = make_config(
            mode="local_only", corpus_path=str(corpus), safelist_path=str(safelist)
        )
        rt = build_runtime(cfg, make_providers())
        assert rt.safelist.entries == ()
        assert rt.kw_index.n_children > 0

    def test_prebuilt_index_loaded_when_it_matches(self, tmp_path):
        corpus = write_stale_corpus(tmp_path / "corpus")
        cfg = make_config(mode="local_only", corpus_path=str(corpus))
        providers = make_providers()
        rt0 = build_runtime(cfg, providers)
        index_path = tmp_path / "index.json"
        save_index(index_path, rt0.kw_index, rt0.vec_index)
        cfg2 = make_config(
            mode="local_only", corpus_path=str(corpus), index_path=str(index_path)
        )
        rt = build_runtime(cfg2, make_providers())
        assert rt.kw_index.postings == rt0.kw_index.postings

    def test_stale_index_rejected(self, tmp_path):
        corpus = write_stale_corpus(tmp_path / "corpus")
        cfg = make_config(mode="local_only", corpus_path=str(corpus))
        rt0 = build_runtime(cfg, make_providers())
        index_path = tmp_path / "index.json"
        save_index(index_path, rt0.kw_index, rt0.vec_index)
        # Corpus changes under the index file.
        (corpus / "dental.md").unlink()
        cfg2 = make_config(
            mode="local_only", corpus_path=str(corpus), index_path=str(index_path)
        )
        with pytest.raises(PrihaError, match="re-run ingest"):
            build_runtime(cfg2, make_providers())

    def test_unknown_mode(self):
        cfg = make_config()
        cfg.mode = "psychic"
        with pytest.raises(ValueError):
            build_runtime(cfg, make_providers())


class TestModeDiscipline:
    def test_zeroshot_touches_nothing(self, tmp_path):
        rt = zhuhai_runtime(tmp_path)
        response, trace = run_pipeline(ClarifiedIntent(intent_text=ZHUHAI_QUESTION), "zeroshot", rt)
        counters = trace["counters"]
        assert counters["searches"] == 0
        assert counters["fetches"] == 0
        assert counters["index_queries"] == 0
        assert counters["embed_calls"] == 0
        assert counters["chat_calls"] == 1
        assert response.references == []

    def test_local_only_never_searches(self, tmp_path):
        rt = zhuhai_runtime(tmp_path)
        _, trace = run_pipeline(zhuhai_intent(), "local_only", rt)
        counters = trace["counters"]
        assert counters["searches"] == 0
        assert counters["fetches"] == 0
        assert counters["index_queries"] == 2
        assert counters["embed_calls"] == 1

    def test_web_only_never_queries_the_index(self, tmp_path):
        rt = zhuhai_runtime(tmp_path)
        _, trace = run_pipeline(zhuhai_intent(), "web_only", rt)
        counters = trace["counters"]
        assert counters["index_queries"] == 0
        assert counters["embed_calls"] == 0
        assert counters["searches"] == 1
        assert counters["fetches"] == 1

    def test_dual_runs_both(self, tmp_path):
        rt = zhuhai_runtime(tmp_path)
        _, trace = run_pipeline(zhuhai_intent(), "dual", rt)
        counters = trace["counters"]
        assert counters["searches"] == 1
        assert counters["index_queries"] == 2

    def test_unknown_mode_rejected(self, tmp_path):
        rt = zhuhai_runtime(tmp_path)
        with pytest.raises(ValueError):
            run_pipeline(zhuhai_intent(), "psychic", rt)

    def test_missing_sub_queries_rejected(self, tmp_path):
        rt = zhuhai_runtime(tmp_path)
        with pytest.raises(ValueError):
            run_pipeline(ClarifiedIntent(intent_text="x"), "dual", rt)


class TestDegradation:
    def test_web_failure_degrades_to_local_answer(self, tmp_path):
        rt = zhuhai_runtime(tmp_path)
        rt.providers.search.table = {}  # every search now raises NoFixture
        response, trace = run_pipeline(zhuhai_intent(), "dual", rt)
        web_fragment = trace["channels"]["web"][ZHUHAI_QUESTION]
        assert web_fragment["error"].startswith("NoFixture")
        local_fragment = trace["channels"]["local"][ZHUHAI_QUESTION]
        assert local_fragment["error"] is None
        assert any(c.locator == STALE_DOC_URL for c in response.references)

    def test_both_channels_down_raises(self, tmp_path):
        rt = zhuhai_runtime(tmp_path)
        rt.providers.search.table = {}

        class BrokenEmbedder:
            def embed(self, texts):
                raise EmbeddingProviderError("embedder offline")

        rt.providers.embedder = BrokenEmbedder()
        with pytest.raises(PipelineFailed):
            run_pipeline(zhuhai_intent(), "dual", rt)

    def test_local_only_with_broken_embedder_degrades_to_empty(self, tmp_path):
        rt = zhuhai_runtime(tmp_path)

        class BrokenEmbedder:
            def embed(self, texts):
                raise EmbeddingProviderError("embedder offline")

        rt.providers.embedder = BrokenEmbedder()
        response, trace = run_pipeline(zhuhai_intent(), "local_only", rt)
        assert trace["channels"]["local"][ZHUHAI_QUESTION]["error"].startswith(
            "EmbeddingProviderError"
        )
        assert response.references == []


class TestRankerSelection:
    def test_external_reranker_recorded(self, tmp_path):
        corpus = write_stale_corpus(tmp_path / "corpus")
        providers = make_providers(rerank=OverlapRerankClient())
        cfg = make_config(corpus_path=str(corpus), mode="local_only")
        rt = build_runtime_over(corpus, cfg, providers)
        _, trace = run_pipeline(zhuhai_intent(), "local_only", rt)
        assert trace["channels"]["local"][ZHUHAI_QUESTION]["ranker"] == "external"

    def test_failed_external_falls_back_to_rrf(self, tmp_path):
        corpus = write_stale_corpus(tmp_path / "corpus")

        def boom(query, docs):
            raise ProviderUnreachable("rerank service down")

        providers = make_providers(rerank=ScriptedRerankClient(boom))
        cfg = make_config(corpus_path=str(corpus), mode="local_only")
        rt = build_runtime_over(corpus, cfg, providers)
        response, trace = run_pipeline(zhuhai_intent(), "local_only", rt)
        assert trace["channels"]["local"][ZHUHAI_QUESTION]["ranker"] == "rrf_fallback"
        assert response.answer

    def test_no_reranker_uses_rrf(self, tmp_path):
        rt = zhuhai_runtime(tmp_path)
        _, trace = run_pipeline(zhuhai_intent(), "local_only", rt)
        assert trace["channels"]["local"][ZHUHAI_QUESTION]["ranker"] == "rrf"


class TestTrace:
    def test_trace_shape_and_id(self, tmp_path):
        rt = zhuhai_runtime(tmp_path)
        response, trace = run_pipeline(zhuhai_intent(), "dual", rt)
        assert trace["trace_id"].startswith("t-")
        assert len(trace["trace_id"]) == 18
        assert trace["mode"] == "dual"
        assert set(trace["channels"]) == {"local", "web"}
        assembled = trace["reconciler"]["assembled"]
        assert [row["eid"] for row in assembled] == list(range(1, len(assembled) + 1))
        assert trace["answer"]["text"] == response.answer
        json.dumps(trace)  # fully JSON-ready

    def test_identical_runs_are_byte_identical(self, tmp_path):
        rt1 = zhuhai_runtime(tmp_path / "one")
        rt2 = zhuhai_runtime(tmp_path / "two")
        resp1, trace1 = run_pipeline(zhuhai_intent(), "dual", rt1)
        resp2, trace2 = run_pipeline(zhuhai_intent(), "dual", rt2)
        dump = lambda t: json.dumps(t, sort_keys=True, ensure_ascii=False)
        assert dump(trace1) == dump(trace2)
        assert resp1 == resp2


class TestServerReply:
    def test_final_payload(self):
        reply = ServerReply(
            kind=KIND_FINAL, text="done", references=[{"n": 1}], trace_id="t-x"
        )
        assert reply.as_dict() == {
            "kind": KIND_FINAL,
            "text": "done",
            "references": [{"n": 1}],
            "trace_id": "t-x",
        }

    def test_clarifying_payload_with_options(self):
        reply = ServerReply(kind=KIND_CLARIFYING, text="Which?", options=["a", "b"])
        assert reply.as_dict() == {
            "kind": KIND_CLARIFYING,
            "text": "Which?",
            "options": ["a", "b"],
        }

    def test_error_payload_is_minimal(self):
        assert ServerReply(kind=KIND_ERROR, text="boom").as_dict() == {
            "kind": KIND_ERROR,
            "text": "boom",
        }


def make_service(tmp_path, *, scripts=None, state_dir=None, clarification=True):
    corpus = write_stale_corpus(tmp_path / "corpus")
    providers = make_providers(scripts=scripts)
    cfg = make_config(
        corpus_path=str(corpus),
        mode="local_only",
        state_dir=str(state_dir) if state_dir else None,
    )
    cfg.optimizer.clarification = clarification
    rt = build_runtime_over(corpus, cfg, providers)
    return AssistantService(rt)


class TestSessions:
    def test_round_trip_equality(self, tmp_path):
        service = make_service(tmp_path)
        session = service.create_session()
        service.handle_message(session.session_id, "Where can elders get dental care?")
        data = session_to_dict(session)
        rebuilt = session_from_dict(json.loads(json.dumps(data)))
        assert session_to_dict(rebuilt) == data
        assert rebuilt.last_response == session.last_response
        assert rebuilt.intent == session.intent

    def test_corrupt_dict_raises(self):
        with pytest.raises(CorruptSession):
            session_from_dict({"session_id": "s-000001"})

    def test_persist_and_load(self, tmp_path):
        service = make_service(tmp_path)
        session = service.create_session()
        path = persist_session(session, tmp_path / "store")
        assert path.name == f"{session.session_id}.json"
        loaded = load_session(session.session_id, tmp_path / "store")
        assert session_to_dict(loaded) == session_to_dict(session)

    def test_load_missing_session(self, tmp_path):
        with pytest.raises(SessionNotFound):
            load_session("s-999999", tmp_path)

    def test_load_corrupt_file(self, tmp_path):
        (tmp_path / "s-000001.json").write_text("{ nope", encoding="utf-8")
        with pytest.raises(CorruptSession):
            load_session("s-000001", tmp_path)

    def test_load_non_object_file(self, tmp_path):
        (tmp_path / "s-000002.json").write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(CorruptSession):
            load_session("s-000002", tmp_path)


class TestService:
    def test_sequential_mock_session_ids(self, tmp_path):
        service = make_service(tmp_path)
        ids = [service.create_session().session_id for _ in range(3)]
        assert ids == ["s-000001", "s-000002", "s-000003"]

    def test_serial_continues_across_restart(self, tmp_path):
        store = tmp_path / "store"
        service1 = make_service(tmp_path, state_dir=store)
        service1.create_session()
        service1.create_session()
        service2 = make_service(tmp_path / "again", state_dir=store)
        assert service2.create_session().session_id == "s-000003"

    def test_empty_message_rejected(self, tmp_path):
        service = make_service(tmp_path)
        session = service.create_session()
        with pytest.raises(ValueError):
            service.handle_message(session.session_id, "   ")

    def test_unknown_session_rejected(self, tmp_path):
        service = make_service(tmp_path)
        with pytest.raises(SessionNotFound):
            service.handle_message("s-404404", "hello")

    def test_simple_question_answers_immediately(self, tmp_path):
        service = make_service(tmp_path)
        session = service.create_session()
        reply = service.handle_message(session.session_id, "Where do elders get dental care?")
        assert reply.kind == KIND_FINAL
        assert reply.trace_id
        assert session.phase == PHASE_ANSWERED
        kinds = [t["kind"] for t in session.transcript]
        assert kinds == ["user_message", KIND_FINAL]

    def test_complex_clarify_then_answer(self, tmp_path):
        scripts = {
            "classify": ['{"label": "COMPLEX"}'],
            "clarify": [
                '{"done": false, "question": "Which district?", "options": ["East", "West"]}',
                '{"done": true, "question": null}',
            ],
        }
        service = make_service(tmp_path, scripts=scripts)
        session = service.create_session()
        first = service.handle_message(session.session_id, "My mother has knee pain, what should we do?")
        assert first.kind == KIND_CLARIFYING
        assert first.options == ["East", "West"]
        assert session.phase == PHASE_CLARIFYING
        second = service.handle_message(session.session_id, "East")
        assert second.kind == KIND_FINAL
        assert session.phase == PHASE_ANSWERED
        assert session.clarification.asked_questions == ["Which district?"]
        assert session.clarification.user_answers == ["East"]

    def test_insatiable_clarifier_capped_at_three_rounds(self, tmp_path):
        scripts = {
            "classify": lambda req: '{"label": "COMPLEX"}',
            "clarify": lambda req: '{"done": false, "question": "More detail?"}',
        }
        service = make_service(tmp_path, scripts=scripts)
        session = service.create_session()
        replies = [service.handle_message(session.session_id, "Complicated care question")]
        for i in range(3):
            replies.append(service.handle_message(session.session_id, f"answer {i}"))
        kinds = [r.kind for r in replies]
        assert kinds == [KIND_CLARIFYING, KIND_CLARIFYING, KIND_CLARIFYING, KIND_FINAL]
        assert session.clarification.rounds_used == 3

    def test_clarification_disabled_answers_complex_directly(self, tmp_path):
        scripts = {"classify": ['{"label": "COMPLEX"}']}
        service = make_service(tmp_path, scripts=scripts, clarification=False)
        session = service.create_session()
        reply = service.handle_message(session.session_id, "A complex care situation")
        assert reply.kind == KIND_FINAL

    def test_pipeline_error_becomes_error_reply(self, tmp_path):
        empty = '{"health_topical": true, "sub_queries": []}'
        scripts = {"generalize": [empty, empty]}
        service = make_service(tmp_path, scripts=scripts)
        session = service.create_session()
        reply = service.handle_message(session.session_id, "Anything at all")
        assert reply.kind == KIND_ERROR
        assert "EmptySubQueries" in reply.text
        assert session.phase == PHASE_AWAITING
        # The session stays usable afterwards.
        follow_up = service.handle_message(session.session_id, "Dental care for elders?")
        assert follow_up.kind == KIND_FINAL

    def test_persisted_session_and_trace_survive_restart(self, tmp_path):
        store = tmp_path / "store"
        service1 = make_service(tmp_path, state_dir=store)
        session = service1.create_session()
        reply = service1.handle_message(session.session_id, "Dental care options?")
        assert reply.kind == KIND_FINAL
        service2 = make_service(tmp_path / "again", state_dir=store)
        reloaded = service2.get_session(session.session_id)
        assert reloaded.phase == PHASE_ANSWERED
        assert service2.get_trace(reply.trace_id) is not None

    def test_health_payload(self, tmp_path):
        service = make_service(tmp_path)
        health = service.health()
        assert health["status"] == "ok"
        assert health["mode"] == "local_only"
        assert health["corpus_docs"] == 2
        assert health["index_children"] > 0
