"""Mock provider layers, HTML extraction, retry policy, constrained JSON."""

from __future__ import annotations

import json

import pytest

from priha.config import PipelineConfig, ProvidersConfig
from priha.errors import (
    MalformedModelOutput,
    NoFixture,
    RateLimited,
    TooManyRedirects,
)
from priha.providers import (
    ChatMessage,
    ChatRequest,
    FixedClock,
    MockChatProvider,
    MockEmbedder,
    MockFetcher,
    MockSearchProvider,
    OverlapRerankClient,
    PageSpec,
    build_provider_set,
    chat_complete,
    constrained_json,
    hashed_embedding,
    html_to_text,
    parse_json_output,
    query_slug,
    request_tag,
)


def tagged_request(tag: str, user: str = "hello") -> ChatRequest:
    return ChatRequest(
        messages=[
            ChatMessage(role="system", content=f"[TAG:{tag}] do the thing"),
            ChatMessage(role="user", content=user),
        ]
    )


FAST = ProvidersConfig(kind="mock", retry_backoff_s=0.0)


class TestChatResolution:
    def test_tag_extraction(self):
        assert request_tag(tagged_request("classify")) == "classify"
        assert request_tag(ChatRequest(messages=[])) is None

    def test_callable_script_wins(self):
        chat = MockChatProvider(scripts={"classify": lambda req: '{"label": "COMPLEX"}'})
        assert chat.complete(tagged_request("classify")).text == '{"label": "COMPLEX"}'

    def test_list_script_consumed_in_order_then_falls_through(self):
        chat = MockChatProvider(scripts={"classify": ["one", "two"]})
        req = tagged_request("classify")
        assert chat.complete(req).text == "one"
        assert chat.complete(req).text == "two"
        # Exhausted list falls through to the rule-based default.
        assert json.loads(chat.complete(req).text) == {"label": "SIMPLE"}

    def test_fixture_file_sequence(self, tmp_path):
        llm = tmp_path / "llm"
        llm.mkdir()
        (llm / "clarify.txt").write_text("first\n%%%\nsecond", encoding="utf-8")
        chat = MockChatProvider(fixtures_dir=tmp_path)
        req = tagged_request("clarify")
        assert chat.complete(req).text == "first"
        assert chat.complete(req).text == "second"
        # The last fixture repeats once the sequence is exhausted.
        assert chat.complete(req).text == "second"

    def test_defaults_disabled_raises(self):
        chat = MockChatProvider(use_defaults=False)
        with pytest.raises(NoFixture):
            chat.complete(tagged_request("classify"))

    def test_unknown_tag_has_no_default(self):
        chat = MockChatProvider()
        with pytest.raises(NoFixture):
            chat.complete(tagged_request("mystery"))


class TestChatDefaults:
    def test_finalize_echoes_question_block(self):
        chat = MockChatProvider()
        req = tagged_request("finalize", "USER QUESTION:\nWhere is the clinic?\n\nRest.")
        value = json.loads(chat.complete(req).text)
        assert value["intent_text"] == "Where is the clinic?"

    def test_generalize_produces_community_subquery(self):
        chat = MockChatProvider()
        req = tagged_request("generalize", "CLARIFIED INTENT:\nflu shots\n\nGo.")
        value = json.loads(chat.complete(req).text)
        purposes = {s["purpose"] for s in value["sub_queries"]}
        assert "community_service" in purposes

    def test_synthesize_cites_evidence_lines(self):
        chat = MockChatProvider()
        user = (
            "EVIDENCE:\n"
            "[1] (tier 0, dated 2024-01-01, local) Voucher rules\nbody text\n\n"
            "[2] (tier 1, dated 2025-07-01, web) Fresh page\nmore text\n"
        )
        text = chat.complete(tagged_request("synthesize", user)).text
        assert "[1]" in text and "[2]" in text
        assert "## Summary" in text

    def test_synthesize_without_evidence_has_no_markers(self):
        chat = MockChatProvider()
        text = chat.complete(tagged_request("synthesize", "no evidence here")).text
        assert "[1]" not in text


class TestEmbeddings:
    def test_unit_norm_and_determinism(self):
        v1 = hashed_embedding("flu shots for elders")
        v2 = hashed_embedding("flu shots for elders")
        assert v1 == v2
        assert sum(x * x for x in v1) == pytest.approx(1.0)
        assert len(v1) == 256

    def test_different_texts_differ(self):
        assert hashed_embedding("flu") != hashed_embedding("dental")

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            MockEmbedder().embed([])


class TestSearch:
    def test_slugging(self):
        assert query_slug("Flu Shots, 2024?") == "flu-shots-2024"
        assert query_slug("  ") == "empty"

    def test_table_lookup_assigns_ranks(self):
        table = {"flu": [{"url": "https://a", "title": "A"}, {"url": "https://b"}]}
        results = MockSearchProvider(table=table).search("FLU")
        assert [r.rank for r in results] == [1, 2]
        assert results[1].title == "https://b"

    def test_fixture_file_lookup(self, tmp_path):
        search = tmp_path / "search"
        search.mkdir()
        (search / "flu.json").write_text(
            json.dumps([{"url": "https://x", "title": "X"}]), encoding="utf-8"
        )
        results = MockSearchProvider(fixtures_dir=tmp_path).search("flu")
        assert results[0].url == "https://x"

    def test_limit_truncates(self):
        table = {"q": [{"url": f"https://u{i}"} for i in range(8)]}
        assert len(MockSearchProvider(table=table).search("q", limit=3)) == 3

    def test_missing_fixture_raises(self):
        with pytest.raises(NoFixture):
            MockSearchProvider().search("anything")

    def test_default_results_fallback(self):
        provider = MockSearchProvider(default_results=lambda q: [])
        assert provider.search("whatever") == []

    def test_empty_query_rejected(self):
        with pytest.raises(ValueError):
            MockSearchProvider().search("  ")


class TestFetcher:
    def test_redirect_chain_followed(self):
        pages = {
            "https://a/start": PageSpec(status=302, location="https://b/mid"),
            "https://b/mid": PageSpec(status=301, location="/final"),
            "https://b/final": PageSpec(status=200, body="<p>landed here fine</p>"),
        }
        outcome = MockFetcher(pages=pages).fetch("https://a/start")
        assert outcome.status == 200
        assert outcome.final_url == "https://b/final"
        assert "landed here fine" in outcome.body

    def test_redirect_loop_raises(self):
        pages = {
            "https://a/x": PageSpec(status=302, location="https://a/y"),
            "https://a/y": PageSpec(status=302, location="https://a/x"),
        }
        with pytest.raises(TooManyRedirects):
            MockFetcher(pages=pages, max_redirects=3).fetch("https://a/x")

    def test_exception_spec_is_raised(self):
        pages = {"https://a/x": RateLimited("slow down")}
        with pytest.raises(RateLimited):
            MockFetcher(pages=pages).fetch("https://a/x")

    def test_unknown_url_is_404(self):
        outcome = MockFetcher().fetch("https://nowhere/at/all")
        assert outcome.status == 404
        assert outcome.body == ""

    def test_fixture_dir_lookup(self, tmp_path):
        target = tmp_path / "web" / "www.gov.hk"
        target.mkdir(parents=True)
        (target / "page.html").write_text("<p>from the fixture tree</p>", encoding="utf-8")
        outcome = MockFetcher(fixtures_dir=tmp_path).fetch("https://www.gov.hk/page")
        assert outcome.status == 200
        assert "from the fixture tree" in outcome.body


class TestHtmlToText:
    def test_strips_script_and_collapses_space(self):
        html = "<script>var x=1;</script><p>Hello   there</p><div>Next</div>"
        assert html_to_text(html) == "Hello there\nNext"

    def test_entities_decoded(self):
        assert html_to_text("<p>fish &amp; chips</p>") == "fish & chips"


class TestRetry:
    def test_rate_limit_retried(self):
        calls = []

        class Flaky:
            def complete(self, req):
                calls.append(1)
                if len(calls) < 3:
                    raise RateLimited("wait")
                from priha.providers import ChatResponse

                return ChatResponse(text="ok")

        cfg = ProvidersConfig(max_retries=2, retry_backoff_s=0.0)
        assert chat_complete(Flaky(), tagged_request("x"), cfg).text == "ok"
        assert len(calls) == 3

    def test_retries_exhausted(self):
        class Dead:
            def complete(self, req):
                raise RateLimited("still down")

        cfg = ProvidersConfig(max_retries=1, retry_backoff_s=0.0)
        with pytest.raises(RateLimited):
            chat_complete(Dead(), tagged_request("x"), cfg)


SCHEMA = {
    "$id": "toy",
    "type": "object",
    "properties": {"n": {"type": "integer"}},
    "required": ["n"],
}


class CountingChat:
    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []

    def complete(self, req):
        from priha.providers import ChatResponse

        self.requests.append(req)
        return ChatResponse(text=self.replies.pop(0))


class TestConstrainedJson:
    def test_valid_first_try_is_one_call(self):
        chat = CountingChat(['{"n": 3}'])
        value, repairs = constrained_json(chat, tagged_request("x"), SCHEMA, FAST)
        assert value == {"n": 3}
        assert repairs == 0
        assert len(chat.requests) == 1

    def test_prose_wrapped_json_accepted(self):
        chat = CountingChat(['Sure thing:\n{"n": 7}\nHope that helps.'])
        value, _ = constrained_json(chat, tagged_request("x"), SCHEMA, FAST)
        assert value == {"n": 7}

    def test_repair_appends_error_and_succeeds(self):
        chat = CountingChat(["not json at all", '{"n": 1}'])
        value, repairs = constrained_json(chat, tagged_request("x"), SCHEMA, FAST)
        assert value == {"n": 1}
        assert repairs == 1
        assert len(chat.requests) == 2
        repair_text = chat.requests[1].messages[-1].content
        assert "Validation error" in repair_text

    def test_two_failures_raise_after_exactly_two_calls(self):
        chat = CountingChat(["junk", '{"n": "not an int"}'])
        with pytest.raises(MalformedModelOutput):
            constrained_json(chat, tagged_request("x"), SCHEMA, FAST)
        assert len(chat.requests) == 2

    def test_schema_id_attached_to_request(self):
        chat = CountingChat(['{"n": 1}'])
        constrained_json(chat, tagged_request("x"), SCHEMA, FAST)
        assert chat.requests[0].response_schema == "toy"

    def test_parse_json_output_rejects_no_object(self):
        with pytest.raises(ValueError):
            parse_json_output("plain words only")


class TestAssembly:
    def test_overlap_rerank_scores(self):
        scores = OverlapRerankClient().rerank("flu shot", ["flu season", "dental care"])
        assert scores[0] == pytest.approx(0.5)
        assert scores[1] == 0.0

    def test_build_provider_set_mock(self):
        cfg = PipelineConfig()
        providers = build_provider_set(cfg)
        assert isinstance(providers.chat, MockChatProvider)
        assert isinstance(providers.clock, FixedClock)
        assert providers.rerank is None

    def test_build_provider_set_mock_rerank(self):
        cfg = PipelineConfig()
        cfg.rerank.endpoint = "mock"
        providers = build_provider_set(cfg)
        assert isinstance(providers.rerank, OverlapRerankClient)

    def test_build_provider_set_unknown_kind(self):
        cfg = PipelineConfig()
        cfg.providers.kind = "carrier-pigeon"
        with pytest.raises(ValueError):
            build_provider_set(cfg)
