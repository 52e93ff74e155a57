"""Shared builders: corpora on disk, provider sets, and pipeline runtimes.

Everything here is deterministic. Chat behavior is controlled per test via
MockChatProvider scripts; the rule-based defaults cover any tag a test does
not care about.
"""

from __future__ import annotations

from datetime import date
from pathlib import Path

import pytest

from priha.config import PipelineConfig, ProvidersConfig
from priha.corpus import RepositorySnapshot, ingest_directory
from priha.indexing import build_indexes
from priha.pipeline import Runtime
from priha.providers import (
    FixedClock,
    MockChatProvider,
    MockEmbedder,
    MockFetcher,
    MockSearchProvider,
    PageSpec,
    ProviderSet,
)

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def make_config(**overrides) -> PipelineConfig:
    cfg = PipelineConfig()
    cfg.providers = ProvidersConfig(kind="mock", retry_backoff_s=0.0)
    for name, value in overrides.items():
        if "__" in name:
            section, key = name.split("__", 1)
            setattr(getattr(cfg, section), key, value)
        else:
            setattr(cfg, name, value)
    return cfg


def make_providers(
    scripts: dict | None = None,
    search_table: dict | None = None,
    pages: dict | None = None,
    default_results=None,
    rerank=None,
    use_defaults: bool = True,
) -> ProviderSet:
    return ProviderSet(
        chat=MockChatProvider(scripts=scripts, use_defaults=use_defaults),
        embedder=MockEmbedder(),
        search=MockSearchProvider(table=search_table, default_results=default_results),
        fetcher=MockFetcher(pages=pages),
        rerank=rerank,
        clock=FixedClock(),
    )


def write_doc(
    directory: Path,
    name: str,
    body: str,
    *,
    title: str = "Untitled",
    source_url: str = "https://www.gov.hk/x",
    tier: int = 0,
    updated: str = "2024-01-01",
    language: str = "en",
) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / name
    front = (
        "---\n"
        f"title: {title}\n"
        f"source_url: {source_url}\n"
        f"authority_tier: {tier}\n"
        f"updated_time: {updated}\n"
        f"language: {language}\n"
        "---\n"
    )
    path.write_text(front + body, encoding="utf-8")
    return path


def page(body_text: str, status: int = 200, location: str | None = None) -> PageSpec:
    html = f"<html><body><p>{body_text}</p></body></html>"
    return PageSpec(status=status, body=html, location=location)


def build_runtime_over(
    corpus_dir: Path | None,
    cfg: PipelineConfig,
    providers: ProviderSet,
    safelist=None,
) -> Runtime:
    from priha.agent import Safelist
    from priha.indexing import KeywordIndex, VectorIndex

    snapshot = RepositorySnapshot()
    kw, vec = KeywordIndex(), VectorIndex()
    if corpus_dir is not None:
        snapshot = ingest_directory(corpus_dir, cfg.chunking)
        kw, vec = build_indexes(snapshot, providers.embedder)
    return Runtime(
        cfg=cfg,
        providers=providers,
        snapshot=snapshot,
        kw_index=kw,
        vec_index=vec,
        safelist=safelist or Safelist(),
    )


@pytest.fixture(scope="session")
def fixture_snapshot() -> RepositorySnapshot:
    return ingest_directory(FIXTURES / "corpus", PipelineConfig().chunking)


@pytest.fixture()
def mock_cfg() -> PipelineConfig:
    return make_config()


# Conflict scenario: a stale local rule against a fresh web page.
STALE_DOC_URL = "https://www.gov.hk/en/residents/health/voucher-rules"
FRESH_WEB_URL = "https://www.healthbureau.gov.hk/voucher-extension"
ZHUHAI_QUESTION = "Can the elderly health care voucher be used at Zhuhai People's Hospital?"

STALE_BODY = (
    "# Where vouchers work\n\n"
    "The voucher can be used at enrolled private clinics in Hong Kong and at "
    "selected institutions under the Greater Bay Area pilot. The voucher "
    "cannot be used at Zhuhai People's Hospital.\n"
)

FRESH_PAGE_TEXT = (
    "From 2025 the pilot covers Zhuhai People's Hospital. Eligible elders can "
    "now use the voucher there; the earlier exclusion no longer applies. "
    "Present your identity card at the service counter."
)


def write_stale_corpus(directory: Path) -> Path:
    write_doc(
        directory,
        "voucher-rules.md",
        STALE_BODY,
        title="Elderly Health Care Voucher rules",
        source_url=STALE_DOC_URL,
        tier=0,
        updated="2023-05-12",
    )
    write_doc(
        directory,
        "dental.md",
        "# Dental care\n\nSubsidised dental services exist for elders at NGO clinics.\n",
        title="Dental services",
        source_url="https://www.gov.hk/en/residents/health/dental",
        tier=1,
        updated="2024-02-11",
    )
    return directory


def make_safelist(entries: list[tuple[str, int]]):
    from priha.agent import Safelist, SafelistEntry

    return Safelist(entries=tuple(SafelistEntry(pattern=p, tier=t) for p, t in entries))


def zhuhai_runtime(tmp_path: Path, *, scripts: dict | None = None) -> Runtime:
    """Runtime whose corpus holds the stale rule and whose web has the update."""
    corpus = write_stale_corpus(tmp_path / "corpus")
    table = {
        ZHUHAI_QUESTION: [
            {
                "url": FRESH_WEB_URL,
                "title": "Voucher pilot expanded",
                "snippet": "Zhuhai People's Hospital joins the pilot scheme.",
            }
        ]
    }
    pages = {FRESH_WEB_URL: page(FRESH_PAGE_TEXT)}
    providers = make_providers(scripts=scripts, search_table=table, pages=pages)
    cfg = make_config(corpus_path=str(corpus))
    return build_runtime_over(
        corpus, cfg, providers, safelist=make_safelist([("gov.hk", 0), ("ha.org.hk", 1)])
    )
