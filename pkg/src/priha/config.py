"""Pipeline configuration: one JSON document covering every stage.

The config file is a single JSON object whose sections mirror the dataclasses
below; unknown keys are rejected so typos fail loudly. Every knob has the
default it ships with, so an empty ``{}`` file is a valid config.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import PrihaError

CONFIG_ENV = "PRIHA_CONFIG"
LLM_KEY_ENV = "PRIHA_LLM_KEY"

MODES = ("zeroshot", "local_only", "web_only", "dual")


class BadConfig(PrihaError):
    pass


@dataclass
class ChunkingConfig:
    parent_words: int = 800
    child_words: int = 150


@dataclass
class RetrievalConfig:
    pool_size: int = 50
    bm25_k1: float = 1.2
    bm25_b: float = 0.75


@dataclass
class RerankConfig:
    k: int = 6
    # RRF scores are uncalibrated, so no threshold; the external reranker
    # returns calibrated [0,1] scores and gets a real floor.
    min_score_rrf: float = 0.0
    min_score_external: float = 0.30
    rrf_k: int = 60
    endpoint: str | None = None
    model: str | None = None


@dataclass
class OptimizerConfig:
    max_rounds: int = 3
    max_subqueries: int = 6
    clarification: bool = True


@dataclass
class AgentConfig:
    max_iterations: int = 3
    crawl_budget: int = 3
    excerpt_chars: int = 2000


@dataclass
class ReconcilerConfig:
    context_budget_chars: int = 24000


@dataclass
class ProvidersConfig:
    kind: str = "mock"  # "mock" or "http"
    fixtures_dir: str | None = None
    chat_endpoint: str | None = None
    chat_model: str | None = None
    embed_endpoint: str | None = None
    embed_model: str | None = None
    embed_dim: int = 256
    search_endpoint: str | None = None
    max_retries: int = 2
    retry_backoff_s: float = 0.5
    max_concurrent: int = 8
    fetch_timeout_s: float = 10.0
    chat_timeout_s: float = 60.0
    search_timeout_s: float = 10.0
    max_redirects: int = 5


@dataclass
class PipelineConfig:
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    rerank: RerankConfig = field(default_factory=RerankConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    reconciler: ReconcilerConfig = field(default_factory=ReconcilerConfig)
    providers: ProvidersConfig = field(default_factory=ProvidersConfig)
    corpus_path: str | None = None
    safelist_path: str | None = None
    index_path: str | None = None
    state_dir: str | None = None
    mode: str = "dual"


_SECTIONS = {
    "chunking": ChunkingConfig,
    "retrieval": RetrievalConfig,
    "rerank": RerankConfig,
    "optimizer": OptimizerConfig,
    "agent": AgentConfig,
    "reconciler": ReconcilerConfig,
    "providers": ProvidersConfig,
}


def _build_section(cls, data: dict, where: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise BadConfig(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")
    return cls(**data)


def config_from_dict(data: dict) -> PipelineConfig:
    if not isinstance(data, dict):
        raise BadConfig("config root must be a JSON object")
    cfg = PipelineConfig()
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise BadConfig(f"section {key!r} must be an object")
            setattr(cfg, key, _build_section(_SECTIONS[key], value, key))
        elif key in ("corpus_path", "safelist_path", "index_path", "state_dir", "mode"):
            setattr(cfg, key, value)
        else:
            raise BadConfig(f"unknown top-level config key {key!r}")
    if cfg.mode not in MODES:
        raise BadConfig(f"mode must be one of {MODES}, got {cfg.mode!r}")
    return cfg


def load_config(path: str | os.PathLike | None = None) -> PipelineConfig:
    """Load config from ``path``, falling back to $PRIHA_CONFIG, then defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV)
    if path is None:
        return PipelineConfig()
    p = Path(path)
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise BadConfig(f"cannot read config {p}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BadConfig(f"config {p} is not valid JSON: {exc}") from exc
    cfg = config_from_dict(data)
    # Paths in the file are relative to the file itself, so configs are movable.
    base = p.resolve().parent
    for name in ("corpus_path", "safelist_path", "index_path", "state_dir"):
        value = getattr(cfg, name)
        if value is not None and not os.path.isabs(value):
            setattr(cfg, name, str(base / value))
    fx = cfg.providers.fixtures_dir
    if fx is not None and not os.path.isabs(fx):
        cfg.providers.fixtures_dir = str(base / fx)
    return cfg


def validate_startup(cfg: PipelineConfig, *, need_corpus: bool = True) -> None:
    """Check caps and referenced paths before the service starts."""
    caps = [
        ("chunking.parent_words", cfg.chunking.parent_words),
        ("chunking.child_words", cfg.chunking.child_words),
        ("retrieval.pool_size", cfg.retrieval.pool_size),
        ("rerank.k", cfg.rerank.k),
        ("optimizer.max_rounds", cfg.optimizer.max_rounds),
        ("optimizer.max_subqueries", cfg.optimizer.max_subqueries),
        ("agent.max_iterations", cfg.agent.max_iterations),
        ("agent.crawl_budget", cfg.agent.crawl_budget),
        ("agent.excerpt_chars", cfg.agent.excerpt_chars),
        ("reconciler.context_budget_chars", cfg.reconciler.context_budget_chars),
        ("providers.max_concurrent", cfg.providers.max_concurrent),
    ]
    for name, value in caps:
        if value < 1:
            raise BadConfig(f"{name} must be >= 1, got {value}")
    if cfg.chunking.child_words >= cfg.chunking.parent_words:
        raise BadConfig("chunking.child_words must be smaller than parent_words")
    if need_corpus and cfg.mode != "zeroshot":
        if cfg.mode in ("local_only", "dual"):
            if cfg.corpus_path is None:
                raise BadConfig("corpus_path is required for local retrieval")
            if not Path(cfg.corpus_path).is_dir():
                raise BadConfig(f"corpus_path {cfg.corpus_path!r} is not a directory")
        if cfg.mode in ("web_only", "dual"):
            if cfg.safelist_path is None:
                raise BadConfig("safelist_path is required for web retrieval")
            if not Path(cfg.safelist_path).is_file():
                raise BadConfig(f"safelist_path {cfg.safelist_path!r} is not a file")
