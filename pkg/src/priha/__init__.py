"""PriHA: a primary healthcare assistant built on dual local+web retrieval.

The package is organized along the pipeline stages:

- ``corpus``     -- Markdown ingestion and parent/child chunking
- ``indexing``   -- BM25 keyword index and exact vector index over child chunks
- ``rerank``     -- cross-encoder client, RRF fallback, top-k filtering, parent promotion
- ``providers``  -- chat/embedding/search/fetch contracts, HTTP clients and deterministic mocks
- ``optimizer``  -- intent triage, multi-round clarification, sub-query generalization
- ``agent``      -- iterative safelisted web search agent
- ``reconcile``  -- precedence ordering, synthesis, citation validation
- ``pipeline``   -- per-session orchestration and persistence
- ``server``     -- HTTP API
- ``evaluate``   -- dataset runner and LLM-as-judge scoring
"""

__version__ = "0.1.0"
