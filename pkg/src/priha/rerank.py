"""Candidate ordering: external cross-encoder, RRF fallback, parent promotion.

The external reranker is a remote service; when it is not configured or not
reachable the pipeline falls back to Reciprocal Rank Fusion, which is
parameter-light and keeps CI fully offline.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import DocumentMeta, ParentChunk, RepositorySnapshot
from .errors import ProviderError, RerankerUnavailable, UnknownChild
from .indexing import CandidateHit

RRF_K = 60


@dataclass(frozen=True)
class ContextEntry:
    parent: ParentChunk
    best_child_id: str
    score: float
    meta: DocumentMeta


# Ordered parents forwarded to generation for one sub-query.
RankedContext = list[ContextEntry]


def rerank_external(
    query: str,
    hits: list[CandidateHit],
    snapshot: RepositorySnapshot,
    client,
) -> list[tuple[str, float]]:
    """Score each candidate child with the remote cross-encoder.

    The passage sent is the child text, not the parent: the child is what
    matched, and scoring it keeps retrieval precision sharp.
    """
    if not hits:
        raise ValueError("hits must be non-empty")
    documents = []
    for hit in hits:
        child = snapshot.child(hit.child_id)
        if child is None:
            raise UnknownChild(hit.child_id)
        documents.append(child.text)
    try:
        scores = client.rerank(query, documents)
    except ProviderError as exc:
        raise RerankerUnavailable(str(exc)) from exc
    if len(scores) != len(hits):
        raise RerankerUnavailable(
            f"reranker returned {len(scores)} scores for {len(hits)} documents"
        )
    ranked = sorted(
        zip((h.child_id for h in hits), (float(s) for s in scores)),
        key=lambda item: (-item[1], item[0]),
    )
    return ranked


def fuse_fallback(
    kw_ranked: list[tuple[str, float]],
    sem_ranked: list[tuple[str, float]],
    k: int = RRF_K,
) -> list[tuple[str, float]]:
    """Reciprocal Rank Fusion: score(c) = sum over lists of 1/(k + rank).

    Ranks start at 1. Input scores are ignored; only positions matter.
    """
    scores: dict[str, float] = {}
    for ranked in (kw_ranked, sem_ranked):
        for rank, (child_id, _) in enumerate(ranked, start=1):
            scores[child_id] = scores.get(child_id, 0.0) + 1.0 / (k + rank)
    return sorted(scores.items(), key=lambda item: (-item[1], item[0]))


def topk_filter(
    ranked: list[tuple[str, float]], k: int, min_score: float
) -> list[tuple[str, float]]:
    """Keep at most ``k`` items with score >= ``min_score``, order preserved."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return [item for item in ranked if item[1] >= min_score][:k]


def resolve_parents(
    filtered: list[tuple[str, float]], snapshot: RepositorySnapshot
) -> RankedContext:
    """Promote scored children to their parent chunks.

    Several children of one parent collapse into a single entry carrying the
    best-scoring child; parent order follows that best score, which is the
    input order because the input is already ranked.
    """
    context: RankedContext = []
    seen: set[str] = set()
    for child_id, score in filtered:
        child = snapshot.child(child_id)
        if child is None:
            raise UnknownChild(child_id)
        if child.parent_id in seen:
            continue
        seen.add(child.parent_id)
        parent = snapshot.parent(child.parent_id)
        context.append(
            ContextEntry(
                parent=parent,
                best_child_id=child_id,
                score=score,
                meta=snapshot.meta_for_parent(child.parent_id),
            )
        )
    return context
