"""Keyword (BM25) and semantic (vector) indexes over child chunks.

Both indexes are exact and immutable once built: the corpus is desk-scale and
deterministic results matter more than sublinear lookups. Rebuilding produces
a fresh pair that the owner swaps in atomically.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import RepositorySnapshot
from .errors import EmbeddingProviderError, ProviderError

_WORD_RE = re.compile(r"\w+", re.UNICODE)

BM25_K1 = 1.2
BM25_B = 0.75


def _is_cjk(ch: str) -> bool:
    code = ord(ch)
    return 0x3400 <= code <= 0x9FFF or 0xF900 <= code <= 0xFAFF


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; CJK runs are additionally broken into bigrams.

    Bigrams keep keyword search usable for Chinese text, which has no
    whitespace word boundaries.
    """
    tokens: list[str] = []
    for match in _WORD_RE.finditer(text.lower()):
        word = match.group()
        run = ""
        parts: list[str] = []
        run_is_cjk = False
        for ch in word:
            ch_is_cjk = _is_cjk(ch)
            if run and ch_is_cjk != run_is_cjk:
                parts.append(run)
                run = ""
            run = run + ch
            run_is_cjk = ch_is_cjk
        if run:
            parts.append(run)
        for part in parts:
            if _is_cjk(part[0]) and len(part) > 1:
                tokens.extend(part[i : i + 2] for i in range(len(part) - 1))
            else:
                tokens.append(part)
    return tokens


@dataclass
class KeywordIndex:
    """Inverted index with the corpus statistics BM25 needs."""

    postings: dict[str, list[tuple[str, int]]] = field(default_factory=dict)
    doc_len: dict[str, int] = field(default_factory=dict)
    k1: float = BM25_K1
    b: float = BM25_B

    @property
    def n_children(self) -> int:
        return len(self.doc_len)

    @property
    def avgdl(self) -> float:
        if not self.doc_len:
            return 0.0
        return sum(self.doc_len.values()) / len(self.doc_len)


@dataclass
class VectorIndex:
    """Unit-norm embeddings for every child, scanned linearly."""

    child_ids: list[str] = field(default_factory=list)
    matrix: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[1] if self.matrix.size else 0


@dataclass
class CandidateHit:
    child_id: str
    keyword_score: float | None = None
    semantic_score: float | None = None

    @property
    def channels(self) -> frozenset[str]:
        present = []
        if self.keyword_score is not None:
            present.append("keyword")
        if self.semantic_score is not None:
            present.append("semantic")
        return frozenset(present)


def build_indexes(snapshot: RepositorySnapshot, embedder) -> tuple[KeywordIndex, VectorIndex]:
    """Index every child chunk in both structures.

    Embeddings are requested in one batch; if the provider fails, each text is
    retried individually to report which child broke.
    """
    kw = KeywordIndex()
    for child in snapshot.children:
        tokens = tokenize(child.text)
        kw.doc_len[child.child_id] = len(tokens)
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        for token, tf in counts.items():
            kw.postings.setdefault(token, []).append((child.child_id, tf))

    ids = [c.child_id for c in snapshot.children]
    texts = [c.text for c in snapshot.children]
    if not texts:
        return kw, VectorIndex()
    try:
        vectors = embedder.embed(texts)
    except ProviderError:
        # Retry one text at a time: identifies the failing child, and rescues
        # the build when the batch failure was transient.
        vectors = []
        for child_id, text in zip(ids, texts):
            try:
                vectors.append(embedder.embed([text])[0])
            except ProviderError as exc:
                raise EmbeddingProviderError(
                    f"embedding failed for child {child_id}: {exc}", child_id=child_id
                ) from exc
    matrix = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    if np.any(norms == 0):
        bad = ids[int(np.argmax(norms == 0))]
        raise EmbeddingProviderError(f"zero embedding for child {bad}", child_id=bad)
    matrix = matrix / norms[:, None]
    return kw, VectorIndex(child_ids=ids, matrix=matrix)


def bm25_idf(n_children: int, n_term: int) -> float:
    return math.log(1.0 + (n_children - n_term + 0.5) / (n_term + 0.5))


def keyword_search(idx: KeywordIndex, query: str, limit: int) -> list[tuple[str, float]]:
    """Okapi BM25 over the inverted index.

    Duplicate query terms count once. Results are positive-score only, sorted
    by descending score with ascending child_id breaking ties.
    """
    if limit < 1:
        raise ValueError("limit must be >= 1")
    terms = sorted(set(tokenize(query)))
    if not terms or not idx.doc_len:
        return []
    avgdl = idx.avgdl
    scores: dict[str, float] = {}
    for term in terms:
        postings = idx.postings.get(term)
        if not postings:
            continue
        idf = bm25_idf(idx.n_children, len(postings))
        for child_id, tf in postings:
            dl = idx.doc_len[child_id]
            denom = tf + idx.k1 * (1.0 - idx.b + idx.b * dl / avgdl)
            scores[child_id] = scores.get(child_id, 0.0) + idf * tf * (idx.k1 + 1.0) / denom
    ranked = sorted(
        ((cid, s) for cid, s in scores.items() if s > 0.0),
        key=lambda item: (-item[1], item[0]),
    )
    return ranked[:limit]


def semantic_search(
    idx: VectorIndex, query: str, embedder, limit: int
) -> list[tuple[str, float]]:
    """Cosine similarity against the stored unit vectors."""
    if limit < 1:
        raise ValueError("limit must be >= 1")
    if not idx.child_ids:
        return []
    vector = np.asarray(embedder.embed([query])[0], dtype=np.float64)
    norm = np.linalg.norm(vector)
    if norm > 0:
        vector = vector / norm
    sims = idx.matrix @ vector
    ranked = sorted(
        zip(idx.child_ids, (float(s) for s in sims)),
        key=lambda item: (-item[1], item[0]),
    )
    return ranked[:limit]


INDEX_FORMAT = "priha-index"
INDEX_VERSION = 1


def save_index(path, kw: KeywordIndex, vec: VectorIndex) -> None:
    """Write both indexes to one self-describing JSON file."""
    payload = {
        "format": INDEX_FORMAT,
        "version": INDEX_VERSION,
        "keyword": {
            "k1": kw.k1,
            "b": kw.b,
            "doc_len": kw.doc_len,
            "postings": {t: [[cid, tf] for cid, tf in rows] for t, rows in kw.postings.items()},
        },
        "vector": {
            "child_ids": vec.child_ids,
            "rows": vec.matrix.tolist(),
        },
    }
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, sort_keys=True), encoding="utf-8"
    )


def load_index(path) -> tuple[KeywordIndex, VectorIndex]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if data.get("format") != INDEX_FORMAT or data.get("version") != INDEX_VERSION:
        raise ValueError(f"{path} is not a recognized index file")
    kw_raw = data["keyword"]
    kw = KeywordIndex(
        postings={t: [(cid, int(tf)) for cid, tf in rows] for t, rows in kw_raw["postings"].items()},
        doc_len={cid: int(n) for cid, n in kw_raw["doc_len"].items()},
        k1=float(kw_raw["k1"]),
        b=float(kw_raw["b"]),
    )
    vec_raw = data["vector"]
    ids = list(vec_raw["child_ids"])
    rows = vec_raw["rows"]
    matrix = np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, 0))
    return kw, VectorIndex(child_ids=ids, matrix=matrix)


def merge_pools(
    kw: list[tuple[str, float]], sem: list[tuple[str, float]]
) -> list[CandidateHit]:
    """Union the two channels' results by child_id, keeping both scores.

    Output order is child_id-ascending; the reranker decides the real order.
    """
    merged: dict[str, CandidateHit] = {}
    for child_id, score in kw:
        merged[child_id] = CandidateHit(child_id=child_id, keyword_score=score)
    for child_id, score in sem:
        hit = merged.get(child_id)
        if hit is None:
            merged[child_id] = CandidateHit(child_id=child_id, semantic_score=score)
        else:
            hit.semantic_score = score
    return [merged[cid] for cid in sorted(merged)]
