"""Markdown corpus ingestion and two-level parent/child chunking.

Documents carry required front matter (source, authority tier, update date)
because those fields drive evidence precedence later; a file without them is
rejected rather than silently defaulted. Chunking splits on heading boundaries
first, then on word-count windows, and prepends the enclosing heading to every
parent so facts stated only in a title stay retrievable.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

from .config import ChunkingConfig
from .errors import (
    BadDate,
    BadTier,
    EmptyDocument,
    MissingField,
    MissingFrontMatter,
)

FRONT_MATTER_FIELDS = ("title", "source_url", "authority_tier", "updated_time", "language")

_HEADING_RE = re.compile(r"^(#{1,6})\s+(.*\S)\s*$")
_TOKEN_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class DocumentMeta:
    title: str
    source_url: str
    authority_tier: int  # 0 = government-certified, 1 = other official, 2 = general
    updated_time: date
    language: str


@dataclass(frozen=True)
class Document:
    doc_id: str
    meta: DocumentMeta
    body: str


@dataclass(frozen=True)
class ParentChunk:
    parent_id: str
    doc_id: str
    heading_path: tuple[str, ...]
    text: str
    ordinal: int


@dataclass(frozen=True)
class ChildChunk:
    child_id: str
    parent_id: str
    text: str
    ordinal: int


@dataclass
class IngestFileError:
    path: str
    error: str


@dataclass
class RepositorySnapshot:
    """Immutable result of ingesting a corpus directory."""

    documents: list[Document] = field(default_factory=list)
    parents: list[ParentChunk] = field(default_factory=list)
    children: list[ChildChunk] = field(default_factory=list)
    errors: list[IngestFileError] = field(default_factory=list)

    def __post_init__(self):
        self._docs_by_id = {d.doc_id: d for d in self.documents}
        self._parents_by_id = {p.parent_id: p for p in self.parents}
        self._children_by_id = {c.child_id: c for c in self.children}

    @property
    def stats(self) -> dict:
        return {
            "documents": len(self.documents),
            "parents": len(self.parents),
            "children": len(self.children),
            "errors": len(self.errors),
        }

    def document(self, doc_id: str) -> Document | None:
        return self._docs_by_id.get(doc_id)

    def parent(self, parent_id: str) -> ParentChunk | None:
        return self._parents_by_id.get(parent_id)

    def child(self, child_id: str) -> ChildChunk | None:
        return self._children_by_id.get(child_id)

    def meta_for_parent(self, parent_id: str) -> DocumentMeta:
        parent = self._parents_by_id[parent_id]
        return self._docs_by_id[parent.doc_id].meta


def parse_front_matter(raw: str) -> tuple[DocumentMeta, str]:
    """Split a Markdown file into (metadata, body).

    The file must open with a ``---`` line, ``key: value`` pairs, and a closing
    ``---`` line. ``language`` defaults to "und" when absent; the other four
    fields are required.
    """
    text = raw.lstrip("﻿")
    lines = text.split("\n")
    if not lines or lines[0].strip() != "---":
        raise MissingFrontMatter("file does not start with a '---' front-matter block")
    fields: dict[str, str] = {}
    close = None
    for i, line in enumerate(lines[1:], start=1):
        if line.strip() == "---":
            close = i
            break
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            continue  # tolerate stray lines; required-field checks catch real gaps
        fields[key.strip()] = value.strip()
    if close is None:
        raise MissingFrontMatter("front-matter block is never closed with '---'")
    body = "\n".join(lines[close + 1 :])

    for name in ("title", "source_url", "authority_tier", "updated_time"):
        if not fields.get(name):
            raise MissingField(name)
    tier_raw = fields["authority_tier"]
    try:
        tier = int(tier_raw)
    except ValueError:
        raise BadTier(tier_raw) from None
    if tier not in (0, 1, 2):
        raise BadTier(tier)
    try:
        updated = date.fromisoformat(fields["updated_time"])
    except ValueError:
        raise BadDate(fields["updated_time"]) from None

    meta = DocumentMeta(
        title=fields["title"],
        source_url=fields["source_url"],
        authority_tier=tier,
        updated_time=updated,
        language=fields.get("language") or "und",
    )
    return meta, body


def _token_spans(text: str) -> list[tuple[int, int]]:
    return [m.span() for m in _TOKEN_RE.finditer(text)]


def _window_slices(text: str, max_tokens: int) -> list[str]:
    """Cut ``text`` into pieces of at most ``max_tokens`` whitespace tokens.

    Pieces are contiguous substrings of the input, so no characters are
    invented and internal whitespace survives.
    """
    spans = _token_spans(text)
    if not spans:
        return []
    pieces = []
    for start in range(0, len(spans), max_tokens):
        window = spans[start : start + max_tokens]
        pieces.append(text[window[0][0] : window[-1][1]])
    return pieces


def _sections(body: str) -> list[tuple[tuple[str, ...], str]]:
    """Split a document at ATX headings.

    Each section's raw text includes its own heading line, so concatenating
    section texts covers the whole body. The heading path tracks the stack of
    enclosing headings at each point.
    """
    sections: list[tuple[tuple[str, ...], list[str]]] = []
    stack: list[tuple[int, str]] = []
    current: list[str] = []
    current_path: tuple[str, ...] = ()

    def flush():
        nonlocal current
        if any(line.strip() for line in current):
            sections.append((current_path, current))
        current = []

    for line in body.split("\n"):
        m = _HEADING_RE.match(line)
        if m:
            flush()
            level = len(m.group(1))
            while stack and stack[-1][0] >= level:
                stack.pop()
            stack.append((level, m.group(2)))
            current_path = tuple(text for _, text in stack)
        current.append(line)
    flush()
    return [(path, "\n".join(lines)) for path, lines in sections]


def heading_prefix(heading_path: tuple[str, ...]) -> str:
    """The text prepended to every parent of a section ("" for preamble text)."""
    return heading_path[-1] + "\n" if heading_path else ""


def chunk_document(
    doc: Document, cfg: ChunkingConfig
) -> tuple[list[ParentChunk], list[ChildChunk]]:
    """Chunk one document into parents (context units) and children (retrieval units)."""
    if not doc.body.strip():
        raise EmptyDocument(f"document {doc.doc_id} has no content")
    parents: list[ParentChunk] = []
    children: list[ChildChunk] = []
    for heading_path, section_text in _sections(doc.body):
        prefix = heading_prefix(heading_path)
        prefix_tokens = len(_token_spans(prefix))
        # Budget the raw slice so the parent stays within parent_words after
        # the heading prepend.
        budget = max(1, cfg.parent_words - prefix_tokens)
        for piece in _window_slices(section_text, budget):
            ordinal = len(parents)
            parent = ParentChunk(
                parent_id=f"{doc.doc_id}-p{ordinal:03d}",
                doc_id=doc.doc_id,
                heading_path=heading_path,
                text=prefix + piece,
                ordinal=ordinal,
            )
            parents.append(parent)
            for child_ordinal, child_text in enumerate(
                _window_slices(parent.text, cfg.child_words)
            ):
                children.append(
                    ChildChunk(
                        child_id=f"{parent.parent_id}-c{child_ordinal:03d}",
                        parent_id=parent.parent_id,
                        text=child_text,
                        ordinal=child_ordinal,
                    )
                )
    return parents, children


def make_doc_id(rel_path: str, body: str) -> str:
    digest = hashlib.sha256()
    digest.update(rel_path.encode("utf-8"))
    digest.update(b"\x00")
    digest.update(body.encode("utf-8"))
    return digest.hexdigest()[:16]


def ingest_directory(path: str | Path, cfg: ChunkingConfig) -> RepositorySnapshot:
    """Parse and chunk every ``.md`` file under ``path``.

    Files are processed in lexicographic path order so ids and ordinals are
    reproducible. Per-file failures are recorded and do not abort the batch.
    """
    root = Path(path)
    if not root.is_dir():
        raise OSError(f"corpus directory {root} does not exist")
    documents: list[Document] = []
    parents: list[ParentChunk] = []
    children: list[ChildChunk] = []
    errors: list[IngestFileError] = []
    for file in sorted(root.rglob("*.md"), key=lambda p: p.relative_to(root).as_posix()):
        rel = file.relative_to(root).as_posix()
        try:
            raw = file.read_text(encoding="utf-8")
            meta, body = parse_front_matter(raw)
            doc = Document(doc_id=make_doc_id(rel, body), meta=meta, body=body)
            doc_parents, doc_children = chunk_document(doc, cfg)
        except (OSError, UnicodeDecodeError) as exc:
            errors.append(IngestFileError(path=rel, error=f"unreadable: {exc}"))
            continue
        except (MissingFrontMatter, MissingField, BadTier, BadDate, EmptyDocument) as exc:
            errors.append(IngestFileError(path=rel, error=str(exc)))
            continue
        documents.append(doc)
        parents.extend(doc_parents)
        children.extend(doc_children)
    return RepositorySnapshot(
        documents=documents, parents=parents, children=children, errors=errors
    )
