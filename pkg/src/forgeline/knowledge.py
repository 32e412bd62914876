"""Guideline knowledge base: chunking, hybrid retrieval, TTL cache.

Documents are split on markdown headings and then into 512-character windows
with a 64-character overlap. Retrieval fuses exact BM25 keyword scores with
cosine similarity over a deterministic 256-dimension hashing embedder, each
min-max normalized per query and weighted 0.5/0.5. A time-bounded cache
(default TTL one hour) fronts retrieval; its keys include the store version,
so any ingest invalidates all prior entries.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clock import Clock, system_clock

CHUNK_WINDOW = 512
CHUNK_OVERLAP = 64
EMBED_DIM = 256
BM25_K1 = 1.2
BM25_B = 0.75
DEFAULT_TTL_SECONDS = 3600.0
VECTOR_WEIGHT = 0.5
KEYWORD_WEIGHT = 0.5

_HEADING = re.compile(r"^#{1,6}\s")
_TOKEN = re.compile(r"\w+")


class KnowledgeError(Exception):
    pass


class EmptyDocument(KnowledgeError):
    pass


class EmptyStore(KnowledgeError):
    pass


@dataclass(frozen=True)
class DocumentChunk:
    chunk_id: str
    doc_id: str
    heading_path: tuple[str, ...]
    body: str
    position: int

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "doc_id": self.doc_id,
            "heading_path": list(self.heading_path),
            "body": self.body,
            "position": self.position,
        }


@dataclass(frozen=True)
class Hit:
    chunk_id: str
    score: float
    keyword_score: float
    vector_score: float

    def to_dict(self) -> dict:
        return {
            "chunk_id": self.chunk_id,
            "score": self.score,
            "keyword_score": self.keyword_score,
            "vector_score": self.vector_score,
        }


@dataclass(frozen=True)
class RetrievedContext:
    query: str
    hits: tuple[Hit, ...]
    from_cache: bool
    store_version: int

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "hits": [h.to_dict() for h in self.hits],
            "from_cache": self.from_cache,
            "store_version": self.store_version,
        }


@dataclass
class _CacheEntry:
    hits: tuple[Hit, ...]
    inserted_at: float
    ttl: float


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def embed(text: str) -> np.ndarray:
    """Deterministic feature-hashing embedder: equal text, equal vector."""
    vector = np.zeros(EMBED_DIM, dtype=np.float64)
    for token in tokenize(text):
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        index = int.from_bytes(digest[:4], "big") % EMBED_DIM
        sign = 1.0 if digest[4] & 1 else -1.0
        vector[index] += sign
    norm = np.linalg.norm(vector)
    if norm > 0:
        vector /= norm
    return vector


def chunk_document(
    doc_id: str, body: str, window: int = CHUNK_WINDOW, overlap: int = CHUNK_OVERLAP
) -> list[DocumentChunk]:
    """Deterministic chunking: heading sections, then overlapping windows.

    Heading lines stay inside their section's text so chunks reassemble the
    source document in position order.
    """
    if not body:
        raise EmptyDocument(f"document {doc_id!r} has an empty body")
    if not 0 <= overlap < window:
        raise ValueError(f"need 0 <= overlap < window, got {overlap}/{window}")
    sections = _split_sections(body)
    chunks: list[DocumentChunk] = []
    position = 0
    stride = window - overlap
    for heading_path, text in sections:
        for start in range(0, max(1, len(text) - overlap), stride):
            chunks.append(
                DocumentChunk(
                    chunk_id=f"{doc_id}:{position:04d}",
                    doc_id=doc_id,
                    heading_path=heading_path,
                    body=text[start : start + window],
                    position=position,
                )
            )
            position += 1
    return chunks


def _split_sections(body: str) -> list[tuple[tuple[str, ...], str]]:
    """Split into (heading_path, text) sections; text includes the heading
    line. A headingless prefix becomes one section with an empty path."""
    lines = body.splitlines(keepends=True)
    sections: list[tuple[tuple[str, ...], list[str]]] = []
    stack: list[tuple[int, str]] = []
    current: list[str] = []
    current_path: tuple[str, ...] = ()
    for line in lines:
        if _HEADING.match(line):
            if current:
                sections.append((current_path, current))
            level = len(line) - len(line.lstrip("#"))
            title = line.strip().lstrip("#").strip()
            while stack and stack[-1][0] >= level:
                stack.pop()
            stack.append((level, title))
            current_path = tuple(title for _, title in stack)
            current = [line]
        else:
            current.append(line)
    if current:
        sections.append((current_path, current))
    return [(path, "".join(parts)) for path, parts in sections if "".join(parts)]


class KnowledgeStore:
    """In-memory document space with exact hybrid search and a TTL cache.

    Many readers may retrieve concurrently; ingest takes exclusive access.
    The clock is injectable so TTL behavior is unit-testable.
    """

    def __init__(
        self,
        clock: Clock = system_clock,
        ttl: float = DEFAULT_TTL_SECONDS,
        window: int = CHUNK_WINDOW,
        overlap: int = CHUNK_OVERLAP,
        vector_weight: float = VECTOR_WEIGHT,
        keyword_weight: float = KEYWORD_WEIGHT,
    ):
        self.clock = clock
        self.ttl = ttl
        self.window = window
        self.overlap = overlap
        self.vector_weight = vector_weight
        self.keyword_weight = keyword_weight
        self.store_version = 0
        self._chunks: dict[str, DocumentChunk] = {}
        self._doc_chunks: dict[str, list[str]] = {}
        self._vectors: dict[str, np.ndarray] = {}
        self._term_freqs: dict[str, Counter] = {}
        self._lengths: dict[str, int] = {}
        self._cache: dict[str, _CacheEntry] = {}
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._chunks)

    # -- ingest ----------------------------------------------------------

    def ingest_document(self, doc_id: str, body: str) -> list[str]:
        """Chunk and index one document; bumps the store version (which also
        invalidates every cached query). Re-ingesting a doc id replaces its
        chunks."""
        chunks = chunk_document(doc_id, body, window=self.window, overlap=self.overlap)
        with self._lock:
            for chunk_id in self._doc_chunks.pop(doc_id, []):
                self._chunks.pop(chunk_id, None)
                self._vectors.pop(chunk_id, None)
                self._term_freqs.pop(chunk_id, None)
                self._lengths.pop(chunk_id, None)
            ids = []
            for chunk in chunks:
                tokens = tokenize(chunk.body)
                self._chunks[chunk.chunk_id] = chunk
                self._vectors[chunk.chunk_id] = embed(chunk.body)
                self._term_freqs[chunk.chunk_id] = Counter(tokens)
                self._lengths[chunk.chunk_id] = len(tokens)
                ids.append(chunk.chunk_id)
            self._doc_chunks[doc_id] = ids
            self.store_version += 1
            return ids

    # -- retrieval -------------------------------------------------------

    def retrieve(self, query: str, k: int = 5, use_cache: bool = True, now: float | None = None) -> RetrievedContext:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if not self._chunks:
            raise EmptyStore("knowledge store has no chunks")
        if now is None:
            now = self.clock()

        key = self._cache_key(query, k)
        if use_cache:
            with self._lock:
                entry = self._cache.get(key)
                if entry is not None and now - entry.inserted_at < entry.ttl:
                    return RetrievedContext(
                        query=query, hits=entry.hits, from_cache=True, store_version=self.store_version
                    )

        hits = self._search(query, k)
        if use_cache:
            with self._lock:
                self._cache[key] = _CacheEntry(hits=hits, inserted_at=now, ttl=self.ttl)
        return RetrievedContext(
            query=query, hits=hits, from_cache=False, store_version=self.store_version
        )

    def _cache_key(self, query: str, k: int) -> str:
        raw = f"{query}\x00{k}\x00{self.store_version}"
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()

    def _search(self, query: str, k: int) -> tuple[Hit, ...]:
        with self._lock:
            chunk_ids = sorted(self._chunks.keys())
            bm25 = self._bm25_scores(query, chunk_ids)
            query_vector = embed(query)
            cosine = [float(np.dot(query_vector, self._vectors[cid])) for cid in chunk_ids]
        keyword_norm = _minmax(bm25)
        vector_norm = _minmax(cosine)
        hits = [
            Hit(
                chunk_id=cid,
                score=self.keyword_weight * kw + self.vector_weight * vec,
                keyword_score=kw,
                vector_score=vec,
            )
            for cid, kw, vec in zip(chunk_ids, keyword_norm, vector_norm)
        ]
        hits.sort(key=lambda h: (-h.score, h.chunk_id))
        return tuple(hits[:k])

    def _bm25_scores(self, query: str, chunk_ids: list[str]) -> list[float]:
        n = len(chunk_ids)
        avgdl = sum(self._lengths[cid] for cid in chunk_ids) / n
        terms = tokenize(query)
        dfs = {t: sum(1 for cid in chunk_ids if self._term_freqs[cid][t] > 0) for t in set(terms)}
        scores = []
        for cid in chunk_ids:
            freqs = self._term_freqs[cid]
            dl = self._lengths[cid]
            score = 0.0
            for term in terms:
                tf = freqs[term]
                if tf == 0:
                    continue
                idf = math.log((n - dfs[term] + 0.5) / (dfs[term] + 0.5) + 1.0)
                denom = tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl) if avgdl > 0 else tf
                score += idf * tf * (BM25_K1 + 1.0) / denom
            scores.append(score)
        return scores

    # -- persistence -----------------------------------------------------

    def save(self, directory: Path | str) -> None:
        """Persist chunk records, inverted index and vector table as JSON."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with self._lock:
            ordered = [self._chunks[cid] for cid in sorted(self._chunks)]
            inverted: dict[str, dict[str, int]] = {}
            for cid in sorted(self._term_freqs):
                for term, tf in self._term_freqs[cid].items():
                    inverted.setdefault(term, {})[cid] = tf
            payload = {
                "store_version": self.store_version,
                "chunks": [c.to_dict() for c in ordered],
            }
            _write_json(directory / "chunks.json", payload)
            _write_json(directory / "inverted_index.json", inverted)
            _write_json(
                directory / "vector_table.json",
                {cid: [round(x, 9) for x in self._vectors[cid]] for cid in sorted(self._vectors)},
            )

    @classmethod
    def load(cls, directory: Path | str, clock: Clock = system_clock, ttl: float = DEFAULT_TTL_SECONDS) -> "KnowledgeStore":
        """Rebuild a store from chunks.json; index and vectors are
        re-derived deterministically."""
        directory = Path(directory)
        with open(directory / "chunks.json", encoding="utf-8") as fh:
            payload = json.load(fh)
        store = cls(clock=clock, ttl=ttl)
        for record in payload["chunks"]:
            chunk = DocumentChunk(
                chunk_id=record["chunk_id"],
                doc_id=record["doc_id"],
                heading_path=tuple(record["heading_path"]),
                body=record["body"],
                position=int(record["position"]),
            )
            tokens = tokenize(chunk.body)
            store._chunks[chunk.chunk_id] = chunk
            store._vectors[chunk.chunk_id] = embed(chunk.body)
            store._term_freqs[chunk.chunk_id] = Counter(tokens)
            store._lengths[chunk.chunk_id] = len(tokens)
            store._doc_chunks.setdefault(chunk.doc_id, []).append(chunk.chunk_id)
        store.store_version = int(payload.get("store_version", 1))
        return store


def _minmax(values: list[float]) -> list[float]:
    """Per-query min-max normalization; a degenerate spread maps to 1.0 so a
    single candidate scores 1.0."""
    lo, hi = min(values), max(values)
    if hi - lo <= 0.0:
        return [1.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def _write_json(path: Path, obj) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    tmp.replace(path)
