"""Hybrid retrieval over a chunked corpus.

Dense retrieval is an exact dot-product scan per embedding model (higher
score means more similar); lexical retrieval is BM25 over lowercased
alphanumeric tokens. The per-retriever top-k lists are concatenated in
retriever declaration order and deduplicated, keeping per-retriever
provenance instead of fusing scores.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .backend import BackendError, EmbeddingBackend, embed_batch
from .corpus import Chunk

DEFAULT_BATCH_SIZE = 64
DEFAULT_PER_RETRIEVER_K = 2
DEFAULT_BM25_K1 = 1.2
DEFAULT_BM25_B = 0.75

BM25_RETRIEVER_ID = "bm25"

_BM25_TOKEN_RE = re.compile(r"[a-z0-9]+")


class RetrievalError(Exception):
    """Raised when an index build or query cannot be completed."""


@dataclass
class EmbeddingMatrix:
    """Chunk-aligned dense vectors for one embedding model.

    rows is float32 with shape (len(chunk_ids), dim); row i embeds chunk i.
    """

    model_id: str
    dim: int
    rows: np.ndarray
    chunk_ids: tuple[str, ...]

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=np.float32)
        if self.rows.shape != (len(self.chunk_ids), self.dim):
            raise ValueError(
                f"rows shape {self.rows.shape} does not match "
                f"({len(self.chunk_ids)}, {self.dim})"
            )


@dataclass(frozen=True)
class ScoredChunk:
    chunk_id: str
    score: float
    retriever_id: str


@dataclass(frozen=True)
class ContextEntry:
    chunk_id: str
    text: str
    retriever_id: str
    score: float


@dataclass(frozen=True)
class Context:
    """Deduplicated retrieved chunks, in deterministic assembly order."""

    entries: tuple[ContextEntry, ...] = ()

    def __post_init__(self) -> None:
        ids = [e.chunk_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("context entries must have distinct chunk ids")

    @property
    def texts(self) -> list[str]:
        return [e.text for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def embed_chunks(
    chunks: Sequence[Chunk],
    backend: EmbeddingBackend,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> EmbeddingMatrix:
    """Embed chunk texts in consecutive batches into one matrix.

    Rows follow chunk order exactly; the last batch may be partial. A
    failing batch surfaces as an error carrying the batch index, as does a
    dimension change between batches.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    texts = [c.text for c in chunks]
    parts: list[np.ndarray] = []
    dim: int | None = None
    for batch_index, start in enumerate(range(0, len(texts), batch_size)):
        batch = texts[start : start + batch_size]
        try:
            vectors = embed_batch(batch, backend)
        except BackendError as exc:
            raise RetrievalError(
                f"embedding batch {batch_index} failed on backend {backend.model_id!r}: {exc}"
            ) from exc
        if dim is None:
            dim = vectors.shape[1]
        elif vectors.shape[1] != dim:
            raise RetrievalError(
                f"dimension changed from {dim} to {vectors.shape[1]} in batch {batch_index}"
            )
        parts.append(vectors)
    if parts:
        rows = np.concatenate(parts, axis=0)
    else:
        dim = dim or 0
        rows = np.zeros((0, dim), dtype=np.float32)
    return EmbeddingMatrix(
        model_id=backend.model_id,
        dim=int(dim or 0),
        rows=rows,
        chunk_ids=tuple(c.chunk_id for c in chunks),
    )


def knn_query(query_vector: Sequence[float], matrix: EmbeddingMatrix, k: int) -> list[ScoredChunk]:
    """Exact top-k by dot product; ties break toward the lower chunk ordinal."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query_vector, dtype=np.float64).reshape(-1)
    if query.shape[0] != matrix.dim:
        raise ValueError(f"query dimension {query.shape[0]} != index dimension {matrix.dim}")
    count = len(matrix.chunk_ids)
    if count == 0:
        return []
    scores = matrix.rows.astype(np.float64) @ query
    # lexsort: last key is primary, so order by -score then ordinal
    order = np.lexsort((np.arange(count), -scores))[: min(k, count)]
    return [
        ScoredChunk(matrix.chunk_ids[i], float(scores[i]), matrix.model_id) for i in order
    ]


@dataclass
class Bm25Index:
    """Corpus statistics for BM25 scoring over lowercased alphanumeric tokens."""

    k1: float
    b: float
    chunk_ids: tuple[str, ...]
    doc_freq: dict[str, int]
    term_freqs: tuple[dict[str, int], ...]
    lengths: tuple[int, ...]
    avg_length: float


def bm25_tokens(text: str) -> list[str]:
    return _BM25_TOKEN_RE.findall(text.lower())


def bm25_build(
    chunks: Sequence[Chunk],
    k1: float = DEFAULT_BM25_K1,
    b: float = DEFAULT_BM25_B,
) -> Bm25Index:
    """Tally term statistics over chunk texts (heading included)."""
    term_freqs: list[dict[str, int]] = []
    lengths: list[int] = []
    doc_freq: dict[str, int] = {}
    for chunk in chunks:
        tokens = bm25_tokens(chunk.text)
        counts = Counter(tokens)
        term_freqs.append(dict(counts))
        lengths.append(len(tokens))
        for term in counts:
            doc_freq[term] = doc_freq.get(term, 0) + 1
    avg_length = sum(lengths) / len(lengths) if lengths else 0.0
    return Bm25Index(
        k1=k1,
        b=b,
        chunk_ids=tuple(c.chunk_id for c in chunks),
        doc_freq=doc_freq,
        term_freqs=tuple(term_freqs),
        lengths=tuple(lengths),
        avg_length=avg_length,
    )


def bm25_query(question: str, index: Bm25Index, k: int) -> list[ScoredChunk]:
    """Top-k chunks by BM25 score for the query terms.

    Per-chunk score is the sum over query terms of
    IDF(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len/avglen)) with
    IDF(t) = ln(1 + (N - df + 0.5) / (df + 0.5)); chunks sharing no term
    with the query score 0. Ties break toward the lower ordinal.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    count = len(index.chunk_ids)
    if count == 0:
        return []
    terms = bm25_tokens(question)
    scores: list[float] = []
    for i in range(count):
        tf_map = index.term_freqs[i]
        length = index.lengths[i]
        score = 0.0
        for term in terms:
            tf = tf_map.get(term, 0)
            if not tf:
                continue
            df = index.doc_freq.get(term, 0)
            idf = math.log(1.0 + (count - df + 0.5) / (df + 0.5))
            norm = 1.0 - index.b + index.b * (length / index.avg_length)
            score += idf * (tf * (index.k1 + 1.0)) / (tf + index.k1 * norm)
        scores.append(score)
    order = sorted(range(count), key=lambda i: (-scores[i], i))[: min(k, count)]
    return [ScoredChunk(index.chunk_ids[i], scores[i], BM25_RETRIEVER_ID) for i in order]


@dataclass
class DenseRetriever:
    """An embedding matrix paired with the backend that embeds queries for it."""

    matrix: EmbeddingMatrix
    backend: EmbeddingBackend


def hybrid_retrieve(
    question: str,
    dense: Sequence[DenseRetriever],
    bm25: Bm25Index | None,
    chunks_by_id: Mapping[str, Chunk],
    per_retriever_k: int = DEFAULT_PER_RETRIEVER_K,
) -> Context:
    """Assemble the question context from every retriever's top-k.

    Each dense retriever embeds the question with its own backend and
    contributes its top per_retriever_k chunks, then BM25 contributes the
    same number. Results concatenate in retriever declaration order and
    duplicates keep their first occurrence.
    """
    if not question:
        raise ValueError("question must be non-empty")
    ranked: list[ScoredChunk] = []
    for retriever in dense:
        model_id = retriever.matrix.model_id
        try:
            query_vec = embed_batch([question], retriever.backend)[0]
        except BackendError as exc:
            raise RetrievalError(f"retriever {model_id!r}: {exc}") from exc
        ranked.extend(knn_query(query_vec, retriever.matrix, per_retriever_k))
    if bm25 is not None:
        ranked.extend(bm25_query(question, bm25, per_retriever_k))
    entries: list[ContextEntry] = []
    seen: set[str] = set()
    for scored in ranked:
        if scored.chunk_id in seen:
            continue
        seen.add(scored.chunk_id)
        chunk = chunks_by_id.get(scored.chunk_id)
        if chunk is None:
            raise RetrievalError(f"chunk {scored.chunk_id!r} missing from chunk store")
        entries.append(ContextEntry(scored.chunk_id, chunk.text, scored.retriever_id, scored.score))
    return Context(tuple(entries))


# ---------------------------------------------------------------------------
# Persistence


@dataclass
class ChunkIndex:
    """A persisted retrieval index: chunks, dense matrices, BM25 statistics."""

    chunks: tuple[Chunk, ...]
    matrices: tuple[EmbeddingMatrix, ...]
    bm25: Bm25Index
    chunks_by_id: dict[str, Chunk] = field(init=False)

    def __post_init__(self) -> None:
        self.chunks_by_id = {c.chunk_id: c for c in self.chunks}


def _matrix_filename(model_id: str) -> str:
    safe = re.sub(r"[^A-Za-z0-9._-]", "_", model_id) or "_"
    return f"emb_{safe}.f32"


def save_index(
    dir_path: str | Path,
    chunks: Sequence[Chunk],
    matrices: Sequence[EmbeddingMatrix],
    bm25: Bm25Index,
) -> None:
    """Write an index directory: manifest, chunks, raw vectors, BM25 stats.

    Embedding rows are stored as little-endian float32 in row-major order,
    so a load round-trip reproduces query results bit for bit.
    """
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    from .corpus import write_chunks  # local import to keep module deps one-way

    write_chunks(chunks, dir_path / "chunks.jsonl")
    models = []
    for matrix in matrices:
        filename = _matrix_filename(matrix.model_id)
        data = np.ascontiguousarray(matrix.rows, dtype="<f4")
        (dir_path / filename).write_bytes(data.tobytes())
        models.append({"model_id": matrix.model_id, "dim": matrix.dim, "file": filename})
    manifest = {
        "chunk_count": len(chunks),
        "models": models,
        "bm25": {"k1": bm25.k1, "b": bm25.b},
    }
    (dir_path / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    bm25_payload = {
        "k1": bm25.k1,
        "b": bm25.b,
        "chunk_ids": list(bm25.chunk_ids),
        "doc_freq": bm25.doc_freq,
        "term_freqs": list(bm25.term_freqs),
        "lengths": list(bm25.lengths),
        "avg_length": bm25.avg_length,
    }
    (dir_path / "bm25.json").write_text(
        json.dumps(bm25_payload, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_index(dir_path: str | Path) -> ChunkIndex:
    dir_path = Path(dir_path)
    from .corpus import read_chunks

    try:
        manifest = json.loads((dir_path / "manifest.json").read_text(encoding="utf-8"))
        chunks = tuple(read_chunks(dir_path / "chunks.jsonl"))
        bm25_payload = json.loads((dir_path / "bm25.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise RetrievalError(f"cannot load index from {dir_path}: {exc}") from exc
    chunk_ids = tuple(c.chunk_id for c in chunks)
    matrices = []
    for model in manifest["models"]:
        raw = (dir_path / model["file"]).read_bytes()
        rows = np.frombuffer(raw, dtype="<f4").reshape(len(chunks), model["dim"])
        matrices.append(
            EmbeddingMatrix(model["model_id"], model["dim"], rows.copy(), chunk_ids)
        )
    bm25 = Bm25Index(
        k1=bm25_payload["k1"],
        b=bm25_payload["b"],
        chunk_ids=tuple(bm25_payload["chunk_ids"]),
        doc_freq={k: int(v) for k, v in bm25_payload["doc_freq"].items()},
        term_freqs=tuple({k: int(v) for k, v in tf.items()} for tf in bm25_payload["term_freqs"]),
        lengths=tuple(int(x) for x in bm25_payload["lengths"]),
        avg_length=bm25_payload["avg_length"],
    )
    return ChunkIndex(chunks=chunks, matrices=tuple(matrices), bm25=bm25)
