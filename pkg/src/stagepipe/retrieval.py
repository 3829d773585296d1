"""Guideline chunking, embedding, and exact top-k cosine retrieval.

The guideline corpus is small, so retrieval is exact: every chunk vector is
compared against the query. Chunking splits on blank-line paragraph
boundaries and packs paragraphs greedily up to a size cap; the non-overlap
spans of consecutive chunks tile the document exactly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import StageCategory
from .llm import EmbeddingVector

log = logging.getLogger(__name__)

# the T-stage retrieval query; the N variant is an extrapolation and is
# flagged as such in run manifests
DEFAULT_QUERIES = {
    StageCategory.T: "A list of rules as knowledge that help predict the T stage for breast cancer",
    StageCategory.N: "A list of rules as knowledge that help predict the N stage for breast cancer",
}
QUERY_PROVENANCE = {StageCategory.T: "stated", StageCategory.N: "extrapolated"}


class RetrievalError(ValueError):
    """Bad chunking input, index construction, or query."""


@dataclass(frozen=True)
class Chunk:
    chunk_id: int
    text: str
    source_span: tuple[int, int]  # character offsets into the source document

    def __post_init__(self) -> None:
        if not self.text:
            raise RetrievalError(f"chunk {self.chunk_id} has empty text")


@dataclass(frozen=True)
class RetrievalQuery:
    text: str
    k: int = 5

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise RetrievalError("query text must be non-empty")
        if self.k < 1:
            raise RetrievalError(f"k must be positive, got {self.k}")


@dataclass(frozen=True)
class ChunkIndex:
    chunks: tuple[Chunk, ...]
    vectors: np.ndarray  # (n_chunks, dim), rows L2-normalized
    model_id: str
    doc_hash: str

    def __post_init__(self) -> None:
        if len(self.chunks) != self.vectors.shape[0]:
            raise RetrievalError(
                f"{len(self.chunks)} chunks but {self.vectors.shape[0]} vectors"
            )

    def __len__(self) -> int:
        return len(self.chunks)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


def hash_document(doc: str) -> str:
    return hashlib.sha256(doc.encode("utf-8")).hexdigest()


def _paragraph_spans(doc: str) -> list[tuple[int, int]]:
    """Disjoint covering spans, one per paragraph with its trailing separator.

    Whitespace-only spans are merged into a neighbor so every piece carries
    content.
    """
    bounds = [0]
    for m in re.finditer(r"\n(?:[ \t\r]*\n)+", doc):
        bounds.append(m.end())
    if bounds[-1] != len(doc):
        bounds.append(len(doc))
    spans = [
        (bounds[i], bounds[i + 1])
        for i in range(len(bounds) - 1)
        if bounds[i + 1] > bounds[i]
    ]
    merged: list[tuple[int, int]] = []
    for span in spans:
        if merged and not doc[merged[-1][0] : merged[-1][1]].strip():
            merged[-1] = (merged[-1][0], span[1])  # blank piece joins the next
        else:
            merged.append(span)
    if len(merged) > 1 and not doc[merged[-1][0] : merged[-1][1]].strip():
        tail = merged.pop()
        merged[-1] = (merged[-1][0], tail[1])
    return merged


def _split_long(doc: str, span: tuple[int, int], max_chars: int) -> list[tuple[int, int]]:
    """Split one over-long span at the last whitespace before each limit."""
    out = []
    start, end = span
    while end - start > max_chars:
        window = doc[start : start + max_chars]
        cut = -1
        for m in re.finditer(r"\s", window):
            cut = m.start()
        if cut <= 0:
            cut = max_chars - 1  # no whitespace: hard split
        out.append((start, start + cut + 1))
        start = start + cut + 1
    if end > start:
        out.append((start, end))
    return out


def chunk_document(
    doc: str, max_chars: int = 1200, overlap_chars: int = 0
) -> list[Chunk]:
    """Split `doc` into chunks of at most `max_chars` (non-overlap) characters.

    Paragraphs (blank-line delimited) are merged greedily until adding the
    next one would exceed the cap; a single paragraph longer than the cap is
    split at the last whitespace before the limit. With ``overlap_chars > 0``
    each chunk is prefixed with that much of the preceding chunk's text, and
    `source_span` covers exactly the chunk's text.
    """
    if max_chars < 200:
        raise RetrievalError(f"max_chars must be >= 200, got {max_chars}")
    if not 0 <= overlap_chars < max_chars:
        raise RetrievalError(
            f"overlap_chars must be in [0, max_chars), got {overlap_chars}"
        )
    if not doc.strip():
        raise RetrievalError("empty document")
    pieces: list[tuple[int, int]] = []
    for span in _paragraph_spans(doc):
        pieces.extend(_split_long(doc, span, max_chars))
    # greedy packing over the disjoint cover
    packed: list[tuple[int, int]] = []
    cur_start, cur_end = pieces[0]
    for start, end in pieces[1:]:
        if end - cur_start > max_chars:
            packed.append((cur_start, cur_end))
            cur_start, cur_end = start, end
        else:
            cur_end = end
    packed.append((cur_start, cur_end))
    chunks = []
    for i, (start, end) in enumerate(packed):
        if i > 0 and overlap_chars:
            prev_start = packed[i - 1][0]
            start = max(prev_start, start - overlap_chars)
        chunks.append(Chunk(chunk_id=i, text=doc[start:end], source_span=(start, end)))
    return chunks


def reconstruct(chunks: Sequence[Chunk], doc: str) -> str:
    """Concatenate the non-overlap spans; equals `doc` for its own chunks."""
    out = []
    prev_end = 0
    for c in chunks:
        start = max(c.source_span[0], prev_end)
        out.append(doc[start : c.source_span[1]])
        prev_end = c.source_span[1]
    return "".join(out)


EmbedFn = Callable[[Sequence[str]], list[EmbeddingVector]]


def _normalize(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise RetrievalError("cannot normalize an all-zero embedding")
    return rows / norms


def build_index(chunks: Sequence[Chunk], embed_fn: EmbedFn, doc_hash: str) -> ChunkIndex:
    """Embed every chunk and store L2-normalized vectors."""
    if not chunks:
        raise RetrievalError("cannot build an index over zero chunks")
    vectors = embed_fn([c.text for c in chunks])
    dims = {len(v.values) for v in vectors}
    if len(dims) != 1:
        raise RetrievalError(f"inconsistent embedding dimensions: {sorted(dims)}")
    matrix = _normalize(np.array([v.values for v in vectors], dtype=np.float64))
    return ChunkIndex(
        chunks=tuple(chunks),
        vectors=matrix,
        model_id=vectors[0].model_id,
        doc_hash=doc_hash,
    )


def top_k(
    index: ChunkIndex, query: RetrievalQuery, embed_fn: EmbedFn
) -> list[tuple[Chunk, float]]:
    """Exact cosine ranking of all chunks against the query.

    Descending score; ties broken by ascending chunk_id; k clamped to the
    index size with a warning.
    """
    if len(index) == 0:
        raise RetrievalError("index is empty")
    k = query.k
    if k > len(index):
        log.warning("k=%d exceeds index size %d; clamping", k, len(index))
        k = len(index)
    qvec = np.array(embed_fn([query.text])[0].values, dtype=np.float64)
    qnorm = np.linalg.norm(qvec)
    if qnorm == 0:
        raise RetrievalError("query embedded to the zero vector")
    scores = index.vectors @ (qvec / qnorm)
    order = sorted(range(len(index)), key=lambda i: (-scores[i], index.chunks[i].chunk_id))
    return [(index.chunks[i], float(scores[i])) for i in order[:k]]


def save_index(index: ChunkIndex, path: str | Path) -> None:
    payload = {
        "model_id": index.model_id,
        "doc_hash": index.doc_hash,
        "chunks": [
            {"chunk_id": c.chunk_id, "text": c.text, "source_span": list(c.source_span)}
            for c in index.chunks
        ],
        "vectors": index.vectors.tolist(),
    }
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def load_index(path: str | Path) -> ChunkIndex:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        chunks = tuple(
            Chunk(
                chunk_id=int(c["chunk_id"]),
                text=str(c["text"]),
                source_span=(int(c["source_span"][0]), int(c["source_span"][1])),
            )
            for c in obj["chunks"]
        )
        vectors = np.array(obj["vectors"], dtype=np.float64)
        return ChunkIndex(
            chunks=chunks,
            vectors=vectors,
            model_id=str(obj["model_id"]),
            doc_hash=str(obj["doc_hash"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, IndexError) as exc:
        raise RetrievalError(f"malformed index file {path}: {exc}")
