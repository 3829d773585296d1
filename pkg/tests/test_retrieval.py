from __future__ import annotations

import json
import logging
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stagepipe.llm import EmbeddingVector
from stagepipe.retrieval import (
    Chunk,
    RetrievalError,
    RetrievalQuery,
    build_index,
    chunk_document,
    hash_document,
    load_index,
    reconstruct,
    save_index,
    top_k,
)


def para(ch: str, size: int) -> str:
    """One paragraph of `size` characters ending with a letter."""
    unit = (ch * 9 + " ")
    body = (unit * (size // 10 + 1))[:size]
    return body[:-1] + ch


def fake_embedder(mapping: dict[str, list[float]], model_id: str = "fake"):
    def embed(texts):
        return [EmbeddingVector(tuple(mapping[t]), model_id) for t in texts]

    return embed


class TestChunkDocument:
    def test_everything_fits_in_one_chunk(self):
        doc = "\n\n".join(para(c, 300) for c in "abc")
        chunks = chunk_document(doc, max_chars=1200)
        assert len(chunks) == 1
        assert chunks[0].text == doc

    def test_greedy_packing_never_exceeds_cap(self):
        # three 700-char paragraphs with a 1200 cap: no pair fits together
        # (700 + separator + 700 > 1200), so the greedy rule closes a chunk
        # at every paragraph boundary
        doc = "\n\n".join(para(c, 700) for c in "abc")
        chunks = chunk_document(doc, max_chars=1200)
        assert len(chunks) == 3
        assert all(len(c.text) <= 1200 for c in chunks)

    def test_two_paragraphs_that_fit_are_merged(self):
        doc = "\n\n".join([para("a", 400), para("b", 400), para("c", 900)])
        chunks = chunk_document(doc, max_chars=1200)
        assert len(chunks) == 2
        assert para("b", 400) in chunks[0].text
        assert chunks[1].text == para("c", 900)

    def test_empty_document(self):
        with pytest.raises(RetrievalError, match="empty"):
            chunk_document("", max_chars=1200)
        with pytest.raises(RetrievalError, match="empty"):
            chunk_document("  \n \n ", max_chars=1200)

    def test_long_paragraph_split_at_whitespace(self):
        words = ("word " * 200).strip()  # ~1000 chars, no blank lines
        chunks = chunk_document(words, max_chars=200)
        assert len(chunks) > 1
        for c in chunks[:-1]:
            assert len(c.text) <= 200
            assert c.text.endswith(" ")  # split lands after a whitespace

    def test_reconstruction(self):
        doc = "\n\n".join(para(c, 350) for c in "abcdef")
        chunks = chunk_document(doc, max_chars=800)
        assert reconstruct(chunks, doc) == doc

    def test_reconstruction_with_overlap(self):
        doc = "\n\n".join(para(c, 350) for c in "abcdef")
        chunks = chunk_document(doc, max_chars=800, overlap_chars=50)
        assert reconstruct(chunks, doc) == doc

    def test_overlap_prefix_matches_previous_suffix(self):
        doc = "\n\n".join(para(c, 500) for c in "ab")
        chunks = chunk_document(doc, max_chars=600, overlap_chars=40)
        assert len(chunks) == 2
        assert chunks[1].text[:40] == chunks[0].text[-40:]

    def test_ids_dense_from_zero_and_text_matches_span(self):
        doc = "\n\n".join(para(c, 400) for c in "abcd")
        chunks = chunk_document(doc, max_chars=500)
        assert [c.chunk_id for c in chunks] == list(range(len(chunks)))
        for c in chunks:
            assert doc[c.source_span[0] : c.source_span[1]] == c.text

    @pytest.mark.parametrize("max_chars,overlap", [(100, 0), (200, 200), (300, -1)])
    def test_parameter_validation(self, max_chars, overlap):
        with pytest.raises(RetrievalError):
            chunk_document("text", max_chars=max_chars, overlap_chars=overlap)

    @given(
        sizes=st.lists(st.integers(min_value=5, max_value=600), min_size=1, max_size=8),
        max_chars=st.integers(min_value=200, max_value=900),
    )
    @settings(max_examples=60, deadline=None)
    def test_reconstruction_property(self, sizes, max_chars):
        doc = "\n\n".join(para("azx"[i % 3], s) for i, s in enumerate(sizes))
        chunks = chunk_document(doc, max_chars=max_chars)
        assert reconstruct(chunks, doc) == doc
        assert all(c.text for c in chunks)


class TestBuildIndex:
    def _chunks(self, texts):
        return [Chunk(i, t, (0, len(t))) for i, t in enumerate(texts)]

    def test_unit_norm_vectors(self):
        texts = [f"chunk {i}" for i in range(10)]
        mapping = {t: [float(i + 1), 1.0, 0.5] for i, t in enumerate(texts)}
        index = build_index(self._chunks(texts), fake_embedder(mapping), "dochash")
        assert len(index) == 10
        norms = np.linalg.norm(index.vectors, axis=1)
        assert np.allclose(norms, 1.0)
        assert index.doc_hash == "dochash"
        assert index.model_id == "fake"

    def test_dimension_mismatch(self):
        def bad_embed(texts):
            return [
                EmbeddingVector((1.0, 2.0), "m"),
                EmbeddingVector((1.0, 2.0, 3.0), "m"),
            ]

        with pytest.raises(RetrievalError, match="dimension"):
            build_index(self._chunks(["a", "b"]), bad_embed, "h")

    def test_empty_chunks(self):
        with pytest.raises(RetrievalError):
            build_index([], fake_embedder({}), "h")

    def test_rebuild_is_byte_identical(self, tmp_path):
        texts = ["alpha text", "beta text"]
        mapping = {t: [1.0, float(i)] for i, t in enumerate(texts)}
        for name in ("a.json", "b.json"):
            index = build_index(self._chunks(texts), fake_embedder(mapping), "h")
            save_index(index, tmp_path / name)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_save_load_round_trip(self, tmp_path):
        texts = ["alpha", "beta"]
        mapping = {"alpha": [1.0, 0.0], "beta": [0.5, 0.5], "q": [1.0, 1.0]}
        index = build_index(self._chunks(texts), fake_embedder(mapping), "h")
        save_index(index, tmp_path / "idx.json")
        loaded = load_index(tmp_path / "idx.json")
        assert loaded.chunks == index.chunks
        assert np.array_equal(loaded.vectors, index.vectors)
        assert loaded.model_id == index.model_id
        assert loaded.doc_hash == index.doc_hash


class TestTopK:
    def _index_with_cosines(self):
        # query (1, 0); chunk vectors chosen for cosines 0.9, 0.1, 0.5
        mapping = {
            "c0": [0.9, np.sqrt(1 - 0.81)],
            "c1": [0.1, np.sqrt(1 - 0.01)],
            "c2": [0.5, np.sqrt(0.75)],
            "q": [1.0, 0.0],
        }
        chunks = [Chunk(i, f"c{i}", (0, 2)) for i in range(3)]
        embed = fake_embedder(mapping)
        return build_index(chunks, embed, "h"), embed

    def test_descending_cosine_order(self):
        index, embed = self._index_with_cosines()
        hits = top_k(index, RetrievalQuery("q", k=2), embed)
        assert [c.text for c, _ in hits] == ["c0", "c2"]
        scores = [s for _, s in hits]
        assert scores[0] == pytest.approx(0.9)
        assert scores[1] == pytest.approx(0.5)

    def test_k_equals_all(self):
        index, embed = self._index_with_cosines()
        hits = top_k(index, RetrievalQuery("q", k=3), embed)
        assert [c.text for c, _ in hits] == ["c0", "c2", "c1"]

    def test_tie_broken_by_chunk_id(self):
        mapping = {"a": [1.0, 0.0], "b": [1.0, 0.0], "q": [2.0, 0.0]}
        chunks = [Chunk(0, "a", (0, 1)), Chunk(1, "b", (0, 1))]
        embed = fake_embedder(mapping)
        index = build_index(chunks, embed, "h")
        hits = top_k(index, RetrievalQuery("q", k=1), embed)
        assert hits[0][0].chunk_id == 0

    def test_k_clamped_with_warning(self, caplog):
        index, embed = self._index_with_cosines()
        with caplog.at_level(logging.WARNING):
            hits = top_k(index, RetrievalQuery("q", k=10), embed)
        assert len(hits) == 3
        assert any("clamp" in r.message for r in caplog.records)

    def test_scores_bounded_and_scale_invariant(self):
        index, embed = self._index_with_cosines()
        hits = top_k(index, RetrievalQuery("q", k=3), embed)
        assert all(-1.0 <= s <= 1.0 for _, s in hits)
        scaled = fake_embedder({"q": [7.0, 0.0]})
        hits_scaled = top_k(index, RetrievalQuery("q", k=3), scaled)
        assert [c.chunk_id for c, _ in hits] == [c.chunk_id for c, _ in hits_scaled]

    def test_brute_force_oracle(self):
        rng = random.Random(1)
        for _ in range(25):
            n = rng.randrange(2, 20)
            dim = rng.randrange(2, 8)
            vectors = [[rng.uniform(-1, 1) for _ in range(dim)] for _ in range(n)]
            qvec = [rng.uniform(-1, 1) for _ in range(dim)]
            mapping = {f"c{i}": vectors[i] for i in range(n)}
            mapping["q"] = qvec
            chunks = [Chunk(i, f"c{i}", (0, 2)) for i in range(n)]
            embed = fake_embedder(mapping)
            index = build_index(chunks, embed, "h")
            q = np.array(qvec) / np.linalg.norm(qvec)
            cosines = [
                float(np.array(v) / np.linalg.norm(v) @ q) for v in vectors
            ]
            expected = sorted(range(n), key=lambda i: (-cosines[i], i))
            for k in range(1, n + 1):
                hits = top_k(index, RetrievalQuery("q", k=k), embed)
                assert [c.chunk_id for c, _ in hits] == expected[:k]


def test_hash_document_stability():
    assert hash_document("abc") == hash_document("abc")
    assert hash_document("abc") != hash_document("abd")


def test_query_validation():
    with pytest.raises(RetrievalError):
        RetrievalQuery("  ", k=5)
    with pytest.raises(RetrievalError):
        RetrievalQuery("q", k=0)


def test_malformed_index_file(tmp_path):
    path = tmp_path / "idx.json"
    path.write_text(json.dumps({"chunks": []}))
    with pytest.raises(RetrievalError):
        load_index(path)
