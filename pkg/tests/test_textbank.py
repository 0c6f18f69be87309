from __future__ import annotations

import json

import numpy as np
import pytest

from fedcondense.errors import ValidationError
from fedcondense.graph import generate_synthetic_tag
from fedcondense.textbank import (
    BankCache,
    Encoder,
    EncoderConfig,
    build_bank,
    chunk_text,
    pool_chunks,
    slice_bank,
)


class TestChunking:
    def test_70_tokens_window_32(self):
        text = " ".join(f"tok{i}" for i in range(70))
        ct = chunk_text(text, 32)
        assert [c.token_count for c in ct.chunks] == [32, 32, 6]

    def test_single_token(self):
        ct = chunk_text("hello", 32)
        assert len(ct.chunks) == 1
        assert (ct.chunks[0].char_start, ct.chunks[0].char_end) == (0, 5)

    def test_spans_exclude_surrounding_spaces(self):
        text = "   alpha beta   "
        ct = chunk_text(text, 10)
        start, end, _ = ct.chunks[0]
        assert text[start:end] == "alpha beta"

    def test_empty_text(self):
        assert chunk_text("   ", 8).chunks == []

    def test_spans_cover_all_tokens_and_are_ordered(self):
        text = "a bb ccc dddd eeeee ffffff g"
        ct = chunk_text(text, 3)
        rebuilt = []
        prev_end = -1
        for c in ct.chunks:
            assert c.char_start > prev_end
            prev_end = c.char_end
            rebuilt.extend(text[c.char_start : c.char_end].split())
        assert rebuilt == text.split()


class TestEncoder:
    def test_deterministic(self):
        enc = Encoder(EncoderConfig(dim=64))
        a = enc.encode_chunk("graph neural networks")
        b = enc.encode_chunk("graph neural networks")
        assert np.array_equal(a, b)

    def test_unit_norm(self):
        enc = Encoder(EncoderConfig(dim=64))
        assert np.linalg.norm(enc.encode_chunk("some words here")) == pytest.approx(1.0, abs=1e-6)

    def test_whitespace_collapse(self):
        enc = Encoder(EncoderConfig(dim=64))
        assert np.array_equal(
            enc.encode_chunk("neural networks"), enc.encode_chunk("neural    networks")
        )

    def test_precomputed_lookup_and_miss(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        vec = np.arange(4, dtype=float)
        path.write_text(json.dumps({"node": 0, "chunk": 0, "vec": vec.tolist()}) + "\n")
        enc = Encoder(EncoderConfig(kind="precomputed", dim=4, embeddings_path=str(path)))
        got = enc.encode_chunk("ignored", node=0, chunk=0)
        assert np.allclose(got, vec / np.linalg.norm(vec))
        with pytest.raises(ValidationError, match="node=1 chunk=0"):
            enc.encode_chunk("ignored", node=1, chunk=0)


class TestPooling:
    def test_single_chunk_identity(self):
        v = np.array([[0.6, 0.8]])
        assert np.allclose(pool_chunks(v), v[0])

    def test_two_identical(self):
        v = np.array([[0.6, 0.8], [0.6, 0.8]])
        assert np.allclose(pool_chunks(v), v[0])

    def test_two_orthogonal_unit_vectors(self):
        v = np.array([[1.0, 0.0], [0.0, 1.0]])
        pooled = pool_chunks(v)
        assert np.allclose(pooled, [0.5, 0.5])
        assert np.linalg.norm(pooled) == pytest.approx(1.0 / np.sqrt(2))

    def test_norm_at_most_max_chunk_norm(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            vecs = rng.normal(size=(int(rng.integers(1, 6)), 8))
            vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
            assert np.linalg.norm(pool_chunks(vecs)) <= 1.0 + 1e-9


class TestBank:
    def test_cache_hit_counter(self):
        tag = generate_synthetic_tag(2, 4, 0.5, 0.1, seed=0)
        enc = Encoder(EncoderConfig(dim=32))
        cache = BankCache()
        a = build_bank(tag, 16, enc, cache=cache)
        b = build_bank(tag, 16, enc, cache=cache)
        assert a is b
        assert cache.hits == 1 and cache.misses == 1

    def test_empty_text_node_flagged(self):
        tag = generate_synthetic_tag(2, 3, 0.5, 0.1, seed=0)
        tag.texts[2] = "   "
        bank = build_bank(tag, 16, Encoder(EncoderConfig(dim=32)))
        assert bank.empty_text[2]
        assert np.all(bank.node_vecs[2] == 0)
        assert bank.node_count == tag.node_count

    def test_chunk_embeddings_unit_norm(self):
        tag = generate_synthetic_tag(2, 5, 0.5, 0.1, seed=1)
        bank = build_bank(tag, 8, Encoder(EncoderConfig(dim=32)))
        for u in range(tag.node_count):
            for r in range(bank.chunk_count(u)):
                assert np.linalg.norm(bank.chunk_vector(u, r)) == pytest.approx(1.0, abs=1e-6)

    def test_digest_stable_and_slice_consistent(self):
        tag = generate_synthetic_tag(2, 6, 0.5, 0.1, seed=2)
        bank = build_bank(tag, 8, Encoder(EncoderConfig(dim=16)))
        assert bank.compute_digest() == bank.content_digest
        members = np.array([1, 3, 5])
        sub = slice_bank(bank, members)
        assert np.allclose(sub.node_vecs[0], bank.node_vecs[1])
        assert sub.chunk_string(2, 0) == bank.chunk_string(5, 0)
