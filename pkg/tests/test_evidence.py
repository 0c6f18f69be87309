from __future__ import annotations

import itertools
import json

import numpy as np
import pytest

from fedcondense.errors import ConfigError
from fedcondense.evidence import (
    Budgets,
    ExtractiveSummarizer,
    SelectionParams,
    build_pack,
    gate_neighbors,
    hierarchical_context,
    pack_to_json_obj,
    prefilter_two_hop,
    select_chunks,
    select_evidence,
    selected_index_set,
    sparse_attention,
    summarize_pack,
    top_b_truncate,
    verify_selection_stability,
    verify_truncation_bound,
    write_pack_store,
)
from fedcondense.textbank import BankCache, Encoder, EncoderConfig, build_bank

from conftest import tag_from_edges


class TestSparseAttention:
    def test_symmetric_scores_uniform(self):
        assert np.allclose(sparse_attention(np.array([0.3, 0.3, 0.3])), [1 / 3] * 3)

    def test_dominant_score_gets_all_mass(self):
        assert np.allclose(sparse_attention(np.array([2.0, 1.0, -1.0])), [1, 0, 0])

    def test_single_element(self):
        assert np.allclose(sparse_attention(np.array([5.0])), [1.0])

    def test_sums_to_one_both_alphas(self):
        rng = np.random.default_rng(0)
        for alpha in (1.5, 2.0):
            for _ in range(50):
                p = sparse_attention(rng.normal(size=int(rng.integers(1, 12))), alpha)
                assert p.sum() == pytest.approx(1.0, abs=1e-9)
                assert np.all(p >= 0)

    def test_monotone_in_own_score(self):
        rng = np.random.default_rng(1)
        for alpha in (1.5, 2.0):
            for _ in range(40):
                z = rng.normal(size=6)
                i = int(rng.integers(6))
                bumped = z.copy()
                bumped[i] += 0.3
                assert sparse_attention(bumped, alpha)[i] >= sparse_attention(z, alpha)[i] - 1e-12

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            sparse_attention(np.array([np.inf, 1.0]))
        with pytest.raises(ConfigError):
            sparse_attention(np.array([1.0]), alpha=1.7)
        with pytest.raises(ValueError):
            sparse_attention(np.array([]))


class TestTruncation:
    def test_definitional_renormalization(self):
        assert np.allclose(top_b_truncate(np.array([0.5, 0.3, 0.2]), 2), [0.625, 0.375, 0.0])

    def test_identity_when_sparse_enough(self):
        p = np.array([0.7, 0.0, 0.3])
        assert np.array_equal(top_b_truncate(p, 2), p)

    def test_tie_goes_to_lower_index(self):
        assert np.allclose(top_b_truncate(np.array([0.4, 0.4, 0.2]), 1), [1.0, 0.0, 0.0])


class TestPrefilter:
    def test_identity_below_cap(self):
        cands = np.array([4, 2, 9])
        out = prefilter_two_hop(cands, np.zeros(10), cap=5)
        assert out.tolist() == [2, 4, 9]

    def test_top_difficulty(self):
        u = np.zeros(10)
        u[[1, 2, 3]] = [0.9, 0.1, 0.5]
        out = prefilter_two_hop(np.array([1, 2, 3]), u, cap=2)
        assert out.tolist() == [1, 3]

    def test_ties_lowest_ids(self):
        out = prefilter_two_hop(np.array([5, 3, 8]), np.zeros(10), cap=2)
        assert out.tolist() == [3, 5]


def make_bank(tag, dim=16):
    return build_bank(tag, 8, Encoder(EncoderConfig(dim=dim)))


def manual_bank(vectors, chunk_lists):
    """Bank with prescribed node vectors and chunk vectors (unit tests only)."""
    from fedcondense.textbank import Chunk, ChunkedText, ChunkEmbeddingBank

    n, d = vectors.shape
    chunked = []
    cv = []
    for u in range(n):
        rows = np.asarray(chunk_lists[u], dtype=float).reshape(-1, d)
        cv.append(rows)
        chunked.append(ChunkedText(u, [Chunk(0, 1, 1) for _ in range(rows.shape[0])]))
    bank = ChunkEmbeddingBank(
        chunked=chunked,
        chunk_vecs=cv,
        node_vecs=vectors.astype(float),
        empty_text=np.array([len(c) == 0 for c in chunk_lists]),
        encoder_fingerprint="manual",
        texts=["chunk"] * n,
    )
    bank.content_digest = bank.compute_digest()
    return bank


class TestGateNeighbors:
    def test_hop0_selects_self_with_weight_one(self, path_graph):
        bank = make_bank(path_graph)
        params = SelectionParams.init(bank.dim)
        g = np.random.default_rng(0).normal(size=(3, bank.dim))
        gates = gate_neighbors(0, g, bank, params, Budgets(), path_graph, np.zeros(3))
        assert gates[0].candidates.tolist() == [0]
        assert np.allclose(gates[0].weights, [1.0])

    def test_identity_params_orthogonal_hand_case(self):
        # v=0 connected to a(=1) and b(=2); t_a aligned with g_0, t_b orthogonal
        tag = tag_from_edges(3, [(0, 1), (0, 2)])
        d = 4
        t = np.zeros((3, d))
        t[1, 0] = 1.0  # t_a = e1
        t[2, 1] = 1.0  # t_b = e2, orthogonal to g_0
        bank = manual_bank(t, [[e] for e in t])
        g = np.zeros((3, d))
        g[0, 0] = 1.0  # g_0 = t_a
        params = SelectionParams.init(d)
        gates = gate_neighbors(0, g, bank, params, Budgets(b1=1), tag, np.zeros(3))
        hop1 = gates[1]
        assert hop1.candidates.tolist() == [1, 2]
        assert np.allclose(hop1.weights, [1.0, 0.0])
        assert hop1.selected.tolist() == [1]

    def test_within_budget_distinct_scores_all_positive(self):
        tag = tag_from_edges(4, [(0, 1), (0, 2), (0, 3)])
        rng = np.random.default_rng(5)
        t = rng.normal(size=(4, 8))
        bank = manual_bank(t, [[row] for row in t])
        params = SelectionParams.init(8)
        gates = gate_neighbors(0, rng.normal(size=(4, 8)), bank, params, Budgets(b1=3), tag, np.zeros(4))
        hop1 = gates[1]
        assert hop1.weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert hop1.support.size <= 3

    def test_empty_hop_gives_empty_gate(self):
        tag = tag_from_edges(2, [])
        bank = manual_bank(np.eye(2), [[row] for row in np.eye(2)])
        params = SelectionParams.init(2)
        gates = gate_neighbors(0, np.eye(2), bank, params, Budgets(), tag, np.zeros(2))
        assert gates[1].candidates.size == 0 and gates[2].candidates.size == 0


class TestHierarchicalContext:
    def test_hop0_only(self, path_graph):
        bank = make_bank(path_graph)
        params = SelectionParams.init(bank.dim)
        params.gamma = np.array([1.0, 0.0, 0.0])
        g = np.random.default_rng(0).normal(size=(3, bank.dim))
        gates = gate_neighbors(1, g, bank, params, Budgets(), path_graph, np.zeros(3))
        c, _, _ = hierarchical_context(gates, bank, params.gamma)
        assert np.allclose(c, bank.node_vecs[1])

    def test_all_equal_embeddings_convexity(self):
        tag = tag_from_edges(3, [(0, 1), (1, 2), (0, 2)])
        e = np.zeros(4)
        e[2] = 1.0
        bank = manual_bank(np.tile(e, (3, 1)), [[e]] * 3)
        params = SelectionParams.init(4)
        gates = gate_neighbors(0, np.tile(e, (3, 1)), bank, params, Budgets(), tag, np.zeros(3))
        c, _, _ = hierarchical_context(gates, bank, params.gamma)
        assert np.allclose(c, e)

    def test_orthogonal_two_hop_mix_norm(self):
        # gamma = (0.5, 0.5, 0), hop-1 gate = {a: 1}, t_v orthogonal to t_a
        tag = tag_from_edges(2, [(0, 1)])
        t = np.eye(2)
        bank = manual_bank(t, [[row] for row in t])
        params = SelectionParams.init(2)
        params.gamma = np.array([0.5, 0.5, 0.0])
        g = np.eye(2)
        gates = gate_neighbors(0, g, bank, params, Budgets(b1=1), tag, np.zeros(2))
        c, gamma_eff, _ = hierarchical_context(gates, bank, params.gamma)
        # hop 2 is empty: its zero gamma mass renormalizes over hops {0, 1}
        assert np.allclose(gamma_eff[:2], [0.5, 0.5])
        assert np.linalg.norm(c) == pytest.approx(np.sqrt(0.5), abs=1e-9)


class TestSelectChunks:
    def test_single_candidate(self):
        d = 4
        e = np.zeros(d)
        e[0] = 1.0
        bank = manual_bank(e[None, :], [[e]])
        params = SelectionParams.init(d)
        sel = select_chunks(0, e, e, 0.5, bank, np.array([0]), b_tok=3, params=params)
        assert np.allclose(sel.weights, [1.0])
        assert np.allclose(sel.t_tilde, e)

    def test_uniform_scores_uniform_weights(self):
        d = 4
        e = np.zeros(d)
        e[0] = 1.0
        bank = manual_bank(e[None, :], [[e, e, e]])
        params = SelectionParams.init(d)
        sel = select_chunks(0, e, e, 0.5, bank, np.array([0]), b_tok=5, params=params)
        assert np.allclose(sel.weights, [1 / 3] * 3)

    def test_textless_selection_flagged(self):
        d = 4
        bank = manual_bank(np.zeros((1, d)), [[]])
        params = SelectionParams.init(d)
        sel = select_chunks(0, np.ones(d), np.ones(d), 0.5, bank, np.array([0]), 3, params)
        assert sel.empty and np.all(sel.t_tilde == 0)

    def test_truncation_error_within_bound_hand_case(self):
        # orthonormal chunk vectors with p = [0.6, 0.3, 0.1], B = 2
        p = np.array([0.6, 0.3, 0.1])
        e = np.eye(3)
        err, bound, holds = verify_truncation_bound(p, e, 2)
        assert holds
        assert err == pytest.approx(0.12472, abs=1e-4)
        assert bound == pytest.approx(0.2)


class TestTruncationBound:
    def test_identical_vectors_zero_error(self):
        e = np.tile(np.array([0.0, 1.0]), (4, 1))
        err, bound, holds = verify_truncation_bound(np.array([0.4, 0.3, 0.2, 0.1]), e, 2)
        assert holds and err == pytest.approx(0.0, abs=1e-12)

    def test_already_sparse_zero_error(self):
        p = np.array([0.7, 0.3, 0.0, 0.0])
        e = np.random.default_rng(0).normal(size=(4, 5))
        err, bound, holds = verify_truncation_bound(p, e, 2)
        assert holds and err == 0.0 and bound == 0.0

    def test_random_sweep_holds(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(2, 15))
            p = rng.dirichlet(np.ones(n))
            e = rng.normal(size=(n, 16))
            e /= np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1.0)
            _, _, holds = verify_truncation_bound(p, e, int(rng.integers(1, n + 1)))
            assert holds


class TestStability:
    def test_documented_case_with_corner_oracle(self):
        scores = np.array([3.0, 2.0, 0.5])
        assert verify_selection_stability(scores, 2, epsilon=0.7, trials=50, seed=0) is True
        # exhaustive +/-0.7 corner perturbations keep the set {0, 1}
        for signs in itertools.product([-0.7, 0.7], repeat=3):
            shifted = scores + np.array(signs)
            got = selected_index_set(
                shifted, top_b_truncate(sparse_attention(shifted), 2), 2
            )
            assert got == frozenset({0, 1})

    def test_budget_at_least_n_trivially_stable(self):
        assert verify_selection_stability(np.array([1.0, 2.0]), 2, 0.5, 10, seed=1) is True

    def test_zero_perturbation_invariant(self):
        assert verify_selection_stability(np.array([2.0, 1.0, 0.0]), 1, 1e-12, 5, seed=2) is True

    def test_zero_margin_skipped_with_warning(self):
        with pytest.warns(UserWarning, match="margin"):
            out = verify_selection_stability(np.array([1.0, 1.0, 0.0]), 1, 0.1, 5, seed=3)
        assert out is None

    def test_epsilon_above_half_margin_rejected(self):
        with pytest.raises(ValueError):
            verify_selection_stability(np.array([2.0, 1.0]), 1, 0.6, 5, seed=4)


class TestEvidencePacks:
    def build_state(self, seed=0):
        tag = tag_from_edges(4, [(0, 1), (1, 2), (2, 3)],
                             texts=["alpha beta gamma", "delta epsilon", "zeta eta", "theta iota"])
        bank = build_bank(tag, 2, Encoder(EncoderConfig(dim=16)))
        params = SelectionParams.init(16)
        g = np.random.default_rng(seed).normal(size=(4, 16))
        state = select_evidence(1, tag, g, bank, params, Budgets(b_tok=3), np.zeros(4), mix=0.6)
        return tag, bank, state

    def test_budgets_and_weight_sum(self):
        _, _, state = self.build_state()
        budgets = Budgets(b_tok=3)
        for gate in state.gates:
            assert gate.support.size <= budgets.hop_budget(gate.hop)
        assert state.chunks.support.size <= budgets.b_tok
        assert state.chunks.weights.sum() == pytest.approx(1.0, abs=1e-6)

    def test_chunk_sources_are_selected_neighbors(self):
        _, _, state = self.build_state()
        selected = set(state.selected_neighbors.tolist())
        for i in state.chunks.support:
            assert state.chunks.pairs[i][0] in selected

    def test_provenance_closure_and_byte_spans(self):
        tag = tag_from_edges(2, [(0, 1)], texts=["café au lait words", "plain ascii text"])
        bank = build_bank(tag, 2, Encoder(EncoderConfig(dim=8)))
        params = SelectionParams.init(8)
        g = np.random.default_rng(1).normal(size=(2, 8))
        state = select_evidence(0, tag, g, bank, params, Budgets(), np.zeros(2), mix=0.5)
        pack = build_pack(state, bank, round_index=1, to_global=np.array([10, 11]))
        texts_by_gid = {10: tag.texts[0], 11: tag.texts[1]}
        global_texts = [""] * 12
        for gid, text in texts_by_gid.items():
            global_texts[gid] = text
        obj = pack_to_json_obj(pack, global_texts)
        for chunk_obj, chunk in zip(obj["chunks"], pack.chunks):
            text = global_texts[chunk.node]
            # char spans re-slice the original text; byte spans agree after encoding
            char_slice = text[chunk.char_start : chunk.char_end]
            byte_slice = text.encode("utf-8")[chunk_obj["byte_start"] : chunk_obj["byte_end"]]
            assert byte_slice.decode("utf-8") == char_slice

    def test_pack_store_roundtrip(self, tmp_path):
        tag, bank, state = self.build_state()
        pack = build_pack(state, bank, 3, to_global=np.arange(4))
        path = write_pack_store([pack], tmp_path / "packs.json", tag.texts)
        data = json.loads(path.read_text())
        assert data[0]["core_node"] == 1
        assert data[0]["round"] == 3


class TestSummarizer:
    def test_format_rule(self):
        tag = tag_from_edges(1, [], texts=["foo bar"])
        bank = build_bank(tag, 8, Encoder(EncoderConfig(dim=8)))
        params = SelectionParams.init(8)
        g = np.zeros((1, 8))
        g[0, 0] = 1.0
        state = select_evidence(0, tag, g, bank, params, Budgets(), np.zeros(1), mix=0.5)
        pack = build_pack(state, bank, 1, to_global=np.array([7]))
        texts = [""] * 8
        texts[7] = "foo bar"
        summary = summarize_pack(pack, ExtractiveSummarizer(), texts)
        assert summary == "foo bar [7#0]"

    def test_cache_hit(self):
        tag = tag_from_edges(1, [], texts=["foo bar"])
        bank = build_bank(tag, 8, Encoder(EncoderConfig(dim=8)))
        params = SelectionParams.init(8)
        g = np.ones((1, 8))
        state = select_evidence(0, tag, g, bank, params, Budgets(), np.zeros(1), mix=0.5)
        pack = build_pack(state, bank, 1, to_global=np.array([0]))
        cache = {}
        a = summarize_pack(pack, ExtractiveSummarizer(), ["foo bar"], cache=cache)

        class Boom:
            def summarize(self, chunks):
                raise RuntimeError("should not be called on cache hit")

        b = summarize_pack(pack, Boom(), ["foo bar"], cache=cache)
        assert a == b

    def test_failure_flags_pack(self):
        tag = tag_from_edges(1, [], texts=["foo bar"])
        bank = build_bank(tag, 8, Encoder(EncoderConfig(dim=8)))
        params = SelectionParams.init(8)
        state = select_evidence(0, tag, np.ones((1, 8)), bank, params, Budgets(), np.zeros(1), mix=0.5)
        pack = build_pack(state, bank, 1, to_global=np.array([0]))

        class Boom:
            def summarize(self, chunks):
                raise RuntimeError("llm down")

        assert summarize_pack(pack, Boom(), ["foo bar"]) is None
        assert "summary_failed" in pack.flags

    def test_empty_chunk_list_empty_summary(self):
        assert ExtractiveSummarizer().summarize([]) == ""
