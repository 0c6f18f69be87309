from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from fedcondense.errors import ValidationError
from fedcondense.evidence import Budgets, SelectionParams
from fedcondense.gnn import GcnParams, gcn_forward, gcn_train_step, predict_full, softmax_rows
from fedcondense.graph import generate_synthetic_tag, normalize_adjacency
from fedcondense.rng import stream_rng
from fedcondense.textbank import Encoder, EncoderConfig, build_bank
from fedcondense.theory import gcn_gradient_check, make_gcn_instance
from fedcondense.topology import FusionParams

from conftest import tag_from_edges


def eye_adj(n):
    return sp.identity(n, format="csr")


class TestForward:
    def test_zero_weights_uniform_softmax(self):
        params = GcnParams(w1=np.zeros((4, 3)), w2=np.zeros((3, 2)), dropout=0.0)
        fwd = gcn_forward(eye_adj(5), np.random.default_rng(0).normal(size=(5, 4)), params)
        assert np.allclose(softmax_rows(fwd.logits), 0.5)

    def test_eval_mode_deterministic(self):
        a_hat, x, _, params = make_gcn_instance(seed=1)
        f1 = gcn_forward(a_hat, x, params, train_mode=False)
        f2 = gcn_forward(a_hat, x, params, train_mode=False)
        assert np.array_equal(f1.logits, f2.logits)

    def test_single_node_dense_hand_computation(self):
        rng = np.random.default_rng(2)
        params = GcnParams(w1=rng.normal(size=(4, 3)), w2=rng.normal(size=(3, 2)), dropout=0.0)
        x = rng.normal(size=(1, 4))
        fwd = gcn_forward(eye_adj(1), x, params)
        want = np.maximum(x @ params.w1, 0.0) @ params.w2
        assert np.allclose(fwd.logits, want)

    def test_dimension_mismatch_raises(self):
        params = GcnParams(w1=np.zeros((4, 3)), w2=np.zeros((3, 2)))
        with pytest.raises(ValidationError):
            gcn_forward(eye_adj(2), np.zeros((2, 5)), params)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        tag = tag_from_edges(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)])
        a_hat = normalize_adjacency(tag.adjacency)
        x = rng.normal(size=(6, 4))
        params = GcnParams(w1=rng.normal(size=(4, 3)), w2=rng.normal(size=(3, 2)), dropout=0.0)
        base = gcn_forward(a_hat, x, params).logits
        perm = rng.permutation(6)
        p_mat = np.eye(6)[perm]
        a_perm = sp.csr_matrix(p_mat @ tag.adjacency.toarray() @ p_mat.T)
        permuted = gcn_forward(normalize_adjacency(a_perm), x[perm], params).logits
        assert np.allclose(permuted, base[perm], atol=1e-12)


class TestTrainStep:
    def test_zero_lr_no_change(self):
        a_hat, x, labels, params = make_gcn_instance(seed=4)
        new, loss = gcn_train_step(a_hat, x, labels, params, lr=0.0, weight_decay=5e-4, train_mode=False)
        assert np.array_equal(new.w1, params.w1) and np.array_equal(new.w2, params.w2)
        assert np.isfinite(loss)

    def test_soft_targets_isolate_weight_decay(self):
        # targets equal to the current prediction zero the CE gradient,
        # leaving the pure multiplicative decay
        a_hat, x, _, params = make_gcn_instance(seed=5)
        fwd = gcn_forward(a_hat, x, params, train_mode=False)
        soft = softmax_rows(fwd.logits)
        lr, wd = 0.1, 0.05
        new, _ = gcn_train_step(a_hat, x, soft, params, lr=lr, weight_decay=wd, train_mode=False)
        assert np.allclose(new.w1, (1 - lr * wd) * params.w1, atol=1e-12)
        assert np.allclose(new.w2, (1 - lr * wd) * params.w2, atol=1e-12)

    def test_no_labels_skips_with_warning(self, caplog):
        a_hat, x, _, params = make_gcn_instance(seed=6)
        new, loss = gcn_train_step(a_hat, x, np.full(x.shape[0], -1), params, 0.1, 0.0)
        assert np.isnan(loss)
        assert np.array_equal(new.w1, params.w1)

    def test_finite_difference_agreement(self):
        assert gcn_gradient_check(seed=0) < 1e-4

    def test_loss_decreases_on_separable_toy(self):
        rng = np.random.default_rng(7)
        n, d = 12, 6
        labels = np.array([0] * 6 + [1] * 6)
        x = rng.normal(size=(n, d)) * 0.1
        x[labels == 0, 0] += 2.0
        x[labels == 1, 1] += 2.0
        params = GcnParams.init(d, 5, 2, seed=0, dropout=0.0)
        a_hat = normalize_adjacency(sp.csr_matrix((n, n)))
        losses = []
        for _ in range(10):
            params, loss = gcn_train_step(a_hat, x, labels, params, lr=0.5, weight_decay=0.0, train_mode=False)
        # recompute final loss for a strict before/after comparison
        _, final = gcn_train_step(a_hat, x, labels, params, lr=0.0, weight_decay=0.0, train_mode=False)
        _, first = gcn_train_step(a_hat, x, labels, GcnParams.init(d, 5, 2, seed=0, dropout=0.0), lr=0.0, weight_decay=0.0, train_mode=False)
        assert final < first

    def test_dropout_seeded_reproducible(self):
        a_hat, x, labels, params = make_gcn_instance(seed=8)
        params.dropout = 0.5
        a = gcn_train_step(a_hat, x, labels, params, 0.1, 0.0, rng=stream_rng(1, "d"), train_mode=True)
        b = gcn_train_step(a_hat, x, labels, params, 0.1, 0.0, rng=stream_rng(1, "d"), train_mode=True)
        assert np.array_equal(a[0].w1, b[0].w1)


class TestPredictFull:
    def setup_model(self, tag, seed=0):
        dim = 32
        bank = build_bank(tag, 16, Encoder(EncoderConfig(dim=dim)))
        gcn = GcnParams.init(dim, dim, tag.num_classes, seed=seed, dropout=0.5)
        return bank, gcn, SelectionParams.init(dim), FusionParams.init(dim, tag.num_classes, seed)

    def test_distributions_sum_to_one_and_deterministic(self):
        tag = generate_synthetic_tag(3, 8, 0.4, 0.05, seed=1)
        bank, gcn, sel, fus = self.setup_model(tag)
        probs, _ = predict_full(tag, bank, gcn, sel, fus, Budgets(), mix=0.6)
        probs2, _ = predict_full(tag, bank, gcn, sel, fus, Budgets(), mix=0.6)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)
        assert np.array_equal(probs, probs2)

    def test_selection_registry_collects_pairs(self):
        tag = generate_synthetic_tag(2, 6, 0.5, 0.1, seed=2)
        bank, gcn, sel, fus = self.setup_model(tag)
        _, sels = predict_full(tag, bank, gcn, sel, fus, Budgets(), mix=0.6, collect_selections=True)
        assert len(sels) == tag.node_count
        for pairs in sels.values():
            assert len(pairs) <= Budgets().b_tok
