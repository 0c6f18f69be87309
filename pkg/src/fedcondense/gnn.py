"""Two-layer GCN with hand-written backprop, plus full-graph inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ValidationError
from .evidence import Budgets, SelectionParams, project_for_selection, select_evidence
from .graph import TextAttributedGraph, normalize_adjacency
from .rng import stream_rng
from .textbank import ChunkEmbeddingBank
from .topology import FusionParams, fuse

log = logging.getLogger(__name__)


@dataclass
class GcnParams:
    w1: np.ndarray  # d_in x h
    w2: np.ndarray  # h x C
    dropout: float = 0.5

    @classmethod
    def init(cls, d_in: int, hidden: int, num_classes: int, seed: int, dropout: float = 0.5) -> "GcnParams":
        rng = stream_rng(seed, "gcn.init")
        w1 = rng.normal(0.0, np.sqrt(2.0 / (d_in + hidden)), size=(d_in, hidden))
        w2 = rng.normal(0.0, np.sqrt(2.0 / (hidden + num_classes)), size=(hidden, num_classes))
        return cls(w1=w1, w2=w2, dropout=dropout)

    def copy(self) -> "GcnParams":
        return GcnParams(w1=self.w1.copy(), w2=self.w2.copy(), dropout=self.dropout)


@dataclass
class GcnForward:
    hidden: np.ndarray  # post-ReLU, pre-dropout: the graph-side embeddings
    logits: np.ndarray
    pre_relu: np.ndarray
    hidden_dropped: np.ndarray
    dropout_mask: np.ndarray | None


def gcn_forward(
    a_hat: sp.spmatrix,
    x: np.ndarray,
    params: GcnParams,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> GcnForward:
    """H = ReLU(A X W1), O = A H W2; inverted dropout on H in train mode."""
    if x.shape[0] != a_hat.shape[0]:
        raise ValidationError(f"features rows {x.shape[0]} != adjacency dim {a_hat.shape[0]}")
    if x.shape[1] != params.w1.shape[0]:
        raise ValidationError(f"feature dim {x.shape[1]} != W1 rows {params.w1.shape[0]}")
    pre = a_hat @ (x @ params.w1)
    hidden = np.maximum(pre, 0.0)
    if train_mode and params.dropout > 0.0:
        if rng is None:
            raise ValueError("train-mode forward with dropout needs a generator")
        keep = 1.0 - params.dropout
        mask = (rng.random(hidden.shape) < keep).astype(np.float64)
        dropped = hidden * mask / keep
    else:
        mask = None
        dropped = hidden
    logits = a_hat @ (dropped @ params.w2)
    return GcnForward(
        hidden=hidden, logits=logits, pre_relu=pre, hidden_dropped=dropped, dropout_mask=mask
    )


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _targets(labels: np.ndarray, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Accepts class ids (-1 = unlabeled) or a soft-target row matrix."""
    if labels.ndim == 2:
        mask = np.ones(labels.shape[0], dtype=bool)
        return labels.astype(np.float64), mask
    mask = labels >= 0
    y = np.zeros((labels.shape[0], num_classes))
    y[np.where(mask)[0], labels[mask]] = 1.0
    return y, mask


def gcn_train_step(
    a_hat: sp.spmatrix,
    x: np.ndarray,
    labels: np.ndarray,
    params: GcnParams,
    lr: float,
    weight_decay: float,
    rng: np.random.Generator | None = None,
    train_mode: bool = True,
) -> tuple[GcnParams, float]:
    """One full-batch SGD step of cross-entropy + L2 weight decay.

    labels may be class ids with -1 for unlabeled rows, or a soft-target
    matrix (used to isolate the weight-decay path in tests). Returns updated
    parameters and the pre-step loss.
    """
    num_classes = params.w2.shape[1]
    y, mask = _targets(labels, num_classes)
    n_lab = int(mask.sum())
    if n_lab == 0:
        log.warning("no labeled nodes; training step skipped")
        return params.copy(), float("nan")

    fwd = gcn_forward(a_hat, x, params, train_mode=train_mode, rng=rng)
    probs = softmax_rows(fwd.logits)
    eps_rows = np.maximum((probs[mask] * y[mask]).sum(axis=1), 1e-300)
    loss = float(-np.log(eps_rows).mean())
    loss += 0.5 * weight_decay * (float(np.sum(params.w1**2)) + float(np.sum(params.w2**2)))

    d_logits = np.zeros_like(probs)
    d_logits[mask] = (probs[mask] - y[mask]) / n_lab
    du = a_hat.T @ d_logits  # symmetric propagation operator
    dw2 = fwd.hidden_dropped.T @ du
    dh_drop = du @ params.w2.T
    if fwd.dropout_mask is not None:
        dh = dh_drop * fwd.dropout_mask / (1.0 - params.dropout)
    else:
        dh = dh_drop
    dpre = dh * (fwd.pre_relu > 0.0)
    dv = a_hat.T @ dpre
    dw1 = x.T @ dv

    new = params.copy()
    new.w1 -= lr * (dw1 + weight_decay * params.w1)
    new.w2 -= lr * (dw2 + weight_decay * params.w2)
    return new, loss


def gcn_gradients(
    a_hat: sp.spmatrix,
    x: np.ndarray,
    labels: np.ndarray,
    params: GcnParams,
    weight_decay: float = 0.0,
) -> tuple[dict[str, np.ndarray], float]:
    """Loss and exact gradients with dropout off (finite-difference target)."""
    num_classes = params.w2.shape[1]
    y, mask = _targets(labels, num_classes)
    n_lab = int(mask.sum())
    fwd = gcn_forward(a_hat, x, params, train_mode=False)
    probs = softmax_rows(fwd.logits)
    loss = float(-np.log(np.maximum((probs[mask] * y[mask]).sum(axis=1), 1e-300)).mean())
    loss += 0.5 * weight_decay * (float(np.sum(params.w1**2)) + float(np.sum(params.w2**2)))
    d_logits = np.zeros_like(probs)
    d_logits[mask] = (probs[mask] - y[mask]) / n_lab
    du = a_hat.T @ d_logits
    dw2 = fwd.hidden.T @ du + weight_decay * params.w2
    dh = du @ params.w2.T
    dpre = dh * (fwd.pre_relu > 0.0)
    dw1 = x.T @ (a_hat.T @ dpre) + weight_decay * params.w1
    return {"w1": dw1, "w2": dw2}, loss


def entropy_rows(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(probs > 0, probs * np.log(probs), 0.0)
    return -plogp.sum(axis=1)


def predict_full(
    tag: TextAttributedGraph,
    bank: ChunkEmbeddingBank,
    gcn: GcnParams,
    selection: SelectionParams,
    fusion: FusionParams,
    budgets: Budgets,
    mix: float,
    alpha: float = 2.0,
    collect_selections: bool = False,
) -> tuple[np.ndarray, dict[int, list[tuple[int, int]]]]:
    """Per-node class distributions on an original local graph.

    Graph embeddings come from the backbone on pooled text features; each
    node then gets budgeted evidence, is fused, and decoded. Also returns the
    per-node selected (source node, chunk) pairs when asked (empty otherwise).
    """
    a_hat = normalize_adjacency(tag.adjacency)
    fwd = gcn_forward(a_hat, bank.node_vecs, gcn, train_mode=False)
    difficulty = entropy_rows(softmax_rows(fwd.logits))
    n = tag.node_count
    out = np.zeros((n, fusion.dec.shape[1]))
    selections: dict[int, list[tuple[int, int]]] = {}
    proj = project_for_selection(fwd.hidden, bank, selection)
    for v in range(n):
        state = select_evidence(
            v, tag, fwd.hidden, bank, selection, budgets, difficulty, mix, alpha, proj=proj
        )
        x, _ = fuse(fwd.hidden[v], state.chunks.t_tilde, fusion)
        logits = x @ fusion.dec
        e = np.exp(logits - logits.max())
        out[v] = e / e.sum()
        if collect_selections:
            selections[v] = [state.chunks.pairs[i] for i in state.chunks.support]
    return out, selections
