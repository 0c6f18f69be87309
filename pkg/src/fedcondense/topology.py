"""Cross-modal fusion and self-expressive topology reconstruction.

Fusion gradients are hand-derived. The selection parameters receive their
gradient through the evidence embeddings with a straight-through convention:
top-B truncation acts as identity on the surviving support, where the sparse
attention Jacobian is I - 11^T/|S|.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import DescentViolation, InvariantViolation
from .evidence import EvidenceState, SelectionParams
from .rng import stream_rng
from .textbank import ChunkEmbeddingBank

log = logging.getLogger(__name__)

LN_STD_FLOOR = 1e-6


@dataclass
class FusionParams:
    """Gated fusion weights plus the three linear decoder heads."""

    w_g: np.ndarray  # d x d
    w_t: np.ndarray  # d x d
    w: np.ndarray  # 2d gate vector
    dec: np.ndarray  # d x C
    dec_g: np.ndarray  # d x C
    dec_t: np.ndarray  # d x C

    @classmethod
    def init(cls, dim: int, num_classes: int, seed: int) -> "FusionParams":
        rng = stream_rng(seed, "fusion.init")
        scale = 1.0 / np.sqrt(dim)
        return cls(
            w_g=np.eye(dim),
            w_t=np.eye(dim),
            w=np.zeros(2 * dim),  # sigmoid(0) = 0.5: neutral text gate at start
            dec=rng.normal(0.0, scale, size=(dim, num_classes)),
            dec_g=rng.normal(0.0, scale, size=(dim, num_classes)),
            dec_t=rng.normal(0.0, scale, size=(dim, num_classes)),
        )


@dataclass
class FuseCache:
    alpha: float
    pre_norm: np.ndarray
    mean: float
    std: float
    floored: bool
    x: np.ndarray


def fuse(g_v: np.ndarray, t_tilde: np.ndarray, params: FusionParams) -> tuple[np.ndarray, FuseCache]:
    """Gated combination x = LN(W_g g + alpha * W_t t), alpha = sigmoid gate."""
    z = params.w @ np.concatenate([g_v, t_tilde])
    alpha = float(1.0 / (1.0 + np.exp(-z)))
    pre = params.w_g @ g_v + alpha * (params.w_t @ t_tilde)
    mean = float(pre.mean())
    std = float(pre.std())
    floored = std < LN_STD_FLOOR
    std_used = LN_STD_FLOOR if floored else std
    x = (pre - mean) / std_used
    return x, FuseCache(alpha=alpha, pre_norm=pre, mean=mean, std=std_used, floored=floored, x=x)


def _layer_norm_backward(dx: np.ndarray, cache: FuseCache) -> np.ndarray:
    d = dx.shape[0]
    if cache.floored:
        return (dx - dx.mean()) / cache.std
    xh = cache.x
    return (dx - dx.mean() - xh * np.mean(dx * xh)) / cache.std


def _softmax(o: np.ndarray) -> np.ndarray:
    e = np.exp(o - o.max())
    return e / e.sum()


def zero_grads(fusion: FusionParams, selection: SelectionParams) -> dict[str, np.ndarray]:
    return {
        "w_g": np.zeros_like(fusion.w_g),
        "w_t": np.zeros_like(fusion.w_t),
        "w": np.zeros_like(fusion.w),
        "dec": np.zeros_like(fusion.dec),
        "dec_g": np.zeros_like(fusion.dec_g),
        "dec_t": np.zeros_like(fusion.dec_t),
        "w_q": np.zeros_like(selection.w_q),
        "w_k": np.zeros_like(selection.w_k),
        "w_s": np.zeros_like(selection.w_s),
        "gamma": np.zeros_like(selection.gamma),
    }


@dataclass
class FusionLossResult:
    loss: float
    ce_term: float
    align_term: float
    grads: dict[str, np.ndarray]
    fused: np.ndarray  # (K, d)


def fusion_loss(
    labels: np.ndarray,
    g_core: np.ndarray,
    states: list[EvidenceState],
    fusion: FusionParams,
    selection: SelectionParams,
    lambda_align: float,
    mix: float,
    bank: ChunkEmbeddingBank,
) -> FusionLossResult:
    """Supervised fused-view loss plus cross-view consistency, with gradients.

    labels: true class per core node (-1 where unlabeled); CE averages over
    the labeled subset, the KL regularizer over all core nodes. Gradients
    cover the fusion parameters, the decoders, and (straight-through) the
    selection parameters.
    """
    k = len(states)
    d = g_core.shape[1]
    labeled = np.where(labels >= 0)[0]
    if labeled.size == 0:
        log.warning("no labeled core nodes; consistency term only")
    grads = zero_grads(fusion, selection)
    fused = np.zeros((k, d))

    loss_ce = 0.0
    loss_kl = 0.0
    sqrt_d = np.sqrt(d)
    for i, state in enumerate(states):
        g_v = g_core[i]
        t_tilde = state.chunks.t_tilde
        x, cache = fuse(g_v, t_tilde, fusion)
        fused[i] = x

        dx = np.zeros(d)
        dt = np.zeros(d)

        if labels[i] >= 0:
            o = x @ fusion.dec
            p = _softmax(o)
            loss_ce += -np.log(max(p[labels[i]], 1e-300))
            do = p.copy()
            do[labels[i]] -= 1.0
            do /= labeled.size
            grads["dec"] += np.outer(x, do)
            dx += fusion.dec @ do

        if lambda_align > 0.0:
            o_g = g_v @ fusion.dec_g
            o_t = t_tilde @ fusion.dec_t
            pg = _softmax(o_g)
            pt = _softmax(o_t)
            logs = np.log(np.maximum(pg, 1e-300)) - np.log(np.maximum(pt, 1e-300))
            kl = float(pg @ logs)
            loss_kl += kl
            coeff = lambda_align / k
            do_g = coeff * pg * (logs - kl)
            do_t = coeff * (pt - pg)
            grads["dec_g"] += np.outer(g_v, do_g)
            grads["dec_t"] += np.outer(t_tilde, do_t)
            dt += fusion.dec_t @ do_t

        # back through LayerNorm and the gated sum
        du = _layer_norm_backward(dx, cache)
        grads["w_g"] += np.outer(du, g_v)
        wt_t = fusion.w_t @ t_tilde
        d_alpha = float(du @ wt_t)
        grads["w_t"] += cache.alpha * np.outer(du, t_tilde)
        dt += cache.alpha * (fusion.w_t.T @ du)
        dz = d_alpha * cache.alpha * (1.0 - cache.alpha)
        grads["w"] += dz * np.concatenate([g_v, t_tilde])
        dt += dz * fusion.w[d:]

        # straight-through into the chunk selection
        ch = state.chunks
        if not ch.empty and ch.support.size:
            sup = ch.support
            dpi = ch.matrix[sup] @ dt
            da = dpi - dpi.mean()
            dq = (ch.matrix[sup].T @ da) / sqrt_d
            grads["w_s"] += np.outer(dq, ch.mix_input)
            d_mix_input = selection.w_s.T @ dq
            dc = (1.0 - mix) * d_mix_input
        else:
            dc = np.zeros(d)

        # hierarchical context: gamma and per-hop gate scores
        active = [gate.hop for gate in state.gates if gate.support.size > 0]
        mass = float(selection.gamma[active].sum()) if active else 0.0
        d_gamma_eff = state.hop_contexts @ dc  # length 3
        if mass > 0.0:
            gamma_eff = state.gamma_eff
            inner = float(d_gamma_eff[active] @ gamma_eff[active])
            for hop in active:
                grads["gamma"][hop] += (d_gamma_eff[hop] - inner) / mass

        w_q_g = selection.w_q @ g_v
        for gate in state.gates:
            if gate.support.size <= 1:
                continue  # singleton support: on-support Jacobian is zero
            sup = gate.support
            dm = state.gamma_eff[gate.hop] * dc
            t_sel = bank.node_vecs[gate.candidates[sup]]
            dw_sel = t_sel @ dm
            ds = dw_sel - dw_sel.mean()
            k_sel = t_sel @ selection.w_k.T
            dqv = (k_sel.T @ ds) / sqrt_d
            grads["w_q"] += np.outer(dqv, g_v)
            grads["w_k"] += np.outer(w_q_g, t_sel.T @ ds) / sqrt_d

    ce_term = loss_ce / labeled.size if labeled.size else 0.0
    align_term = lambda_align * loss_kl / k if k else 0.0
    return FusionLossResult(
        loss=ce_term + align_term,
        ce_term=ce_term,
        align_term=align_term,
        grads=grads,
        fused=fused,
    )


def apply_fusion_update(
    fusion: FusionParams,
    selection: SelectionParams,
    grads: dict[str, np.ndarray],
    lr: float,
) -> None:
    fusion.w_g -= lr * grads["w_g"]
    fusion.w_t -= lr * grads["w_t"]
    fusion.w -= lr * grads["w"]
    fusion.dec -= lr * grads["dec"]
    fusion.dec_g -= lr * grads["dec_g"]
    fusion.dec_t -= lr * grads["dec_t"]
    selection.w_q -= lr * grads["w_q"]
    selection.w_k -= lr * grads["w_k"]
    selection.w_s -= lr * grads["w_s"]
    selection.gamma -= lr * grads["gamma"]
    selection.project_gamma()


def evidence_prior(t_tilde: np.ndarray) -> np.ndarray:
    """Pairwise textual-support scores in [0,1] from evidence embeddings.

    S_ij = (1 + cosine)/2 with unit diagonal; rows for zero evidence vectors
    fall back to the uninformative 0.5.
    """
    k = t_tilde.shape[0]
    norms = np.linalg.norm(t_tilde, axis=1)
    zero = norms == 0.0
    if zero.any():
        log.debug("%d evidence rows are zero; prior row set to 0.5", int(zero.sum()))
    safe = np.where(zero, 1.0, norms)
    unit = t_tilde / safe[:, None]
    s = (1.0 + unit @ unit.T) / 2.0
    s[zero, :] = 0.5
    s[:, zero] = 0.5
    np.fill_diagonal(s, 1.0)
    return np.clip(s, 0.0, 1.0)


def candidate_sets(x: np.ndarray, s: np.ndarray, q: int) -> list[np.ndarray]:
    """Per-row union of top-q feature-similar and top-q prior-supported peers."""
    if q < 1:
        raise ValueError("candidate size q must be >= 1")
    k = x.shape[0]
    sims = x @ x.T
    out = []
    for i in range(k):
        others = np.array([j for j in range(k) if j != i], dtype=np.int64)
        by_feat = others[np.lexsort((others, -sims[i, others]))][:q]
        by_prior = others[np.lexsort((others, -s[i, others]))][:q]
        out.append(np.unique(np.concatenate([by_feat, by_prior])))
    return out


@dataclass
class SparseCoefficients:
    """Row-supported self-expression coefficients over the condensed core."""

    support: list[np.ndarray]
    values: np.ndarray  # dense (K, K); zero off support and on the diagonal
    core_size: int
    objective_history: np.ndarray
    eta: float


def estimate_gram_spectral_norm(x: np.ndarray, iters: int = 20, seed: int = 0) -> float:
    """Power-iteration estimate of sigma_max(X^T X) (== sigma_max of the row gram)."""
    gram = x @ x.T
    rng = stream_rng(seed, "topology.power-iteration")
    v = rng.normal(size=gram.shape[0])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        v = gram @ v
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return 0.0
        sigma = norm
        v /= norm
    return float(sigma)


def self_expression(
    x: np.ndarray,
    s: np.ndarray,
    candidates: list[np.ndarray],
    alpha: float,
    lambda1: float,
    lambda3: float,
    eta: float | None = None,
    iters: int = 30,
) -> SparseCoefficients:
    """Masked proximal-gradient solve of the prior-weighted self-expression.

    Objective: alpha ||X - XZ||_F^2 + lambda1 ||Z||_1
               + lambda3 * sum_{i != j} (1 - S_ij) |Z_ij|, support-restricted.
    eta is auto-tuned from the smooth part's Lipschitz constant when unset;
    the objective must be non-increasing, asserted on every iterate.
    """
    k = x.shape[0]
    support = np.zeros((k, k), dtype=bool)
    for i, cand in enumerate(candidates):
        support[i, cand] = True
    np.fill_diagonal(support, False)

    sigma = estimate_gram_spectral_norm(x)
    if eta is None:
        if sigma <= 0.0:
            eta = 1.0
        else:
            # safely inside the descent region eta <= 1/(2 alpha sigma_max)
            eta = 1.0 / (2.0 * alpha * sigma * 1.05)
    elif sigma > 0.0 and eta > 1.0 / (alpha * sigma) + 1e-12:
        raise ValueError(f"eta {eta} violates the step-size precondition 1/(alpha*sigma)")

    penalty = lambda1 + lambda3 * (1.0 - s)
    np.fill_diagonal(penalty, 0.0)
    z, hist = kernels.ista_solve(
        np.ascontiguousarray(x.T), support, penalty, float(alpha), float(eta), int(iters)
    )
    if not np.all(np.isfinite(hist)):
        raise DescentViolation(f"non-finite objective (eta={eta}, sigma={sigma})")
    increases = np.diff(hist) > 1e-9
    if increases.any():
        first = int(np.argmax(increases))
        raise DescentViolation(
            f"objective increased at iteration {first + 1}: "
            f"{hist[first]:.12g} -> {hist[first + 1]:.12g} (eta={eta})"
        )
    row_support = [np.where(z[i] != 0.0)[0] for i in range(k)]
    for i, sup in enumerate(row_support):
        if not np.all(support[i, sup]):
            raise InvariantViolation("coefficient escaped its candidate support")
    return SparseCoefficients(
        support=[cand.copy() for cand in candidates],
        values=z,
        core_size=k,
        objective_history=hist,
        eta=float(eta),
    )


def synthesize_adjacency(z: np.ndarray, k_keep: int) -> sp.csr_matrix:
    """Weighted condensed adjacency: |Z|+|Z|^T, top-k per row, max-merged.

    An edge survives if either endpoint kept it; ties in a row go to the
    lower column. All-zero coefficients yield an empty (flagged) graph.
    """
    if k_keep < 1:
        raise ValueError("k must be >= 1")
    k = z.shape[0]
    w = np.abs(z) + np.abs(z).T
    np.fill_diagonal(w, 0.0)
    if not w.any():
        log.warning("self-expression produced no edges; condensed graph is self-loops only")
        return sp.csr_matrix((k, k))
    keep = np.zeros((k, k), dtype=bool)
    for i in range(k):
        row = w[i]
        positive = np.where(row > 0)[0]
        if positive.size == 0:
            continue
        order = np.lexsort((positive, -row[positive]))
        keep[i, positive[order[:k_keep]]] = True
    mask = keep | keep.T
    out = np.where(mask, w, 0.0)
    return sp.csr_matrix(out)
