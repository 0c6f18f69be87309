"""Budgeted hierarchical evidence selection with local provenance.

Per core node: gate neighbors per hop under hard budgets with sparse
attention, mix a hierarchical context vector, select text chunks under the
token budget, and record everything as an auditable evidence pack that never
leaves the client.
"""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from . import kernels
from .errors import ConfigError
from .graph import TextAttributedGraph, k_hop_neighbors
from .rng import stream_rng
from .textbank import ChunkEmbeddingBank

log = logging.getLogger(__name__)

HOPS = (0, 1, 2)


@dataclass
class SelectionParams:
    """Learnable neighbor/chunk scoring parameters and hop mixture weights."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_s: np.ndarray
    gamma: np.ndarray  # 3 nonnegative weights summing to 1

    @classmethod
    def init(cls, dim: int) -> "SelectionParams":
        # identity scoring at start: raw cross-modal inner products
        return cls(
            w_q=np.eye(dim),
            w_k=np.eye(dim),
            w_s=np.eye(dim),
            gamma=np.full(3, 1.0 / 3.0),
        )

    def project_gamma(self) -> None:
        """Clip to nonnegative and renormalize onto the simplex after updates."""
        g = np.maximum(self.gamma, 0.0)
        total = g.sum()
        self.gamma = g / total if total > 0 else np.full(3, 1.0 / 3.0)


@dataclass(frozen=True)
class Budgets:
    """Hard per-hop neighbor budgets and the chunk/token budget."""

    b0: int = 1
    b1: int = 3
    b2: int = 2
    b_tok: int = 4
    two_hop_prefilter: int | None = None  # candidate cap before scoring, default b2

    def __post_init__(self) -> None:
        if self.b0 != 1:
            raise ConfigError("hop-0 budget is fixed to 1 (the node itself)")
        if min(self.b1, self.b2, self.b_tok) < 1:
            raise ConfigError("all budgets must be >= 1")
        if self.two_hop_prefilter is not None and self.two_hop_prefilter < self.b2:
            raise ConfigError("two-hop prefilter cap cannot be below b2")

    @property
    def prefilter_cap(self) -> int:
        return self.b2 if self.two_hop_prefilter is None else self.two_hop_prefilter

    def hop_budget(self, hop: int) -> int:
        return (self.b0, self.b1, self.b2)[hop]


def sparse_attention(scores: np.ndarray, alpha: float = 2.0) -> np.ndarray:
    """Sparse probability weights from raw scores (sparsemax or 1.5-entmax)."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("sparse_attention needs at least one score")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if alpha == 2.0:
        return kernels.sparsemax(scores)
    if alpha == 1.5:
        return kernels.entmax15(scores)
    raise ConfigError("sparsity exponent must be 1.5 or 2.0")


def top_b_truncate(p: np.ndarray, b: int) -> np.ndarray:
    """Keep the B largest probabilities (ties to lower index), renormalize."""
    if b < 1:
        raise ConfigError("truncation budget must be >= 1")
    return kernels.top_b_renormalize(np.asarray(p, dtype=np.float64), b)


def top_b_index_set(values: np.ndarray, b: int) -> frozenset[int]:
    """Deterministic top-B index set (descending value, ties to lower index)."""
    order = np.argsort(-values, kind="stable")
    return frozenset(order[: min(b, values.size)].tolist())


def selected_index_set(scores: np.ndarray, weights: np.ndarray, b: int) -> frozenset[int]:
    """Top-B selection after attention + truncation.

    Weights decide first; ties among equal (typically zero) weights follow
    the underlying score order, then the lower index. Because both the
    attention map and truncation preserve score order, this equals the
    score-level top-B set.
    """
    n = scores.size
    order = np.lexsort((np.arange(n), -scores, -weights))
    return frozenset(order[: min(b, n)].tolist())


def prefilter_two_hop(candidates: np.ndarray, difficulty: np.ndarray, cap: int) -> np.ndarray:
    """Cap the 2-hop candidate set to the most uncertain nodes."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size <= cap:
        return np.sort(candidates)
    u = difficulty[candidates]
    order = np.lexsort((candidates, -u))
    return np.sort(candidates[order[:cap]])


@dataclass
class HopGate:
    hop: int
    candidates: np.ndarray  # local node ids, ascending
    scores: np.ndarray
    dist: np.ndarray  # sparse attention weights before truncation
    weights: np.ndarray  # after top-B truncation, aligned with candidates
    support: np.ndarray  # indices into candidates with positive weight

    @property
    def selected(self) -> np.ndarray:
        return self.candidates[self.support]


@dataclass
class ProjectionPack:
    """Batched parameter projections, computed once per (embeddings, params).

    Selecting evidence for many nodes repeats the same three mat-vecs per
    node; hoisting them into whole-graph GEMMs dominates evaluation speed.
    """

    queries: np.ndarray  # g @ W_q^T
    keys: np.ndarray  # t @ W_k^T
    ws_g: np.ndarray  # g @ W_s^T


def project_for_selection(
    g: np.ndarray, bank: ChunkEmbeddingBank, params: SelectionParams
) -> ProjectionPack:
    return ProjectionPack(
        queries=g @ params.w_q.T,
        keys=bank.node_vecs @ params.w_k.T,
        ws_g=g @ params.w_s.T,
    )


def gate_neighbors(
    v: int,
    g: np.ndarray,
    bank: ChunkEmbeddingBank,
    params: SelectionParams,
    budgets: Budgets,
    tag: TextAttributedGraph,
    difficulty: np.ndarray,
    alpha: float = 2.0,
    proj: ProjectionPack | None = None,
) -> list[HopGate]:
    """Score and gate hop-0/1/2 neighbors under the hop budgets.

    Hop 0 is the node itself with weight 1; hop 2 is difficulty-prefiltered
    before scoring. Hops with no candidates yield empty gates.
    """
    d = bank.dim
    query = proj.queries[v] if proj is not None else params.w_q @ g[v]
    gates = []
    for hop in HOPS:
        cands = k_hop_neighbors(tag, v, hop)
        if hop == 2 and cands.size:
            cands = prefilter_two_hop(cands, difficulty, budgets.prefilter_cap)
        if cands.size == 0:
            gates.append(
                HopGate(
                    hop=hop,
                    candidates=cands,
                    scores=np.empty(0),
                    dist=np.empty(0),
                    weights=np.empty(0),
                    support=np.empty(0, dtype=np.int64),
                )
            )
            continue
        keys = proj.keys[cands] if proj is not None else bank.node_vecs[cands] @ params.w_k.T
        scores = keys @ query / np.sqrt(d)
        dist = sparse_attention(scores, alpha)
        weights = top_b_truncate(dist, budgets.hop_budget(hop))
        support = np.where(weights > 0)[0]
        gates.append(
            HopGate(hop=hop, candidates=cands, scores=scores, dist=dist, weights=weights, support=support)
        )
    return gates


def hierarchical_context(
    gates: list[HopGate], bank: ChunkEmbeddingBank, gamma: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mix gated per-hop aggregates into one context vector.

    Returns (context, effective gamma, per-hop aggregates). Hops with empty
    gates get zero effective weight; the remaining gamma mass is renormalized
    over the nonempty hops.
    """
    d = bank.dim
    hop_contexts = np.zeros((len(HOPS), d))
    active = np.zeros(len(HOPS), dtype=bool)
    for gate in gates:
        if gate.support.size == 0:
            continue
        active[gate.hop] = True
        sel = gate.support
        hop_contexts[gate.hop] = gate.weights[sel] @ bank.node_vecs[gate.candidates[sel]]
    gamma_eff = np.zeros(len(HOPS))
    mass = gamma[active].sum()
    if mass > 0:
        gamma_eff[active] = gamma[active] / mass
    else:
        gamma_eff[active] = 1.0 / active.sum()  # degenerate simplex corner on empty hops
    context = gamma_eff @ hop_contexts
    return context, gamma_eff, hop_contexts


@dataclass
class ChunkSelection:
    pairs: list[tuple[int, int]]  # (local node, chunk idx), ascending
    matrix: np.ndarray  # candidate chunk embeddings, one row per pair
    scores: np.ndarray
    dist: np.ndarray  # sparse attention weights before truncation
    weights: np.ndarray  # after token-budget truncation
    support: np.ndarray
    query: np.ndarray
    mix_input: np.ndarray
    t_tilde: np.ndarray
    empty: bool = False


def select_chunks(
    v: int,
    g_v: np.ndarray,
    context: np.ndarray,
    mix: float,
    bank: ChunkEmbeddingBank,
    selected_neighbors: np.ndarray,
    b_tok: int,
    params: SelectionParams,
    alpha: float = 2.0,
    ws_g_v: np.ndarray | None = None,
) -> ChunkSelection:
    """Pick evidence chunks from the gated neighbors under the token budget.

    The query blends the node's graph embedding with its hierarchical context
    (mix * W_s g_v + (1-mix) * W_s c_v). Neighbors without text contribute no
    candidates; an entirely textless selection yields a flagged zero vector.
    """
    if not (0.0 <= mix <= 1.0):
        raise ConfigError("mix must lie in [0, 1]")
    d = bank.dim
    pairs = []
    for u in sorted(set(int(x) for x in selected_neighbors)):
        for r in range(bank.chunk_count(u)):
            pairs.append((u, r))
    mix_input = mix * g_v + (1.0 - mix) * context
    if ws_g_v is not None:
        query = mix * ws_g_v + (1.0 - mix) * (params.w_s @ context)
    else:
        query = params.w_s @ mix_input
    if not pairs:
        log.debug("node %d: all selected neighbors are textless", v)
        return ChunkSelection(
            pairs=[],
            matrix=np.zeros((0, d)),
            scores=np.empty(0),
            dist=np.empty(0),
            weights=np.empty(0),
            support=np.empty(0, dtype=np.int64),
            query=query,
            mix_input=mix_input,
            t_tilde=np.zeros(d),
            empty=True,
        )
    matrix = np.stack([bank.chunk_vector(u, r) for u, r in pairs])
    scores = matrix @ query / np.sqrt(d)
    dist = sparse_attention(scores, alpha)
    weights = top_b_truncate(dist, b_tok)
    support = np.where(weights > 0)[0]
    t_tilde = weights[support] @ matrix[support]
    return ChunkSelection(
        pairs=pairs,
        matrix=matrix,
        scores=scores,
        dist=dist,
        weights=weights,
        support=support,
        query=query,
        mix_input=mix_input,
        t_tilde=t_tilde,
    )


@dataclass
class EvidenceState:
    """Everything computed while selecting evidence for one core node."""

    node: int
    gates: list[HopGate]
    gamma_eff: np.ndarray
    hop_contexts: np.ndarray
    context: np.ndarray
    chunks: ChunkSelection

    @property
    def selected_neighbors(self) -> np.ndarray:
        parts = [gate.selected for gate in self.gates]
        return np.unique(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)

    def selection_signature(self) -> tuple:
        """Hashable snapshot of the selected sets (for refresh-change counting)."""
        hop_sets = tuple(frozenset(gate.selected.tolist()) for gate in self.gates)
        chunk_set = frozenset(self.chunks.pairs[i] for i in self.chunks.support)
        return (hop_sets, chunk_set)


def select_evidence(
    v: int,
    tag: TextAttributedGraph,
    g: np.ndarray,
    bank: ChunkEmbeddingBank,
    params: SelectionParams,
    budgets: Budgets,
    difficulty: np.ndarray,
    mix: float,
    alpha: float = 2.0,
    proj: ProjectionPack | None = None,
) -> EvidenceState:
    """Full evidence pipeline for one node: gates, context, chunk selection."""
    gates = gate_neighbors(v, g, bank, params, budgets, tag, difficulty, alpha, proj=proj)
    context, gamma_eff, hop_contexts = hierarchical_context(gates, bank, params.gamma)
    selected = np.unique(np.concatenate([gate.selected for gate in gates]))
    chunks = select_chunks(
        v, g[v], context, mix, bank, selected, budgets.b_tok, params, alpha,
        ws_g_v=proj.ws_g[v] if proj is not None else None,
    )
    return EvidenceState(
        node=v,
        gates=gates,
        gamma_eff=gamma_eff,
        hop_contexts=hop_contexts,
        context=context,
        chunks=chunks,
    )


def tail_mass(p: np.ndarray, b: int) -> float:
    """Probability mass outside the top-B entries (ties to lower index)."""
    p = np.asarray(p, dtype=np.float64)
    if p.size <= b:
        return 0.0
    order = np.argsort(-p, kind="stable")
    return float(p[order[b:]].sum())


def verify_truncation_bound(
    p: np.ndarray, e: np.ndarray, b: int
) -> tuple[float, float, bool]:
    """Check || sum p_i e_i - sum Pi_B(p)_i e_i || <= 2 M delta_B(p).

    M is the largest embedding norm in e. Returns (error, bound, holds).
    """
    p = np.asarray(p, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    m_bound = float(np.linalg.norm(e, axis=1).max()) if e.size else 0.0
    truncated = top_b_truncate(p, b)
    error = float(np.linalg.norm(p @ e - truncated @ e))
    bound = 2.0 * m_bound * tail_mass(p, b)
    return error, bound, error <= bound + 1e-9


def verify_selection_stability(
    scores: np.ndarray,
    b: int,
    epsilon: float,
    trials: int,
    seed: int,
    alpha: float = 2.0,
) -> bool | None:
    """Empirically confirm top-B selection is invariant to small score noise.

    Perturbations are uniform with sup-norm epsilon, which must stay below
    half the top-B margin. Returns None (with a warning) when the margin is
    zero, because the guarantee's precondition fails.
    """
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    if b >= n:
        return True
    sorted_desc = np.sort(scores)[::-1]
    margin = sorted_desc[b - 1] - sorted_desc[b]
    if margin == 0.0:
        warnings.warn("top-B margin is zero; stability check skipped", stacklevel=2)
        return None
    if epsilon >= margin / 2.0:
        raise ValueError(f"epsilon {epsilon} must be below half the margin {margin / 2.0}")
    base = selected_index_set(scores, top_b_truncate(sparse_attention(scores, alpha), b), b)
    rng = stream_rng(seed, "stability.perturbations")
    for _ in range(trials):
        delta = rng.uniform(-epsilon, epsilon, size=n)
        shifted = scores + delta
        perturbed = selected_index_set(
            shifted, top_b_truncate(sparse_attention(shifted, alpha), b), b
        )
        if perturbed != base:
            return False
    return True


@dataclass
class PackChunk:
    node: int  # global id
    chunk: int
    char_start: int
    char_end: int
    weight: float
    token_count: int


@dataclass
class EvidencePack:
    """Local audit record for one core node at one refresh round."""

    core_node: int  # global id
    round_index: int
    hop_neighbors: dict[int, list[tuple[int, float]]]  # hop -> [(global id, weight)]
    chunks: list[PackChunk]
    summary: str | None = None
    flags: list[str] = field(default_factory=list)

    def chunk_set_hash(self) -> str:
        key = tuple(sorted((c.node, c.chunk) for c in self.chunks))
        return hashlib.sha256(repr(key).encode()).hexdigest()[:16]

    def content_hash(self) -> str:
        payload = json.dumps(
            {
                "core": self.core_node,
                "hops": {h: [[n, round(w, 12)] for n, w in v] for h, v in self.hop_neighbors.items()},
                "chunks": [
                    [c.node, c.chunk, c.char_start, c.char_end, round(c.weight, 12)]
                    for c in self.chunks
                ],
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def tokens_selected(self) -> int:
        return sum(c.token_count for c in self.chunks)


def build_pack(
    state: EvidenceState,
    bank: ChunkEmbeddingBank,
    round_index: int,
    to_global: np.ndarray,
) -> EvidencePack:
    """Freeze an evidence state into a pack with global-id provenance."""
    hop_neighbors: dict[int, list[tuple[int, float]]] = {}
    for gate in state.gates:
        entries = [
            (int(to_global[gate.candidates[i]]), float(gate.weights[i]))
            for i in gate.support
        ]
        hop_neighbors[gate.hop] = entries
    chunks = []
    order = sorted(
        state.chunks.support.tolist(),
        key=lambda i: (-state.chunks.weights[i], state.chunks.pairs[i]),
    )
    for i in order:
        u, r = state.chunks.pairs[i]
        span = bank.chunk_span(u, r)
        chunks.append(
            PackChunk(
                node=int(to_global[u]),
                chunk=r,
                char_start=span.char_start,
                char_end=span.char_end,
                weight=float(state.chunks.weights[i]),
                token_count=span.token_count,
            )
        )
    flags = ["textless"] if state.chunks.empty else []
    return EvidencePack(
        core_node=int(to_global[state.node]),
        round_index=round_index,
        hop_neighbors=hop_neighbors,
        chunks=chunks,
        flags=flags,
    )


class Summarizer(Protocol):
    def summarize(self, chunks: list[tuple[str, int, int, float]]) -> str:
        """chunks: (text, global node id, chunk idx, weight), weight-descending."""
        ...


class ExtractiveSummarizer:
    """Concatenates chunk texts in weight order with [node#chunk] citations."""

    def summarize(self, chunks: list[tuple[str, int, int, float]]) -> str:
        return " ".join(f"{text} [{node}#{idx}]" for text, node, idx, _ in chunks)


def summarize_pack(
    pack: EvidencePack,
    summarizer: Summarizer,
    global_texts: list[str],
    cache: dict[tuple[int, str], str] | None = None,
) -> str | None:
    """Summarize a pack's chunks; cached by (core node, chunk-set hash)."""
    key = (pack.core_node, pack.chunk_set_hash())
    if cache is not None and key in cache:
        return cache[key]
    chunk_args = [
        (global_texts[c.node][c.char_start : c.char_end], c.node, c.chunk, c.weight)
        for c in pack.chunks
    ]
    try:
        summary = summarizer.summarize(chunk_args)
    except Exception as exc:  # summarizer is pluggable, failures must not kill the round
        log.warning("summarizer failed for node %d: %s", pack.core_node, exc)
        pack.flags.append("summary_failed")
        return None
    if cache is not None:
        cache[key] = summary
    return summary


def _byte_offset(text: str, char_offset: int) -> int:
    return len(text[:char_offset].encode("utf-8"))


def pack_to_json_obj(pack: EvidencePack, global_texts: list[str]) -> dict:
    """JSON form of a pack; spans become byte offsets into the node text."""
    chunks = []
    for c in pack.chunks:
        text = global_texts[c.node]
        chunks.append(
            {
                "node": c.node,
                "chunk": c.chunk,
                "byte_start": _byte_offset(text, c.char_start),
                "byte_end": _byte_offset(text, c.char_end),
                "weight": c.weight,
                "tokens": c.token_count,
            }
        )
    return {
        "core_node": pack.core_node,
        "round": pack.round_index,
        "hops": [
            {"hop": hop, "neighbors": [{"node": n, "weight": w} for n, w in entries]}
            for hop, entries in sorted(pack.hop_neighbors.items())
        ],
        "chunks": chunks,
        "summary": pack.summary,
        "flags": pack.flags,
    }


def write_pack_store(
    packs: list[EvidencePack], path: str | Path, global_texts: list[str]
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = [pack_to_json_obj(p, global_texts) for p in packs]
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return path
