"""Round-wise client/server simulation: broadcast, refresh, train, aggregate.

Only model parameters ever cross the simulated wire; the communication
ledger enforces that, and every other artifact (texts, packs, summaries,
condensed graphs) stays in client-local state.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .condense import CondensedCore, condense_nodes, random_core
from .config import RunSettings
from .errors import InvariantViolation, LedgerViolation
from .evidence import (
    Budgets,
    project_for_selection,
    EvidencePack,
    EvidenceState,
    ExtractiveSummarizer,
    SelectionParams,
    build_pack,
    select_evidence,
    summarize_pack,
    top_b_index_set,
    write_pack_store,
)
from .gnn import GcnParams, entropy_rows, gcn_forward, gcn_train_step, predict_full, softmax_rows
from .graph import (
    ClientPartition,
    TextAttributedGraph,
    k_hop_neighbors,
    normalize_adjacency,
    partition_clients,
)
from .rng import derive_seed, stream_rng
from .textbank import BankCache, ChunkEmbeddingBank, Encoder, EncoderConfig, build_bank, slice_bank
from .topology import (
    FusionParams,
    apply_fusion_update,
    candidate_sets,
    evidence_prior,
    fuse,
    fusion_loss,
    self_expression,
    synthesize_adjacency,
)

log = logging.getLogger(__name__)

ALLOWED_PAYLOADS = ("model_broadcast", "model_delta")


@dataclass
class GlobalModel:
    """All shared parameters; serializes to named float arrays for the wire."""

    gcn: GcnParams
    selection: SelectionParams
    fusion: FusionParams
    round: int = 0

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [
            ("gcn.w1", self.gcn.w1),
            ("gcn.w2", self.gcn.w2),
            ("selection.w_q", self.selection.w_q),
            ("selection.w_k", self.selection.w_k),
            ("selection.w_s", self.selection.w_s),
            ("selection.gamma", self.selection.gamma),
            ("fusion.w_g", self.fusion.w_g),
            ("fusion.w_t", self.fusion.w_t),
            ("fusion.w", self.fusion.w),
            ("fusion.dec", self.fusion.dec),
            ("fusion.dec_g", self.fusion.dec_g),
            ("fusion.dec_t", self.fusion.dec_t),
        ]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([arr.ravel() for _, arr in self.named_arrays()])

    def wire_bytes(self) -> int:
        return int(self.to_vector().size) * 4  # float32 little-endian on the wire

    def clone(self) -> "GlobalModel":
        return GlobalModel(
            gcn=self.gcn.copy(),
            selection=SelectionParams(
                w_q=self.selection.w_q.copy(),
                w_k=self.selection.w_k.copy(),
                w_s=self.selection.w_s.copy(),
                gamma=self.selection.gamma.copy(),
            ),
            fusion=FusionParams(
                w_g=self.fusion.w_g.copy(),
                w_t=self.fusion.w_t.copy(),
                w=self.fusion.w.copy(),
                dec=self.fusion.dec.copy(),
                dec_g=self.fusion.dec_g.copy(),
                dec_t=self.fusion.dec_t.copy(),
            ),
            round=self.round,
        )

    def delta(self, base: "GlobalModel") -> dict[str, np.ndarray]:
        mine = dict(self.named_arrays())
        return {name: mine[name] - arr for name, arr in base.named_arrays()}

    def zero_delta(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.named_arrays()}

    def apply_delta(self, delta: dict[str, np.ndarray]) -> None:
        for name, arr in self.named_arrays():
            arr += delta[name]
        self.selection.project_gamma()

    @classmethod
    def init(cls, dim: int, hidden: int, num_classes: int, seed: int, dropout: float) -> "GlobalModel":
        return cls(
            gcn=GcnParams.init(dim, hidden, num_classes, seed, dropout),
            selection=SelectionParams.init(dim),
            fusion=FusionParams.init(dim, num_classes, seed),
            round=0,
        )


def aggregate(deltas: list[dict[str, np.ndarray]], weights: list[float]) -> dict[str, np.ndarray]:
    """Sample-weighted average of client parameter deltas."""
    if not deltas:
        raise ValueError("no deltas to aggregate")
    if any(w < 0 for w in weights):
        raise ValueError("aggregation weights must be nonnegative")
    total = float(sum(weights))
    if total <= 0:
        raise ValueError("aggregation weights must not all be zero")
    names = list(deltas[0].keys())
    out: dict[str, np.ndarray] = {}
    for name in names:
        ref_shape = deltas[0][name].shape
        acc = np.zeros(ref_shape)
        for delta, w in zip(deltas, weights):
            if name not in delta or delta[name].shape != ref_shape:
                raise ValueError(f"shape mismatch in parameter group '{name}'")
            acc += (w / total) * delta[name]
        out[name] = acc
    return out


def apply_privacy_noise(x: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Per-coordinate Laplace(0, 1/epsilon) noise, then row L2 normalization."""
    if epsilon <= 0:
        raise ValueError("privacy epsilon must be positive")
    noised = x + rng.laplace(0.0, 1.0 / epsilon, size=x.shape)
    norms = np.linalg.norm(noised, axis=1, keepdims=True)
    norms = np.where(norms == 0.0, 1.0, norms)
    return noised / norms


@dataclass
class LedgerEntry:
    round: int
    kind: str
    byte_count: int
    client: int


class CommunicationLedger:
    """Append-only record of wire payloads; non-model payloads abort the run."""

    def __init__(self) -> None:
        self.entries: list[LedgerEntry] = []

    def record(self, round_index: int, kind: str, byte_count: int, client: int) -> None:
        if kind not in ALLOWED_PAYLOADS:
            raise LedgerViolation(
                f"payload kind {kind!r} is not allowed on the wire "
                f"(only {ALLOWED_PAYLOADS}); refusing to transmit"
            )
        self.entries.append(LedgerEntry(round_index, kind, byte_count, client))

    def kinds(self) -> set[str]:
        return {e.kind for e in self.entries}

    def total_bytes(self) -> int:
        return sum(e.byte_count for e in self.entries)

    def round_bytes(self, round_index: int) -> int:
        return sum(e.byte_count for e in self.entries if e.round == round_index)


@dataclass
class ScoreTrack:
    """Previous-round selection scores for one core node (stability audit)."""

    signature: tuple
    vectors: dict[str, tuple[tuple, np.ndarray, int]]  # label -> (candidates, scores, budget)


class ClientRuntime:
    """Mutable per-client state across rounds (never serialized to the wire)."""

    def __init__(
        self,
        index: int,
        tag: TextAttributedGraph,
        global_ids: np.ndarray,
        bank: ChunkEmbeddingBank,
    ) -> None:
        self.index = index
        self.tag = tag
        self.global_ids = global_ids
        self.bank = bank
        self.a_hat = normalize_adjacency(tag.adjacency)
        self.train_labels = np.where(tag.train_mask, tag.labels, -1)
        self.core: CondensedCore | None = None
        self.states: list[EvidenceState] | None = None
        self.packs: list[EvidencePack] | None = None
        self.tracks: dict[int, ScoreTrack] = {}
        self.core_refreshes = 0
        self.evidence_refreshes = 0
        self.summary_cache: dict[tuple[int, str], str] = {}
        self._unbudgeted_tokens: dict[int, int] = {}

    def unbudgeted_tokens(self, v: int) -> int:
        """Token count of every chunk in the full 0/1/2-hop neighborhood."""
        if v not in self._unbudgeted_tokens:
            nodes = set()
            for ell in (0, 1, 2):
                nodes.update(int(u) for u in k_hop_neighbors(self.tag, v, ell))
            total = 0
            for u in nodes:
                total += sum(c.token_count for c in self.bank.chunked[u].chunks)
            self._unbudgeted_tokens[v] = total
        return self._unbudgeted_tokens[v]

    def condensation_digest(self) -> str:
        h = hashlib.sha256()
        if self.core is not None:
            h.update(self.core.node_ids.tobytes())
        for pack in self.packs or []:
            h.update(pack.content_hash().encode())
        return h.hexdigest()[:16]


@dataclass
class RoundReport:
    round: int
    acc: float | None
    macro_f1: float | None
    loss: float
    refresh_changes: int
    tokens_per_core_node: float
    tokens_unbudgeted_per_core_node: float
    comm_bytes: int
    drift: float
    condensation_digest: str
    margin_checks: int
    margin_violations: int
    min_margin: float | None = None
    max_score_drift: float | None = None
    lipschitz_estimate: float | None = None

    def to_json_obj(self) -> dict:
        return {
            "round": self.round,
            "acc": self.acc,
            "macro_f1": self.macro_f1,
            "loss": self.loss,
            "refresh_changes": self.refresh_changes,
            "tokens_per_core_node": self.tokens_per_core_node,
            "tokens_unbudgeted_per_core_node": self.tokens_unbudgeted_per_core_node,
            "comm_bytes": self.comm_bytes,
            "drift": self.drift,
            "condensation_digest": self.condensation_digest,
            "margin_checks": self.margin_checks,
            "margin_violations": self.margin_violations,
            "min_margin": self.min_margin,
            "max_score_drift": self.max_score_drift,
            "lipschitz_estimate": self.lipschitz_estimate,
        }


def macro_f1_score(y_true: np.ndarray, y_pred: np.ndarray, num_classes: int) -> float:
    scores = []
    for c in range(num_classes):
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return float(np.mean(scores))


class Simulation:
    """One federated run over a fixed partition, driven round by round."""

    def __init__(
        self,
        tag: TextAttributedGraph,
        settings: RunSettings,
        seed: int,
        pack_dir: str | None = None,
    ) -> None:
        settings.validate()
        if tag.num_classes < 2:
            raise InvariantViolation("need a labeled graph with at least 2 classes")
        self.settings = settings
        self.seed = seed
        self.pack_dir = pack_dir
        self.global_tag = tag
        self.partition = partition_clients(
            tag, settings.clients, settings.partition_method, seed
        )
        encoder = Encoder(
            EncoderConfig(
                kind=settings.encoder,
                dim=settings.dim,
                embeddings_path=settings.embeddings_file,
            )
        )
        self.bank_cache = BankCache()
        global_bank = build_bank(tag, settings.window, encoder, cache=self.bank_cache)
        self.clients = [
            ClientRuntime(m, sub, gids, slice_bank(global_bank, gids))
            for m, (sub, gids) in enumerate(zip(self.partition.subgraphs, self.partition.global_ids))
        ]
        self.budgets = Budgets(
            b1=settings.b1,
            b2=settings.b2,
            b_tok=settings.b_tok,
            two_hop_prefilter=settings.two_hop_cap,
        )
        self.model = GlobalModel.init(
            settings.dim, settings.hidden, tag.num_classes, seed, settings.dropout
        )
        self.ledger = CommunicationLedger()
        self.summarizer = ExtractiveSummarizer()
        self.reports: list[RoundReport] = []
        self._prev_vector = self.model.to_vector()

    # ---- refresh schedule ----------------------------------------------

    def _core_due(self, t: int) -> bool:
        policy = self.settings.refresh_policy
        if policy in ("static", "text_only", "random_core"):
            # random_core is the one-shot baseline: its core is drawn once and
            # never re-conditioned on the model
            return t == 1
        period = self.settings.period
        return t == 1 or period == 1 or (t % period == 1)

    def _evidence_due(self, t: int) -> bool:
        policy = self.settings.refresh_policy
        if policy in ("static", "core_only"):
            return t == 1
        return True

    # ---- stability accounting -------------------------------------------

    @staticmethod
    def _score_vectors(state: EvidenceState, budgets: Budgets) -> dict[str, tuple[tuple, np.ndarray, int]]:
        vectors: dict[str, tuple[tuple, np.ndarray, int]] = {}
        for gate in state.gates:
            if gate.candidates.size:
                vectors[f"hop{gate.hop}"] = (
                    tuple(gate.candidates.tolist()),
                    gate.scores.copy(),
                    budgets.hop_budget(gate.hop),
                )
        if state.chunks.pairs:
            vectors["chunks"] = (
                tuple(state.chunks.pairs),
                state.chunks.scores.copy(),
                budgets.b_tok,
            )
        return vectors

    def _stability_update(
        self, client: ClientRuntime, states: list[EvidenceState]
    ) -> dict:
        """Compare new selections to the previous round's, enforce the margin law.

        A top-B set change with score drift below half the previous margin
        would contradict the selection-stability guarantee, so it aborts the
        run. Also gathers the observability stats (min margin at the budget
        boundary, max sup-norm score drift).
        """
        stats = {
            "changes": 0,
            "checked": 0,
            "violations": 0,
            "min_margin": None,
            "max_drift": None,
        }
        new_tracks: dict[int, ScoreTrack] = {}
        for state in states:
            sig = state.selection_signature()
            vectors = self._score_vectors(state, self.budgets)
            prev = client.tracks.get(state.node)
            if prev is not None:
                if prev.signature != sig:
                    stats["changes"] += 1
                for label, (cands, scores, budget) in vectors.items():
                    if label not in prev.vectors:
                        continue
                    p_cands, p_scores, p_budget = prev.vectors[label]
                    if p_cands != cands or p_budget != budget or len(cands) <= budget:
                        continue
                    sorted_prev = np.sort(p_scores)[::-1]
                    margin = float(sorted_prev[budget - 1] - sorted_prev[budget])
                    drift = float(np.max(np.abs(scores - p_scores)))
                    set_prev = top_b_index_set(p_scores, budget)
                    set_new = top_b_index_set(scores, budget)
                    stats["checked"] += 1
                    if stats["min_margin"] is None or margin < stats["min_margin"]:
                        stats["min_margin"] = margin
                    if stats["max_drift"] is None or drift > stats["max_drift"]:
                        stats["max_drift"] = drift
                    if set_prev != set_new and margin > 0:
                        if drift < margin / 2.0 - 1e-12:
                            stats["violations"] += 1
                            raise InvariantViolation(
                                f"top-B set changed under drift {drift:.3g} < margin/2 "
                                f"{margin / 2.0:.3g} (client {client.index}, node {state.node})"
                            )
            new_tracks[state.node] = ScoreTrack(signature=sig, vectors=vectors)
        client.tracks = new_tracks
        return stats

    def _estimate_lipschitz(
        self, client: ClientRuntime, t: int, probes: int = 2, scale: float = 1e-3
    ) -> float | None:
        """Empirical Lipschitz constant of selection scores along parameter space.

        Samples small whole-model perturbations and measures the worst
        score movement per unit parameter movement on a few core nodes'
        hop-1 scores. Purely diagnostic (reported per round).
        """
        if client.core is None or client.core.node_ids.size == 0:
            return None
        nodes = client.core.node_ids[:4]

        def hop1_scores(model: GlobalModel) -> np.ndarray:
            fwd = gcn_forward(client.a_hat, client.bank.node_vecs, model.gcn, train_mode=False)
            out = []
            d = client.bank.dim
            for v in nodes:
                cands = k_hop_neighbors(client.tag, int(v), 1)
                if cands.size == 0:
                    continue
                query = model.selection.w_q @ fwd.hidden[v]
                keys = client.bank.node_vecs[cands] @ model.selection.w_k.T
                out.append(keys @ query / np.sqrt(d))
            return np.concatenate(out) if out else np.empty(0)

        base = hop1_scores(self.model)
        if base.size == 0:
            return None
        rng = stream_rng(self.seed, f"round{t}.lipschitz")
        worst = 0.0
        for _ in range(probes):
            probe = self.model.clone()
            arrays = [arr for _, arr in probe.named_arrays()]
            deltas = [rng.normal(size=arr.shape) for arr in arrays]
            norm = np.sqrt(sum(float(np.sum(d * d)) for d in deltas))
            for arr, delta in zip(arrays, deltas):
                arr += (scale / norm) * delta
            moved = hop1_scores(probe)
            worst = max(worst, float(np.max(np.abs(moved - base))) / scale)
        return worst

    # ---- evidence/pack refresh -------------------------------------------

    def _refresh_evidence(
        self,
        client: ClientRuntime,
        core: CondensedCore,
        g: np.ndarray,
        difficulty: np.ndarray,
        selection: SelectionParams,
        t: int,
    ) -> dict:
        s = self.settings
        proj = project_for_selection(g, client.bank, selection)
        states = [
            select_evidence(
                int(v), client.tag, g, client.bank, selection, self.budgets,
                difficulty, s.mix, s.entmax_alpha, proj=proj,
            )
            for v in core.node_ids
        ]
        stats = self._stability_update(client, states)
        client.states = states
        client.evidence_refreshes += 1
        client.packs = self._build_packs(client, states, t)
        return stats

    def _repair_evidence(
        self,
        client: ClientRuntime,
        core: CondensedCore,
        g: np.ndarray,
        difficulty: np.ndarray,
        selection: SelectionParams,
        t: int,
    ) -> None:
        """Evidence frozen by policy: keep cached states, fill new core nodes."""
        s = self.settings
        cached_states = {st.node: st for st in client.states or []}
        cached_packs = {p.core_node: p for p in client.packs or []}
        states, packs = [], []
        for v in core.node_ids:
            v = int(v)
            if v in cached_states:
                states.append(cached_states[v])
                packs.append(cached_packs[int(client.global_ids[v])])
            else:
                st = select_evidence(
                    v, client.tag, g, client.bank, selection, self.budgets,
                    difficulty, s.mix, s.entmax_alpha,
                )
                states.append(st)
                packs.extend(self._build_packs(client, [st], t))
        client.states = states
        client.packs = packs

    def _build_packs(
        self, client: ClientRuntime, states: list[EvidenceState], t: int
    ) -> list[EvidencePack]:
        packs = []
        for state in states:
            pack = build_pack(state, client.bank, t, client.global_ids)
            pack.summary = summarize_pack(
                pack, self.summarizer, self.global_tag.texts, cache=client.summary_cache
            )
            packs.append(pack)
        return packs

    def _assert_budgets(self, client: ClientRuntime) -> None:
        total_nnz = 0
        for state in client.states or []:
            for gate in state.gates:
                if gate.support.size > self.budgets.hop_budget(gate.hop):
                    raise InvariantViolation(
                        f"hop-{gate.hop} budget exceeded on client {client.index}"
                    )
            nnz = int(state.chunks.support.size)
            if nnz > self.budgets.b_tok:
                raise InvariantViolation(f"token budget exceeded on client {client.index}")
            total_nnz += nnz
        core_size = len(client.states or [])
        if total_nnz > core_size * self.budgets.b_tok:
            raise InvariantViolation("aggregate chunk budget exceeded")

    # ---- the round -------------------------------------------------------

    def run_round(self) -> RoundReport:
        s = self.settings
        t = self.model.round + 1
        m_total = s.clients
        if s.participation >= 1.0:
            participants = list(range(m_total))
        else:
            count = max(1, int(round(s.participation * m_total)))
            rng = stream_rng(self.seed, f"round{t}.participation")
            participants = sorted(rng.choice(m_total, size=count, replace=False).tolist())

        payload = self.model.wire_bytes()
        for m in participants:
            self.ledger.record(t, "model_broadcast", payload, m)

        deltas: list[dict[str, np.ndarray]] = []
        weights: list[float] = []
        losses: list[float] = []
        refresh_changes = 0
        margin_checks = 0
        margin_violations = 0
        min_margin: float | None = None
        max_score_drift: float | None = None

        for m in participants:
            client = self.clients[m]
            if client.bank.compute_digest() != client.bank.content_digest:
                raise InvariantViolation(f"text bank mutated on client {m}")

            local = self.model.clone()
            fwd = gcn_forward(client.a_hat, client.bank.node_vecs, local.gcn, train_mode=False)
            probs = softmax_rows(fwd.logits)
            difficulty = entropy_rows(probs)
            g = fwd.hidden

            if self._core_due(t) or client.core is None:
                if s.refresh_policy == "random_core":
                    core = random_core(
                        client.tag.node_count, s.ratio,
                        seed=derive_seed(self.seed, f"round{t}.client{m}.condense"),
                    )
                else:
                    try:
                        core, _table = condense_nodes(
                            embeddings=g,
                            probs=probs,
                            labels=client.train_labels,
                            tau=s.tau,
                            prototype_cap=s.prototypes,
                            ratio=s.ratio,
                            seed=derive_seed(self.seed, f"round{t}.client{m}.condense"),
                            num_classes=client.tag.num_classes,
                        )
                    except ValueError:
                        log.warning("client %d has no confident nodes; participating unchanged", m)
                        self.ledger.record(t, "model_delta", payload, m)
                        deltas.append(self.model.zero_delta())
                        weights.append(0.0)
                        continue
                client.core = core
                client.core_refreshes += 1
            core = client.core

            if self._evidence_due(t) or client.states is None:
                stats = self._refresh_evidence(client, core, g, difficulty, local.selection, t)
                refresh_changes += stats["changes"]
                margin_checks += stats["checked"]
                margin_violations += stats["violations"]
                if stats["min_margin"] is not None:
                    min_margin = stats["min_margin"] if min_margin is None else min(min_margin, stats["min_margin"])
                if stats["max_drift"] is not None:
                    max_score_drift = stats["max_drift"] if max_score_drift is None else max(max_score_drift, stats["max_drift"])
                if self.pack_dir is not None:
                    write_pack_store(
                        client.packs,
                        f"{self.pack_dir}/round_{t:04d}_client_{m}.json",
                        self.global_tag.texts,
                    )
            else:
                self._repair_evidence(client, core, g, difficulty, local.selection, t)
            states = client.states
            self._assert_budgets(client)

            g_core = g[core.node_ids]
            labels_core = client.train_labels[core.node_ids]

            fusion_loss_val = 0.0
            for _ in range(s.local_epochs):
                res = fusion_loss(
                    labels_core, g_core, states, local.fusion, local.selection,
                    s.lambda_align, s.mix, client.bank,
                )
                apply_fusion_update(local.fusion, local.selection, res.grads, s.lr)
                fusion_loss_val = res.loss

            fused = np.stack(
                [fuse(g_core[i], states[i].chunks.t_tilde, local.fusion)[0] for i in range(len(states))]
            )
            if s.privacy_epsilon is not None:
                fused = apply_privacy_noise(
                    fused,
                    s.privacy_epsilon,
                    stream_rng(self.seed, f"round{t}.client{m}.privacy"),
                )

            k_core = fused.shape[0]
            if k_core >= 2:
                t_mat = np.stack([st.chunks.t_tilde for st in states])
                prior = evidence_prior(t_mat)
                cands = candidate_sets(fused, prior, s.cand_q)
                coeffs = self_expression(
                    fused, prior, cands, s.topo_alpha, s.lambda1, s.lambda3,
                    iters=s.ista_iters,
                )
                a_cond = synthesize_adjacency(coeffs.values, s.row_k)
            else:
                a_cond = sp.csr_matrix((k_core, k_core))
            a_hat_cond = normalize_adjacency(a_cond)

            gcn_loss_val = 0.0
            if (labels_core >= 0).any():
                for e in range(s.local_epochs):
                    rng_drop = stream_rng(self.seed, f"round{t}.client{m}.epoch{e}.dropout")
                    local.gcn, gcn_loss_val = gcn_train_step(
                        a_hat_cond, fused, labels_core, local.gcn,
                        s.lr, s.weight_decay, rng=rng_drop,
                    )
            else:
                log.warning("client %d core has no labeled nodes; backbone step skipped", m)

            self.ledger.record(t, "model_delta", payload, m)
            deltas.append(local.delta(self.model))
            weights.append(float((labels_core >= 0).sum()))
            losses.append(fusion_loss_val + gcn_loss_val)

        if deltas and sum(weights) > 0:
            self.model.apply_delta(aggregate(deltas, weights))
        elif deltas:
            log.warning("round %d: all aggregation weights are zero; model unchanged", t)
        self.model.round = t

        new_vector = self.model.to_vector()
        drift = float(np.linalg.norm(new_vector - self._prev_vector))
        self._prev_vector = new_vector

        lipschitz = (
            self._estimate_lipschitz(self.clients[participants[0]], t) if participants else None
        )
        metrics = self.evaluate()
        digest = hashlib.sha256(
            "".join(c.condensation_digest() for c in self.clients).encode()
        ).hexdigest()[:16]
        report = RoundReport(
            round=t,
            acc=metrics["accuracy"],
            macro_f1=metrics["macro_f1"],
            loss=float(np.mean(losses)) if losses else float("nan"),
            refresh_changes=refresh_changes,
            tokens_per_core_node=metrics["tokens_per_core_node"],
            tokens_unbudgeted_per_core_node=metrics["tokens_unbudgeted_per_core_node"],
            comm_bytes=self.ledger.total_bytes(),
            drift=drift,
            condensation_digest=digest,
            margin_checks=margin_checks,
            margin_violations=margin_violations,
            min_margin=min_margin,
            max_score_drift=max_score_drift,
            lipschitz_estimate=lipschitz,
        )
        self.reports.append(report)
        return report

    def run(self, rounds: int | None = None) -> list[RoundReport]:
        for _ in range(rounds if rounds is not None else self.settings.rounds):
            self.run_round()
        return self.reports

    # ---- evaluation -------------------------------------------------------

    def evaluate(self) -> dict:
        s = self.settings
        y_true: list[np.ndarray] = []
        y_pred: list[np.ndarray] = []
        for client in self.clients:
            mask = client.tag.test_mask & (client.tag.labels >= 0)
            if not mask.any():
                continue
            probs, _ = predict_full(
                client.tag, client.bank, self.model.gcn, self.model.selection,
                self.model.fusion, self.budgets, s.mix, s.entmax_alpha,
            )
            y_true.append(client.tag.labels[mask])
            y_pred.append(probs[mask].argmax(axis=1))

        if y_true:
            truth = np.concatenate(y_true)
            pred = np.concatenate(y_pred)
            acc = float((truth == pred).mean())
            f1 = macro_f1_score(truth, pred, self.global_tag.num_classes)
        else:
            log.warning("no labeled test nodes; accuracy omitted")
            acc = None
            f1 = None

        tokens_sel: list[int] = []
        tokens_unb: list[int] = []
        for client in self.clients:
            for pack in client.packs or []:
                tokens_sel.append(pack.tokens_selected())
            for state in client.states or []:
                tokens_unb.append(client.unbudgeted_tokens(state.node))
        return {
            "accuracy": acc,
            "macro_f1": f1,
            "tokens_per_core_node": float(np.mean(tokens_sel)) if tokens_sel else 0.0,
            "tokens_unbudgeted_per_core_node": float(np.mean(tokens_unb)) if tokens_unb else 0.0,
            "comm_bytes": self.ledger.total_bytes(),
        }
