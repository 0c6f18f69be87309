"""Label-aware node condensation: pseudo-labels, prototypes, quotas, core."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import stream_rng

log = logging.getLogger(__name__)

KMEANS_ITERS = 50
KMEANS_MAX_BATCH = 256


@dataclass
class PseudoLabelTable:
    """Per-node pseudo-label state; -1 marks an unassigned node.

    Labeled nodes always carry their ground-truth class and count as fully
    confident for quota purposes, whatever the model said.
    """

    pseudo_label: np.ndarray
    confidence: np.ndarray
    difficulty: np.ndarray
    is_labeled: np.ndarray

    @property
    def confident_mask(self) -> np.ndarray:
        return self.pseudo_label >= 0

    def confident_counts(self, num_classes: int) -> np.ndarray:
        assigned = self.pseudo_label[self.confident_mask]
        return np.bincount(assigned, minlength=num_classes)


def assign_pseudo_labels(
    probs: np.ndarray, labels: np.ndarray, tau: float
) -> PseudoLabelTable:
    """Keep ground truth on labeled nodes, argmax above tau elsewhere.

    probs rows must sum to 1; confidence is the max class probability and
    difficulty its entropy (natural log).
    """
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValueError("each probability row must sum to 1")
    confidence = probs.max(axis=1)
    predicted = probs.argmax(axis=1).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(probs > 0, probs * np.log(probs), 0.0)
    difficulty = -plogp.sum(axis=1)

    is_labeled = labels >= 0
    pseudo = np.where(is_labeled, labels, np.where(confidence >= tau, predicted, -1))
    return PseudoLabelTable(
        pseudo_label=pseudo.astype(np.int64),
        confidence=confidence,
        difficulty=difficulty,
        is_labeled=is_labeled,
    )


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centers[0] = points[first]
    closest = np.sum((points - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with a center; pick deterministically
            centers[j] = points[int(rng.integers(n))]
            continue
        probs = closest / total
        pick = int(rng.choice(n, p=probs))
        centers[j] = points[pick]
        closest = np.minimum(closest, np.sum((points - centers[j]) ** 2, axis=1))
    return centers


def class_prototypes(embeddings: np.ndarray, cap: int, seed: int) -> np.ndarray:
    """Mini-batch k-means centroids for one class (Sculley-style updates).

    k = min(cap, class size); k-means++ seeding, 50 fixed iterations, batch
    min(256, class size), per-center count-weighted steps. Deterministic
    given seed.
    """
    n = embeddings.shape[0]
    if n == 0:
        raise ValueError("class_prototypes needs a nonempty class")
    k = min(cap, n)
    rng = stream_rng(seed, "kmeans")
    centers = _kmeans_pp_init(embeddings, k, rng)
    counts = np.zeros(k)
    batch_size = min(KMEANS_MAX_BATCH, n)
    for _ in range(KMEANS_ITERS):
        batch = rng.choice(n, size=batch_size, replace=False)
        pts = embeddings[batch]
        d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        for row, c in enumerate(assign):
            counts[c] += 1.0
            lr = 1.0 / counts[c]
            centers[c] = (1.0 - lr) * centers[c] + lr * pts[row]
    return centers


def prototype_score(z: np.ndarray, prototypes: np.ndarray) -> float:
    """Best cosine similarity between a node embedding and its class centroids."""
    zn = np.linalg.norm(z)
    if zn == 0.0:
        return -1.0
    pn = np.linalg.norm(prototypes, axis=1)
    sims = prototypes @ z / (np.maximum(pn, 1e-12) * zn)
    sims = np.where(pn == 0.0, -1.0, sims)
    return float(sims.max())


def allocate_quotas(confident_counts: np.ndarray, budget: int) -> tuple[np.ndarray, int]:
    """Largest-remainder split of the node budget across classes.

    Exact integer arithmetic; remainder ties go to the lower class id. Any
    quota above its class count is capped with the surplus re-apportioned
    among uncapped classes. Returns (quotas, shortfall); shortfall > 0 only
    when the budget exceeds the total confident count.
    """
    counts = list(confident_counts.tolist() if hasattr(confident_counts, "tolist") else confident_counts)
    n_classes = len(counts)
    total = sum(counts)
    if total < 1 or budget < 1:
        raise ValueError("need at least one confident node and budget >= 1")
    if budget >= total:
        if budget > total:
            log.warning("budget %d exceeds confident nodes %d; core will be smaller", budget, total)
        return np.array(counts, dtype=np.int64), budget - total

    # exact integer arithmetic so remainder ties are unambiguous
    quotas = [0] * n_classes
    rems = []
    allotted = 0
    for i, c in enumerate(counts):
        if c:
            num = budget * c
            floor = num // total
            quotas[i] = floor
            allotted += floor
            # sort key: ascending (total - remainder) = descending remainder, ties by id
            rems.append((total - num % total, i))
    if allotted < budget:
        rems.sort()
        for _, i in rems[: budget - allotted]:
            quotas[i] += 1
    if any(q > c for q, c in zip(quotas, counts)):
        quotas = _reapportion_capped(counts, budget)
    return np.array(quotas, dtype=np.int64), 0


def _reapportion_capped(counts: list[int], budget: int) -> list[int]:
    """Cap overflowing quotas and re-run the split among uncapped classes.

    Unreachable while budget < total (floors + one remainder seat never
    exceed a class count then), but keeps the contract safe under any
    future budget regime.
    """
    n_classes = len(counts)
    quotas = [0] * n_classes
    pinned: set[int] = set()
    while True:
        rem_budget = budget - sum(counts[i] for i in pinned)
        active = [i for i in range(n_classes) if i not in pinned and counts[i] > 0]
        if rem_budget <= 0 or not active:
            break
        pool = sum(counts[i] for i in active)
        share = [0] * n_classes
        rems = []
        allotted = 0
        for i in active:
            num = rem_budget * counts[i]
            floor = num // pool
            share[i] = floor
            allotted += floor
            rems.append((pool - num % pool, i))
        if allotted < rem_budget:
            rems.sort()
            for _, i in rems[: rem_budget - allotted]:
                share[i] += 1
        over = [i for i in active if share[i] > counts[i]]
        if over:
            pinned.update(over)
            continue
        for i in active:
            quotas[i] = share[i]
        break
    for i in pinned:
        quotas[i] = counts[i]
    return quotas


@dataclass
class CondensedCore:
    """Selected node ids with their per-class quotas and prototype state."""

    node_ids: np.ndarray
    quotas: dict[int, int]
    prototype_sets: dict[int, np.ndarray] = field(repr=False, default_factory=dict)
    scores: dict[int, float] = field(repr=False, default_factory=dict)
    target_size: int = 0
    shortfall: int = 0

    @property
    def size(self) -> int:
        return self.node_ids.shape[0]


def select_core(
    table: PseudoLabelTable,
    scores: np.ndarray,
    quotas: np.ndarray,
    prototype_sets: dict[int, np.ndarray] | None = None,
    target_size: int | None = None,
    shortfall: int = 0,
) -> CondensedCore:
    """Top-scoring confident nodes per class, quota-bounded, ties by node id."""
    selected: list[int] = []
    quota_map: dict[int, int] = {}
    for c, quota in enumerate(np.asarray(quotas, dtype=np.int64)):
        quota = int(quota)
        quota_map[c] = quota
        if quota == 0:
            continue
        members = np.where(table.confident_mask & (table.pseudo_label == c))[0]
        order = np.lexsort((members, -scores[members]))
        selected.extend(members[order][:quota].tolist())
    node_ids = np.sort(np.array(selected, dtype=np.int64))
    return CondensedCore(
        node_ids=node_ids,
        quotas=quota_map,
        prototype_sets=prototype_sets or {},
        scores={int(v): float(scores[v]) for v in node_ids},
        target_size=int(quotas.sum()) if target_size is None else target_size,
        shortfall=shortfall,
    )


def node_budget(node_count: int, ratio: float) -> int:
    """Budget K = ceil(ratio * node_count)."""
    return int(math.ceil(ratio * node_count))


def random_core(node_count: int, ratio: float, seed: int) -> CondensedCore:
    """Ablation baseline: K uniformly random nodes, no label-aware machinery."""
    budget = min(node_budget(node_count, ratio), node_count)
    rng = stream_rng(seed, "core.uniform-random")
    node_ids = np.sort(rng.choice(node_count, size=budget, replace=False))
    return CondensedCore(node_ids=node_ids.astype(np.int64), quotas={}, target_size=budget)


def condense_nodes(
    embeddings: np.ndarray,
    probs: np.ndarray,
    labels: np.ndarray,
    tau: float,
    prototype_cap: int,
    ratio: float,
    seed: int,
    num_classes: int,
    random_selection: bool = False,
) -> tuple[CondensedCore, PseudoLabelTable]:
    """Full condensation pass: pseudo-labels, prototypes, quotas, selection.

    random_selection swaps the top-score rule for a seeded uniform draw
    within each class quota (the random-core ablation baseline).
    """
    table = assign_pseudo_labels(probs, labels, tau)
    counts = table.confident_counts(num_classes)
    budget = node_budget(embeddings.shape[0], ratio)
    quotas, shortfall = allocate_quotas(counts, budget)

    prototype_sets: dict[int, np.ndarray] = {}
    scores = np.full(embeddings.shape[0], -1.0)
    for c in range(num_classes):
        members = np.where(table.confident_mask & (table.pseudo_label == c))[0]
        if members.size == 0:
            continue
        protos = class_prototypes(embeddings[members], prototype_cap, seed=seed + 7919 * c)
        prototype_sets[c] = protos
        for v in members:
            scores[v] = prototype_score(embeddings[v], protos)

    if random_selection:
        rng = stream_rng(seed, "core.random-selection")
        scores = np.full(embeddings.shape[0], -1.0)
        scores[table.confident_mask] = rng.random(int(table.confident_mask.sum()))

    core = select_core(
        table,
        scores,
        quotas,
        prototype_sets=prototype_sets,
        target_size=budget,
        shortfall=shortfall,
    )
    return core, table
