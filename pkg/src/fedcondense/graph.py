"""Text-attributed graph data model, ingestion, synthesis, and partitioning."""

from __future__ import annotations

import gzip
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

import networkx as nx
import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, ParseError, ValidationError
from .rng import stream_rng

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass
class TextAttributedGraph:
    """A graph whose nodes carry raw text, labels, and split masks.

    labels use -1 for unlabeled nodes. The adjacency is a binary (or, for
    condensed graphs, weighted) symmetric sparse matrix with a zero diagonal.
    """

    adjacency: sp.csr_matrix
    texts: list[str]
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int
    node_ids: np.ndarray | None = None  # original file ids, if they were not 0..n-1

    def __post_init__(self) -> None:
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise ValidationError("adjacency must be square")
        if len(self.texts) != n or self.labels.shape != (n,):
            raise ValidationError("texts/labels length must match node count")
        diff = self.adjacency - self.adjacency.T
        if diff.nnz and np.max(np.abs(diff.data)) > 0:
            raise ValidationError("adjacency must be symmetric")
        if np.any(self.adjacency.diagonal() != 0):
            raise ValidationError("adjacency must have a zero diagonal")
        for mask in (self.train_mask, self.val_mask, self.test_mask):
            if mask.shape != (n,) or mask.dtype != np.bool_:
                raise ValidationError("masks must be boolean vectors over nodes")
        overlap = (
            (self.train_mask & self.val_mask)
            | (self.train_mask & self.test_mask)
            | (self.val_mask & self.test_mask)
        )
        if overlap.any():
            raise ValidationError("train/val/test masks must be pairwise disjoint")
        labeled = self.labels >= 0
        if labeled.any():
            if self.labels[labeled].max() >= self.num_classes:
                raise ValidationError("label id outside [0, num_classes)")

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edge_count(self) -> int:
        return self.adjacency.nnz // 2

    def neighbors(self, v: int) -> np.ndarray:
        row = self.adjacency.indptr
        return self.adjacency.indices[row[v] : row[v + 1]]


@dataclass
class ClientPartition:
    """Disjoint split of a graph into per-client induced subgraphs.

    global_ids[m][i] is the global node id of local node i on client m; only
    intra-client edges survive in the subgraphs.
    """

    assignments: np.ndarray
    subgraphs: list[TextAttributedGraph]
    global_ids: list[np.ndarray]

    def __post_init__(self) -> None:
        n = self.assignments.shape[0]
        seen = np.concatenate(self.global_ids)
        if seen.size != n or not np.array_equal(np.sort(seen), np.arange(n)):
            raise ValidationError("client remapping tables must cover every node exactly once")

    @property
    def num_clients(self) -> int:
        return len(self.subgraphs)


def _edges_to_adjacency(n: int, edges: Iterable[tuple[int, int]]) -> sp.csr_matrix:
    """Deduplicated, symmetrized 0/1 adjacency; self-loops dropped."""
    pairs = {(min(u, v), max(u, v)) for u, v in edges if u != v}
    if not pairs:
        return sp.csr_matrix((n, n))
    arr = np.array(sorted(pairs), dtype=np.int64)
    rows = np.concatenate([arr[:, 0], arr[:, 1]])
    cols = np.concatenate([arr[:, 1], arr[:, 0]])
    data = np.ones(rows.size, dtype=np.float64)
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def _open_text(path: Path) -> IO[str]:
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def _resolve_dataset_files(path: Path) -> tuple[Path, Path]:
    if path.is_dir():
        for node_name in ("nodes.jsonl", "nodes.jsonl.gz"):
            node_file = path / node_name
            if node_file.exists():
                break
        else:
            raise ValidationError(f"no nodes.jsonl[.gz] under {path}")
        for edge_name in ("edges.txt", "edges.txt.gz"):
            edge_file = path / edge_name
            if edge_file.exists():
                break
        else:
            raise ValidationError(f"no edges.txt[.gz] under {path}")
        return node_file, edge_file
    raise ValidationError(f"dataset path {path} is not a directory")


def load_tag(path: str | Path, edge_path: str | Path | None = None) -> TextAttributedGraph:
    """Load a graph from a node file (JSON lines) plus an edge file.

    ``path`` may be a dataset directory holding nodes.jsonl[.gz] and
    edges.txt[.gz], or the node file itself with ``edge_path`` given
    explicitly. Edges are deduplicated and symmetrized; self-loops dropped.
    """
    path = Path(path)
    if edge_path is None:
        node_file, edge_file = _resolve_dataset_files(path)
    else:
        node_file, edge_file = path, Path(edge_path)

    records = []
    ids_seen: set[int] = set()
    with _open_text(node_file) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                nid = int(rec["id"])
                text = rec["text"]
                label = rec["label"]
                split = rec["split"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{node_file}:{lineno}: malformed node record ({exc})") from exc
            if not isinstance(text, str):
                raise ParseError(f"{node_file}:{lineno}: text must be a string")
            if split not in SPLITS:
                raise ParseError(f"{node_file}:{lineno}: split must be one of {SPLITS}")
            if label is not None:
                label = int(label)
                if label < 0:
                    raise ParseError(f"{node_file}:{lineno}: negative label")
            if nid in ids_seen:
                raise ValidationError(f"{node_file}:{lineno}: duplicate node id {nid}")
            ids_seen.add(nid)
            records.append((nid, text, label, split))

    if not records:
        raise ValidationError(f"{node_file}: no node records")
    records.sort(key=lambda r: r[0])
    raw_ids = np.array([r[0] for r in records], dtype=np.int64)
    id_to_pos = {int(r[0]): i for i, r in enumerate(records)}
    n = len(records)

    edges = []
    with _open_text(edge_file) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"{edge_file}:{lineno}: expected two node ids")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ParseError(f"{edge_file}:{lineno}: non-integer endpoint") from exc
            if u not in id_to_pos or v not in id_to_pos:
                raise ValidationError(f"{edge_file}:{lineno}: edge endpoint not a known node id")
            edges.append((id_to_pos[u], id_to_pos[v]))

    labels = np.array([-1 if r[2] is None else r[2] for r in records], dtype=np.int64)
    num_classes = int(labels.max()) + 1 if (labels >= 0).any() else 0
    masks = {s: np.array([r[3] == s for r in records], dtype=bool) for s in SPLITS}
    contiguous = bool(np.array_equal(raw_ids, np.arange(n)))
    return TextAttributedGraph(
        adjacency=_edges_to_adjacency(n, edges),
        texts=[r[1] for r in records],
        labels=labels,
        train_mask=masks["train"],
        val_mask=masks["val"],
        test_mask=masks["test"],
        num_classes=num_classes,
        node_ids=None if contiguous else raw_ids,
    )


def save_tag(tag: TextAttributedGraph, out_dir: str | Path) -> tuple[Path, Path]:
    """Write a graph in the on-disk dataset layout load_tag reads."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    node_file = out / "nodes.jsonl"
    edge_file = out / "edges.txt"
    with open(node_file, "w", encoding="utf-8") as fh:
        for i in range(tag.node_count):
            split = "train" if tag.train_mask[i] else ("val" if tag.val_mask[i] else "test")
            rec = {
                "id": i,
                "text": tag.texts[i],
                "label": None if tag.labels[i] < 0 else int(tag.labels[i]),
                "split": split,
            }
            fh.write(json.dumps(rec) + "\n")
    coo = sp.triu(tag.adjacency, k=1).tocoo()
    with open(edge_file, "w", encoding="utf-8") as fh:
        for u, v in sorted(zip(coo.row.tolist(), coo.col.tolist())):
            fh.write(f"{u} {v}\n")
    return node_file, edge_file


# Topic word lists for synthetic node texts; class c draws from list c mod len.
_TOPIC_WORDS = [
    ["neural", "network", "gradient", "layer", "training", "activation"],
    ["graph", "vertex", "edge", "spectral", "clustering", "random"],
    ["protein", "genome", "sequence", "cell", "enzyme", "expression"],
    ["market", "price", "trading", "portfolio", "volatility", "asset"],
    ["quantum", "qubit", "entanglement", "decoherence", "photon", "gate"],
    ["robot", "sensor", "actuator", "planning", "control", "navigation"],
    ["galaxy", "stellar", "redshift", "supernova", "orbit", "telescope"],
    ["syntax", "parser", "grammar", "corpus", "token", "semantics"],
]

_FILLER_WORDS = (
    "we the a of and to in for with this that is are on by propose present "
    "study results method approach show using based new model data analysis "
    "paper work performance our it can be from which these several"
).split()


def default_class_vocab(classes: int) -> list[list[str]]:
    """Per-class keyword lists with deliberate neighbor-class overlap.

    Each class borrows two words from the next class's topic so the text
    signal is informative but not trivially separable.
    """
    bases = []
    for c in range(classes):
        base = _TOPIC_WORDS[c % len(_TOPIC_WORDS)]
        bases.append(list(base) if c < len(_TOPIC_WORDS) else [f"{w}{c}" for w in base])
    vocab = []
    for c in range(classes):
        neighbor = bases[(c + 1) % classes]
        vocab.append(bases[c] + neighbor[:2])
    return vocab


def generate_synthetic_tag(
    classes: int,
    nodes_per_class: int,
    p_in: float,
    p_out: float,
    seed: int,
    vocab: Sequence[Sequence[str]] | None = None,
    keyword_rate: float | tuple[float, float] = (0.05, 0.40),
    min_tokens: int = 45,
    max_tokens: int = 90,
) -> TextAttributedGraph:
    """Stochastic-block-model graph with keyword-mixed sentence texts.

    keyword_rate may be a (lo, hi) range sampled per node, so text
    informativeness varies across nodes, or a single fixed rate. Splits are
    drawn 60/20/20 within each class. Deterministic given seed.
    """
    if classes < 2:
        raise ConfigError("synthetic generator needs at least 2 classes")
    if not (0.0 <= p_out < p_in <= 1.0):
        raise ConfigError("require 0 <= p_out < p_in <= 1")
    if vocab is None:
        vocab = default_class_vocab(classes)
    if len(vocab) != classes:
        raise ConfigError("vocab must provide one keyword list per class")

    n = classes * nodes_per_class
    labels = np.repeat(np.arange(classes), nodes_per_class).astype(np.int64)

    rng_edges = stream_rng(seed, "synthetic.edges")
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, p_in, p_out)
    picked = rng_edges.random(iu.size) < prob
    edges = list(zip(iu[picked].tolist(), ju[picked].tolist()))
    adjacency = _edges_to_adjacency(n, edges)

    rng_text = stream_rng(seed, "synthetic.texts")
    texts = []
    for v in range(n):
        words = list(vocab[labels[v]])
        length = int(rng_text.integers(min_tokens, max_tokens + 1))
        if isinstance(keyword_rate, tuple):
            rate = float(rng_text.uniform(*keyword_rate))
        else:
            rate = float(keyword_rate)
        toks = []
        for _ in range(length):
            if rng_text.random() < rate:
                toks.append(words[int(rng_text.integers(len(words)))])
            else:
                toks.append(_FILLER_WORDS[int(rng_text.integers(len(_FILLER_WORDS)))])
        texts.append(" ".join(toks))

    rng_split = stream_rng(seed, "synthetic.splits")
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    for c in range(classes):
        members = np.where(labels == c)[0]
        perm = rng_split.permutation(members)
        n_tr = int(round(0.6 * members.size))
        n_va = int(round(0.2 * members.size))
        train[perm[:n_tr]] = True
        val[perm[n_tr : n_tr + n_va]] = True
        test[perm[n_tr + n_va :]] = True

    return TextAttributedGraph(
        adjacency=adjacency,
        texts=texts,
        labels=labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
        num_classes=classes,
    )


def _induce_subgraph(tag: TextAttributedGraph, members: np.ndarray) -> TextAttributedGraph:
    members = np.sort(members)
    sub_adj = tag.adjacency[members][:, members].tocsr()
    sub_adj.eliminate_zeros()
    return TextAttributedGraph(
        adjacency=sub_adj,
        texts=[tag.texts[i] for i in members],
        labels=tag.labels[members],
        train_mask=tag.train_mask[members],
        val_mask=tag.val_mask[members],
        test_mask=tag.test_mask[members],
        num_classes=tag.num_classes,
    )


def _louvain_groups(tag: TextAttributedGraph, m: int, seed: int) -> list[list[int]]:
    g = nx.Graph()
    g.add_nodes_from(range(tag.node_count))
    coo = sp.triu(tag.adjacency, k=1).tocoo()
    g.add_edges_from(sorted(zip(coo.row.tolist(), coo.col.tolist())))
    comms = nx.algorithms.community.louvain_communities(
        g, seed=int(stream_rng(seed, "partition.louvain").integers(2**31 - 1))
    )
    communities = sorted(
        (sorted(c) for c in comms), key=lambda c: (-len(c), c[0])
    )
    # Too few communities: split the largest in half until M can be filled.
    while len(communities) < m:
        communities.sort(key=lambda c: (-len(c), c[0]))
        big = communities.pop(0)
        if len(big) < 2:
            raise ValidationError("cannot split singleton communities to reach M clients")
        log.info("louvain produced too few communities; splitting one of size %d", len(big))
        half = len(big) // 2
        communities.extend([big[:half], big[half:]])
    return communities


def partition_clients(
    tag: TextAttributedGraph, m: int, method: str = "louvain", seed: int = 0
) -> ClientPartition:
    """Split a graph into M client subgraphs (cross-client edges dropped).

    louvain: modularity communities greedily packed (largest first) onto the
    currently smallest client. random: seeded uniform assignment. Every
    client is nonempty.
    """
    if not (1 <= m <= tag.node_count):
        raise ConfigError("need 1 <= clients <= node count")
    assignments = np.empty(tag.node_count, dtype=np.int64)
    if method == "louvain":
        communities = _louvain_groups(tag, m, seed)
        sizes = [0] * m
        for comm in communities:
            target = min(range(m), key=lambda c: (sizes[c], c))
            for v in comm:
                assignments[v] = target
            sizes[target] += len(comm)
    elif method == "random":
        rng = stream_rng(seed, "partition.random")
        assignments[:] = rng.integers(0, m, size=tag.node_count)
        for client in range(m):
            if not (assignments == client).any():
                counts = np.bincount(assignments, minlength=m)
                donor = int(np.argmax(counts))
                victim = int(np.where(assignments == donor)[0][0])
                assignments[victim] = client
    else:
        raise ConfigError(f"unknown partition method {method!r}")

    subgraphs = []
    global_ids = []
    for client in range(m):
        members = np.where(assignments == client)[0]
        subgraphs.append(_induce_subgraph(tag, members))
        global_ids.append(members)
    return ClientPartition(assignments=assignments, subgraphs=subgraphs, global_ids=global_ids)


def normalize_adjacency(adjacency: sp.spmatrix) -> sp.csr_matrix:
    """Symmetric normalization D^{-1/2} (A + I) D^{-1/2} with self-loops."""
    n = adjacency.shape[0]
    a_tilde = adjacency.tocsr() + sp.eye(n, format="csr")
    degrees = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(degrees)
    d_half = sp.diags(inv_sqrt)
    return (d_half @ a_tilde @ d_half).tocsr()


def k_hop_neighbors(tag: TextAttributedGraph, v: int, ell: int) -> np.ndarray:
    """Nodes at shortest-path distance exactly ell from v (ell in {0,1,2})."""
    if ell == 0:
        return np.array([v], dtype=np.int64)
    one_hop = tag.neighbors(v)
    if ell == 1:
        return np.sort(one_hop).astype(np.int64)
    if ell == 2:
        if one_hop.size == 0:
            return np.array([], dtype=np.int64)
        reach = np.unique(np.concatenate([tag.neighbors(int(u)) for u in one_hop]))
        exclude = set(one_hop.tolist()) | {v}
        return np.array([w for w in reach.tolist() if w not in exclude], dtype=np.int64)
    raise ValueError("ell must be 0, 1, or 2")
