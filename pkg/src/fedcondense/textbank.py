"""Chunking, frozen text encoders, attention pooling, and the cached bank.

The bank is built once per (graph, encoder, window) and then reused across
rounds byte-identically; nothing downstream may mutate it.
"""

from __future__ import annotations

import hashlib
import json
import re
import gzip
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ValidationError
from .graph import TextAttributedGraph

_TOKEN_RE = re.compile(r"\S+")


class Chunk(NamedTuple):
    char_start: int
    char_end: int
    token_count: int


@dataclass
class ChunkedText:
    source_node: int
    chunks: list[Chunk]


def chunk_text(text: str, window: int, source_node: int = -1) -> ChunkedText:
    """Split text into consecutive windows of up to `window` whitespace tokens.

    Spans are character offsets into the original string, excluding any
    leading/trailing whitespace of each window. Empty text yields no chunks.
    """
    if window < 1:
        raise ConfigError("chunk window must be >= 1")
    spans = [(m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]
    chunks = []
    for i in range(0, len(spans), window):
        group = spans[i : i + window]
        chunks.append(Chunk(group[0][0], group[-1][1], len(group)))
    return ChunkedText(source_node=source_node, chunks=chunks)


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "hash"  # "hash" | "precomputed"
    dim: int = 128
    embeddings_path: str | None = None
    use_bigrams: bool = True

    def __post_init__(self) -> None:
        if self.kind not in ("hash", "precomputed"):
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.kind == "precomputed" and not self.embeddings_path:
            raise ConfigError("precomputed encoder needs embeddings_path")
        if self.dim < 1:
            raise ConfigError("encoder dim must be positive")

    @property
    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "kind": self.kind,
                "dim": self.dim,
                "path": self.embeddings_path,
                "bigrams": self.use_bigrams,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _feature_index(feature: str, dim: int) -> tuple[int, float]:
    h = int.from_bytes(hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest(), "little")
    sign = 1.0 if (h >> 62) & 1 else -1.0
    return h % dim, sign


class Encoder:
    """Deterministic frozen chunk encoder (signed feature hashing or lookup)."""

    def __init__(self, config: EncoderConfig):
        self.config = config
        self._table: dict[tuple[int, int], np.ndarray] | None = None
        if config.kind == "precomputed":
            self._table = _load_embedding_table(Path(config.embeddings_path), config.dim)

    def encode_chunk(self, text_slice: str, node: int = -1, chunk: int = -1) -> np.ndarray:
        if self.config.kind == "precomputed":
            key = (node, chunk)
            if key not in self._table:
                raise ValidationError(f"precomputed embedding missing for node={node} chunk={chunk}")
            vec = self._table[key]
        else:
            vec = self._hash_encode(text_slice)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            return vec
        return vec / norm

    def _hash_encode(self, text_slice: str) -> np.ndarray:
        tokens = text_slice.lower().split()
        vec = np.zeros(self.config.dim)
        for tok in tokens:
            idx, sign = _feature_index(tok, self.config.dim)
            vec[idx] += sign
        if self.config.use_bigrams:
            for a, b in zip(tokens, tokens[1:]):
                idx, sign = _feature_index(f"{a}_{b}", self.config.dim)
                vec[idx] += sign
        return vec


def _load_embedding_table(path: Path, dim: int) -> dict[tuple[int, int], np.ndarray]:
    opener = gzip.open if path.suffix == ".gz" else open
    table: dict[tuple[int, int], np.ndarray] = {}
    with opener(path, "rt", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            vec = np.asarray(rec["vec"], dtype=np.float64)
            if vec.shape != (dim,):
                raise ValidationError(f"{path}:{lineno}: vector has dim {vec.shape}, expected {dim}")
            table[(int(rec["node"]), int(rec["chunk"]))] = vec
    return table


def pool_chunks(chunk_vecs: np.ndarray) -> np.ndarray:
    """Attention-pool chunk vectors with the mean embedding as the query."""
    if chunk_vecs.shape[0] == 0:
        raise ValueError("pool_chunks requires at least one chunk")
    d = chunk_vecs.shape[1]
    query = chunk_vecs.mean(axis=0)
    logits = chunk_vecs @ query / np.sqrt(d)
    logits -= logits.max()
    weights = np.exp(logits)
    weights /= weights.sum()
    return weights @ chunk_vecs


@dataclass
class ChunkEmbeddingBank:
    """Frozen per-node chunk embeddings, spans, and pooled node embeddings."""

    chunked: list[ChunkedText]
    chunk_vecs: list[np.ndarray]  # per node, shape (R_u, d)
    node_vecs: np.ndarray  # shape (n, d)
    empty_text: np.ndarray  # bool flag per node
    encoder_fingerprint: str
    texts: list[str] = field(repr=False, default_factory=list)
    content_digest: str = ""

    @property
    def dim(self) -> int:
        return self.node_vecs.shape[1]

    @property
    def node_count(self) -> int:
        return self.node_vecs.shape[0]

    def chunk_count(self, node: int) -> int:
        return len(self.chunked[node].chunks)

    def chunk_vector(self, node: int, idx: int) -> np.ndarray:
        return self.chunk_vecs[node][idx]

    def chunk_span(self, node: int, idx: int) -> Chunk:
        return self.chunked[node].chunks[idx]

    def chunk_string(self, node: int, idx: int) -> str:
        span = self.chunk_span(node, idx)
        return self.texts[node][span.char_start : span.char_end]

    def compute_digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.node_vecs.tobytes())
        for vecs in self.chunk_vecs:
            h.update(vecs.tobytes())
        h.update(self.encoder_fingerprint.encode())
        return h.hexdigest()[:16]


class BankCache:
    """Per-run cache so the bank is built once per (graph, encoder, window)."""

    def __init__(self) -> None:
        self._store: dict[tuple[str, str, int], ChunkEmbeddingBank] = {}
        self.hits = 0
        self.misses = 0

    @staticmethod
    def _graph_key(tag: TextAttributedGraph) -> str:
        h = hashlib.sha256()
        for text in tag.texts:
            h.update(text.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()[:16]

    def get(
        self, tag: TextAttributedGraph, window: int, encoder: Encoder
    ) -> ChunkEmbeddingBank | None:
        key = (self._graph_key(tag), encoder.config.fingerprint, window)
        bank = self._store.get(key)
        if bank is not None:
            self.hits += 1
        return bank

    def put(self, tag: TextAttributedGraph, window: int, encoder: Encoder, bank: ChunkEmbeddingBank) -> None:
        self.misses += 1
        self._store[(self._graph_key(tag), encoder.config.fingerprint, window)] = bank


def build_bank(
    tag: TextAttributedGraph,
    window: int,
    encoder: Encoder,
    cache: BankCache | None = None,
) -> ChunkEmbeddingBank:
    """Chunk, encode, and pool every node text (cache hit returns the same object)."""
    if cache is not None:
        cached = cache.get(tag, window, encoder)
        if cached is not None:
            return cached

    dim = encoder.config.dim
    chunked = []
    chunk_vecs = []
    node_vecs = np.zeros((tag.node_count, dim))
    empty = np.zeros(tag.node_count, dtype=bool)
    for u in range(tag.node_count):
        ct = chunk_text(tag.texts[u], window, source_node=u)
        chunked.append(ct)
        if not ct.chunks:
            empty[u] = True
            chunk_vecs.append(np.zeros((0, dim)))
            continue
        vecs = np.stack(
            [
                encoder.encode_chunk(
                    tag.texts[u][c.char_start : c.char_end], node=u, chunk=r
                )
                for r, c in enumerate(ct.chunks)
            ]
        )
        chunk_vecs.append(vecs)
        node_vecs[u] = pool_chunks(vecs)

    bank = ChunkEmbeddingBank(
        chunked=chunked,
        chunk_vecs=chunk_vecs,
        node_vecs=node_vecs,
        empty_text=empty,
        encoder_fingerprint=encoder.config.fingerprint,
        texts=list(tag.texts),
    )
    bank.content_digest = bank.compute_digest()
    if cache is not None:
        cache.put(tag, window, encoder, bank)
    return bank


def slice_bank(bank: ChunkEmbeddingBank, members: np.ndarray) -> ChunkEmbeddingBank:
    """Row-select a bank onto a node subset (local ids follow member order)."""
    members = np.asarray(members, dtype=np.int64)
    sub = ChunkEmbeddingBank(
        chunked=[
            ChunkedText(source_node=i, chunks=list(bank.chunked[g].chunks))
            for i, g in enumerate(members)
        ],
        chunk_vecs=[bank.chunk_vecs[g] for g in members],
        node_vecs=bank.node_vecs[members].copy(),
        empty_text=bank.empty_text[members].copy(),
        encoder_fingerprint=bank.encoder_fingerprint,
        texts=[bank.texts[g] for g in members],
    )
    sub.content_digest = sub.compute_digest()
    return sub
