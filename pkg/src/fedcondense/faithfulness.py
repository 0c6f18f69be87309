"""Paired sufficiency/comprehensiveness evaluation of the selected evidence.

Masking happens on in-memory text copies only: keep (or remove) the spans of
the chunks the selector actually used at prediction time, rebuild the text
bank on the masked texts, and re-predict. Random controls draw the same
number of chunks per node.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import RunSettings
from .evidence import Budgets
from .federation import GlobalModel, macro_f1_score
from .gnn import predict_full
from .graph import TextAttributedGraph, partition_clients
from .rng import stream_rng
from .textbank import BankCache, Encoder, EncoderConfig, build_bank, slice_bank

log = logging.getLogger(__name__)

CONDITIONS = ("full", "sufficiency", "comprehensiveness", "random_keep", "random_remove")


@dataclass
class FaithfulnessReport:
    acc_full: list[float] = field(default_factory=list)
    acc_sufficiency: list[float] = field(default_factory=list)
    acc_comprehensiveness: list[float] = field(default_factory=list)
    acc_random_keep: list[float] = field(default_factory=list)
    acc_random_remove: list[float] = field(default_factory=list)

    def append(self, accs: dict[str, float]) -> None:
        self.acc_full.append(accs["full"])
        self.acc_sufficiency.append(accs["sufficiency"])
        self.acc_comprehensiveness.append(accs["comprehensiveness"])
        self.acc_random_keep.append(accs["random_keep"])
        self.acc_random_remove.append(accs["random_remove"])

    def means(self) -> dict[str, float]:
        return {
            "full": float(np.mean(self.acc_full)),
            "sufficiency": float(np.mean(self.acc_sufficiency)),
            "comprehensiveness": float(np.mean(self.acc_comprehensiveness)),
            "random_keep": float(np.mean(self.acc_random_keep)),
            "random_remove": float(np.mean(self.acc_random_remove)),
        }

    def to_json_obj(self) -> dict:
        return {
            "per_seed": {
                "full": self.acc_full,
                "sufficiency": self.acc_sufficiency,
                "comprehensiveness": self.acc_comprehensiveness,
                "random_keep": self.acc_random_keep,
                "random_remove": self.acc_random_remove,
            },
            "means": self.means(),
        }


def _mask_keep(text: str, spans: list[tuple[int, int]]) -> str:
    out = [" "] * len(text)
    for start, end in spans:
        out[start:end] = text[start:end]
    return "".join(out)


def _mask_remove(text: str, spans: list[tuple[int, int]]) -> str:
    out = list(text)
    for start, end in spans:
        out[start:end] = " " * (end - start)
    return "".join(out)


def _with_texts(tag: TextAttributedGraph, texts: list[str]) -> TextAttributedGraph:
    return TextAttributedGraph(
        adjacency=tag.adjacency,
        texts=texts,
        labels=tag.labels,
        train_mask=tag.train_mask,
        val_mask=tag.val_mask,
        test_mask=tag.test_mask,
        num_classes=tag.num_classes,
    )


def evaluate_faithfulness(
    tag: TextAttributedGraph,
    settings: RunSettings,
    model: GlobalModel,
    seed: int,
) -> dict[str, float]:
    """Accuracy under each masking condition for one trained model."""
    settings.validate()
    encoder = Encoder(
        EncoderConfig(kind=settings.encoder, dim=settings.dim, embeddings_path=settings.embeddings_file)
    )
    if settings.encoder == "precomputed":
        # masked texts cannot be re-encoded from a fixed lookup table
        raise ValueError("faithfulness masking requires a text-driven encoder")
    budgets = Budgets(
        b1=settings.b1, b2=settings.b2, b_tok=settings.b_tok,
        two_hop_prefilter=settings.two_hop_cap,
    )
    partition = partition_clients(tag, settings.clients, settings.partition_method, seed)
    cache = BankCache()
    base_bank = build_bank(tag, settings.window, encoder, cache=cache)

    # prediction pass on original texts, recording which chunks were used
    selected_spans: dict[int, set[tuple[int, int]]] = {}
    selected_counts: dict[int, int] = {}
    accs: dict[str, float] = {}

    def predict_acc(banks_by_client, collect: bool) -> float:
        y_true, y_pred = [], []
        for m, sub in enumerate(partition.subgraphs):
            bank = banks_by_client[m]
            probs, sels = predict_full(
                sub, bank, model.gcn, model.selection, model.fusion,
                budgets, settings.mix, settings.entmax_alpha,
                collect_selections=collect,
            )
            if collect:
                gids = partition.global_ids[m]
                for _v, pairs in sels.items():
                    for u, r in pairs:
                        gid = int(gids[u])
                        span = bank.chunk_span(u, r)
                        selected_spans.setdefault(gid, set()).add((span.char_start, span.char_end))
            mask = sub.test_mask & (sub.labels >= 0)
            if mask.any():
                y_true.append(sub.labels[mask])
                y_pred.append(probs[mask].argmax(axis=1))
        truth = np.concatenate(y_true)
        pred = np.concatenate(y_pred)
        return float((truth == pred).mean())

    base_banks = [slice_bank(base_bank, gids) for gids in partition.global_ids]
    accs["full"] = predict_acc(base_banks, collect=True)

    # matched-count random control spans, drawn per node from its own chunks
    rng = stream_rng(seed, "faithfulness.random-control")
    random_spans: dict[int, list[tuple[int, int]]] = {}
    for gid, spans in sorted(selected_spans.items()):
        selected_counts[gid] = len(spans)
        chunks = base_bank.chunked[gid].chunks
        take = min(len(spans), len(chunks))
        picked = rng.choice(len(chunks), size=take, replace=False)
        random_spans[gid] = [(chunks[i].char_start, chunks[i].char_end) for i in picked]

    def masked_condition(spans_by_node: dict, keep: bool) -> float:
        texts = []
        for gid in range(tag.node_count):
            spans = sorted(spans_by_node.get(gid, []))
            if keep:
                texts.append(_mask_keep(tag.texts[gid], spans))
            else:
                texts.append(_mask_remove(tag.texts[gid], spans))
        masked_tag = _with_texts(tag, texts)
        masked_bank = build_bank(masked_tag, settings.window, encoder, cache=cache)
        banks = [slice_bank(masked_bank, gids) for gids in partition.global_ids]
        return predict_acc(banks, collect=False)

    sel = {gid: sorted(s) for gid, s in selected_spans.items()}
    accs["sufficiency"] = masked_condition(sel, keep=True)
    accs["comprehensiveness"] = masked_condition(sel, keep=False)
    accs["random_keep"] = masked_condition(random_spans, keep=True)
    accs["random_remove"] = masked_condition(random_spans, keep=False)
    return accs
