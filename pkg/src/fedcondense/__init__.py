"""Federated condensation of text-attributed graphs.

Per round each client condenses its local graph to a small label-balanced
core, selects budgeted multi-hop text evidence with sparse attention (kept
locally as auditable packs), rebuilds a lightweight topology by sparse
self-expression on fused graph/text features, and trains a shared GCN whose
updates are the only thing that ever crosses the wire.
"""

from .condense import allocate_quotas, assign_pseudo_labels, class_prototypes, condense_nodes
from .config import DatasetConfig, ExperimentConfig, RunSettings, load_config
from .evidence import (
    Budgets,
    EvidencePack,
    SelectionParams,
    gate_neighbors,
    hierarchical_context,
    select_chunks,
    select_evidence,
    sparse_attention,
    top_b_truncate,
    verify_selection_stability,
    verify_truncation_bound,
)
from .federation import (
    CommunicationLedger,
    GlobalModel,
    Simulation,
    aggregate,
    apply_privacy_noise,
)
from .gnn import GcnParams, gcn_forward, gcn_train_step, predict_full
from .graph import (
    ClientPartition,
    TextAttributedGraph,
    generate_synthetic_tag,
    k_hop_neighbors,
    load_tag,
    normalize_adjacency,
    partition_clients,
)
from .textbank import ChunkEmbeddingBank, Encoder, EncoderConfig, build_bank, chunk_text, pool_chunks
from .topology import (
    FusionParams,
    candidate_sets,
    evidence_prior,
    fuse,
    fusion_loss,
    self_expression,
    synthesize_adjacency,
)

__version__ = "0.1.0"
