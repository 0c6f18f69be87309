from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from fedcondense.graph import TextAttributedGraph


def tag_from_edges(n, edges, labels=None, texts=None, num_classes=2, train=None):
    adj = np.zeros((n, n))
    for u, v in edges:
        adj[u, v] = adj[v, u] = 1.0
    labels = np.array(labels if labels is not None else [-1] * n, dtype=np.int64)
    train_mask = np.array(train if train is not None else [False] * n, dtype=bool)
    return TextAttributedGraph(
        adjacency=sp.csr_matrix(adj),
        texts=texts if texts is not None else ["node text"] * n,
        labels=labels,
        train_mask=train_mask,
        val_mask=np.zeros(n, dtype=bool),
        test_mask=np.zeros(n, dtype=bool),
        num_classes=num_classes,
    )


@pytest.fixture
def path_graph():
    # a - b - c
    return tag_from_edges(3, [(0, 1), (1, 2)])
