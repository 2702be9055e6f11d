"""Shared synthetic fixtures for the test suite."""
from __future__ import annotations

import numpy as np

from gltlab.data import GraphDataset, synth_sbm


def small_graph(seed: int = 0) -> GraphDataset:
    """90-node, 3-class block-model graph; fast enough for search tests."""
    return synth_sbm(num_blocks=3, nodes_per_block=30, p_in=0.3, p_out=0.02,
                     d=8, seed=seed)


def tiny_graph(seed: int = 0, n: int = 6, d: int = 4) -> GraphDataset:
    """Handful of nodes for gradient and oracle checks."""
    rng = np.random.default_rng(seed)
    iu, iv = np.triu_indices(n, k=1)
    keep = rng.random(iu.shape) < 0.6
    if not keep.any():
        keep[0] = True
    edges = np.stack([iu[keep], iv[keep]], axis=1).astype(np.int64)
    labels = rng.integers(0, 2, size=n).astype(np.int64)
    idx = rng.permutation(n)
    ds = GraphDataset(
        features=rng.standard_normal((n, d)),
        edges=edges,
        labels=labels,
        num_classes=2,
        train_idx=np.sort(idx[: max(2, n // 2)]),
        val_idx=np.sort(idx[max(2, n // 2): max(2, n // 2) + 1]),
        test_idx=np.sort(idx[max(2, n // 2) + 1:]),
    )
    ds.validate()
    return ds


def planted_bridge(seed: int = 0, nodes_per_block: int = 12,
                   cluster_size: int = 8, d: int = 6):
    """Block-model graph with two zero-feature satellite clusters.

    Each satellite (a hub plus ``cluster_size`` leaves) is labelled like
    one of the two blocks and reaches the rest of the graph only through
    a single bridge edge from its hub into that block. Satellite features
    are exactly zero, and the two satellites carry opposite labels, so a
    model cannot classify them from features alone: without its bridge a
    satellite's validation leaves are provably ambiguous (both satellites
    look identical), and validation accuracy strictly drops.

    Returns (dataset, bridge_edge_index) for the class-1 satellite's
    bridge.
    """
    base = synth_sbm(num_blocks=2, nodes_per_block=nodes_per_block,
                     p_in=0.5, p_out=0.05, d=d, seed=seed)
    n0 = base.num_nodes
    hub1 = n0
    leaves1 = np.arange(n0 + 1, n0 + 1 + cluster_size)
    hub0 = n0 + 1 + cluster_size
    leaves0 = np.arange(hub0 + 1, hub0 + 1 + cluster_size)

    features = np.vstack([
        base.features,
        np.zeros((2 * (cluster_size + 1), d)),
    ])
    b1u = nodes_per_block  # first node of block 1
    b0u = 0                # first node of block 0
    edges = np.vstack([
        base.edges,
        np.array([[b1u, hub1]], dtype=np.int64),
        np.stack([np.full(cluster_size, hub1, dtype=np.int64), leaves1], axis=1),
        np.array([[b0u, hub0]], dtype=np.int64),
        np.stack([np.full(cluster_size, hub0, dtype=np.int64), leaves0], axis=1),
    ]).astype(np.int64)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges = edges[order]

    labels = np.concatenate([
        base.labels,
        [1], np.ones(cluster_size, dtype=np.int64),
        [0], np.zeros(cluster_size, dtype=np.int64),
    ]).astype(np.int64)
    half = cluster_size // 2
    train_idx = np.sort(np.concatenate([
        base.train_idx, [hub1, hub0], leaves1[:half], leaves0[:half]]))
    val_idx = np.sort(np.concatenate([
        base.val_idx, leaves1[half:], leaves0[half:]]))

    ds = GraphDataset(
        features=features,
        edges=edges,
        labels=labels,
        num_classes=base.num_classes,
        train_idx=train_idx.astype(np.int64),
        val_idx=val_idx.astype(np.int64),
        test_idx=base.test_idx,
    )
    ds.validate()
    bridge_idx = int(np.flatnonzero(
        (ds.edges[:, 0] == b1u) & (ds.edges[:, 1] == hub1))[0])
    return ds, bridge_idx
