"""One round of joint soft-mask training and global magnitude binarization.

Per-round ratios apply to the CURRENT active sets, so overall sparsity
compounds as 1 - (1 - p)^rounds. Never resurrects an entry; resurrection
is exclusively the refiner's job.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import GraphDataset
from .errors import ConfigError, EmptyActiveSet
from .model import BinaryMasks, ModelState, SoftMasks, TrainConfig, TrainTrace, train


@dataclass
class PruneRatios:
    """Per-round pruned fractions: p_adj for edges, p_w for weight entries."""

    p_adj: float = 0.05
    p_w: float = 0.20

    def __post_init__(self):
        if not (0.0 <= self.p_adj < 1.0 and 0.0 <= self.p_w < 1.0):
            raise ConfigError(f"pruning ratios must be in [0, 1), got {self.p_adj}, {self.p_w}")


def lowest_magnitude(values: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """Indices (into the full array) of the k smallest-|value| candidates,
    ties broken by ascending element index."""
    if k == 0:
        return np.empty(0, dtype=np.int64)
    mags = np.abs(values[candidates])
    order = np.lexsort((candidates, mags))
    return candidates[order[:k]]


def magnitude_prune(
    ds: GraphDataset,
    model: ModelState,
    active: BinaryMasks,
    ratios: PruneRatios,
    cfg: TrainConfig,
    selection: str = "magnitude",
    rng: np.random.Generator | None = None,
    pool_per_layer: bool = False,
) -> tuple[BinaryMasks, SoftMasks, TrainTrace]:
    """Train soft masks jointly with the weights, then binarize.

    Soft masks start at 1.0 on active entries (0 frozen elsewhere); after
    ``cfg.epochs`` epochs the floor(p * |active|) smallest-magnitude
    active entries on each side are zeroed and the rest set to 1. Weight
    entries are pooled globally across layers unless ``pool_per_layer``.
    ``selection="random"`` keeps the cardinalities but picks uniformly at
    random (baseline mode); it requires ``rng``.

    Returns the new binary masks, the trained soft masks (final state,
    needed by the refiner and the fluctuation analysis), and the training
    trace. ``model`` weights continue from their current values.
    """
    if selection not in ("magnitude", "random"):
        raise ConfigError(f"unknown selection {selection!r}")
    if selection == "random" and rng is None:
        raise ConfigError("random selection needs an rng")

    soft = SoftMasks.from_binary(active)
    trace = train(ds, model, soft, cfg, train_weights=True, train_masks=True)

    new = active.copy()

    # Edges.
    edge_candidates = np.flatnonzero(active.adj)
    k_edges = int(np.floor(ratios.p_adj * edge_candidates.size))
    if edge_candidates.size and edge_candidates.size - k_edges == 0:
        raise EmptyActiveSet("edge prune would empty the active edge set")
    if selection == "magnitude":
        drop = lowest_magnitude(soft.adj_values(), edge_candidates, k_edges)
    else:
        drop = rng.choice(edge_candidates, size=k_edges, replace=False)
    new.adj[drop] = False

    # Weights.
    flat_active = active.weights_flat()
    flat_values = soft.weight_values_flat()
    if pool_per_layer:
        offsets = np.cumsum([0] + [w.size for w in active.weights])
        drops = []
        for i, w in enumerate(active.weights):
            cand = np.flatnonzero(flat_active[offsets[i]:offsets[i + 1]]) + offsets[i]
            k = int(np.floor(ratios.p_w * cand.size))
            if cand.size and cand.size - k == 0:
                raise EmptyActiveSet(f"weight prune would empty layer {i}")
            if selection == "magnitude":
                drops.append(lowest_magnitude(flat_values, cand, k))
            else:
                drops.append(rng.choice(cand, size=k, replace=False))
        drop_w = np.concatenate(drops) if drops else np.empty(0, dtype=np.int64)
    else:
        cand = np.flatnonzero(flat_active)
        k = int(np.floor(ratios.p_w * cand.size))
        if cand.size and cand.size - k == 0:
            raise EmptyActiveSet("weight prune would empty the active weight set")
        if selection == "magnitude":
            drop_w = lowest_magnitude(flat_values, cand, k)
        else:
            drop_w = rng.choice(cand, size=k, replace=False)
    flat_new = new.weights_flat()
    flat_new[drop_w] = False
    new.set_weights_flat(flat_new)

    return new, soft, trace
