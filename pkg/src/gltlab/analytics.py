"""Importance-fluctuation profiles, sparsity accounting, and static
inference MAC estimation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import GraphDataset
from .errors import UniverseMismatch
from .model import BinaryMasks, ModelState


@dataclass
class StageSummary:
    stage_sparsity: float
    side: str  # "edge" | "weight"
    q10: float
    q50: float
    q90: float
    mean: float


@dataclass
class FluctuationProfile:
    """Rank drift of the winning ticket's elements across pruning stages.

    fluct(e, s) = nrank_final(e) - nrank_s(e), where nrank is the 0-based
    ascending |value| rank over the whole universe divided by the universe
    size. Positive means the element ranked lower (less important) at the
    earlier stage. Values lie in (-1, 1); the final stage is identically 0.
    """

    stage_sparsities: list[float]
    edge_fluct: np.ndarray    # (num_stages, |winner edges|)
    weight_fluct: np.ndarray  # (num_stages, |winner weights|)
    summaries: list[StageSummary]


def _normalized_ranks(values: np.ndarray) -> np.ndarray:
    """Ascending |value| rank / universe size, ties broken by element index."""
    n = values.size
    order = np.lexsort((np.arange(n), np.abs(values)))
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.arange(n, dtype=np.float64)
    return ranks / n


def fluctuation(stages: list[dict], winner: BinaryMasks) -> FluctuationProfile:
    """Compute the fluctuation profile over per-stage trained soft masks.

    Each stage is a dict with keys ``adj`` (soft edge-mask values over the
    full edge universe), ``weights_flat`` (soft weight-mask values over
    the full flattened weight universe), and the stage sparsities. Frozen
    entries carry value 0 and rank by index among the zeros. The last
    stage is the reference (the winning ticket's stage).
    """
    if not stages:
        raise UniverseMismatch("need at least one stage")
    num_edges = winner.adj.size
    num_weights = winner.num_weights_total
    for s in stages:
        if s["adj"].size != num_edges or s["weights_flat"].size != num_weights:
            raise UniverseMismatch("stage snapshot universe differs from the winner's")

    edge_sel = np.flatnonzero(winner.adj)
    weight_sel = np.flatnonzero(winner.weights_flat())

    edge_ranks = np.stack([_normalized_ranks(s["adj"])[edge_sel] for s in stages])
    weight_ranks = np.stack([_normalized_ranks(s["weights_flat"])[weight_sel] for s in stages])
    edge_fluct = edge_ranks[-1][None, :] - edge_ranks
    weight_fluct = weight_ranks[-1][None, :] - weight_ranks

    summaries = []
    sparsities = []
    for i, s in enumerate(stages):
        sparsities.append(float(s.get("graph_sparsity", 0.0)))
        for side, fl, sp_key in (
            ("edge", edge_fluct[i], "graph_sparsity"),
            ("weight", weight_fluct[i], "model_sparsity"),
        ):
            q10, q50, q90 = (np.quantile(fl, q) for q in (0.1, 0.5, 0.9)) if fl.size else (0.0, 0.0, 0.0)
            summaries.append(StageSummary(
                stage_sparsity=float(s.get(sp_key, 0.0)),
                side=side,
                q10=float(q10),
                q50=float(q50),
                q90=float(q90),
                mean=float(fl.mean()) if fl.size else 0.0,
            ))
    return FluctuationProfile(sparsities, edge_fluct, weight_fluct, summaries)


def write_fluctuation_csv(profile: FluctuationProfile, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("stage_sparsity,side,q10,q50,q90,mean\n")
        for s in profile.summaries:
            f.write(f"{s.stage_sparsity!r},{s.side},{s.q10!r},{s.q50!r},{s.q90!r},{s.mean!r}\n")


def sparsity(binary: BinaryMasks) -> tuple[float, float]:
    """(graph_sparsity, model_sparsity): pruned fraction per side."""
    gs = 1.0 - binary.num_edges_active / max(1, binary.adj.size)
    ms = 1.0 - binary.num_weights_active / max(1, binary.num_weights_total)
    return gs, ms


def inference_macs(binary: BinaryMasks, ds: GraphDataset, model: ModelState) -> int:
    """Multiply-accumulates of one full-graph forward, from mask popcounts.

    Per layer: feature transform nnz(W ⊙ M_W) * n (each surviving weight
    entry touches every node row), plus aggregation over the masked
    adjacency expanded symmetrically (2 * active edges + n self-loop
    terms) * layer output width.
    """
    n = ds.num_nodes
    active_edges = binary.num_edges_active
    total = 0
    for w_mask, tensor in zip(binary.weights, model.layers):
        out_dim = tensor.shape[1]
        total += int(w_mask.sum()) * n
        total += (2 * active_edges + n) * out_dim
    return total
