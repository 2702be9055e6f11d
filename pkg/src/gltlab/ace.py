"""Adversarial complementary erasing: train the retained and the pruned
substructures against each other, Gumbel-max sample exchange sets from
both sides, gate repeated churn with a cosine-similarity check, and swap
via XOR.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import GraphDataset
from .errors import (
    ConfigError,
    DegenerateMasks,
    EmptyCandidateSet,
    SetViolation,
)
from .model import BinaryMasks, ModelState, SoftMasks, TrainConfig, train

MAGNITUDE_FLOOR = 1e-12


@dataclass
class AceConfig:
    rounds: int = 3
    k_init: int | None = None  # None = auto: ceil(10% of the pruned side), per universe
    similarity_threshold: float = 0.5
    refine_epochs: int = 30
    equalize_swap: bool = True
    resample: bool = True
    adaptive_k: bool = True

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.k_init is not None and self.k_init < 1:
            raise ConfigError("k_init must be >= 1")
        if not (0.0 <= self.similarity_threshold <= 1.0):
            raise ConfigError("similarity_threshold must be in [0, 1]")


@dataclass
class Draw:
    """Deduplicated Gumbel-max draw: distinct indices ordered by score
    (descending), with the per-draw scores kept for equalizing."""

    indices: np.ndarray
    scores: np.ndarray

    @property
    def size(self) -> int:
        return int(self.indices.size)

    def truncated(self, k: int) -> "Draw":
        return Draw(self.indices[:k], self.scores[:k])

    @classmethod
    def empty(cls) -> "Draw":
        return cls(np.empty(0, dtype=np.int64), np.empty(0))


@dataclass
class SwapSets:
    """Exchange sets: retained-side entries flip 1 -> 0, pruned-side
    entries flip 0 -> 1. Weight entries use global flattened indices."""

    omega_retained: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    omega_pruned: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    alpha_retained: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    alpha_pruned: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


def gumbel_sample(values: np.ndarray, candidates: np.ndarray, k: int, direction: str,
                  rng: np.random.Generator) -> Draw:
    """k independent Gumbel-max draws over the scored candidates, dedup'd.

    direction="most" scores log|m| + Gumbel noise (draws ~ categorical
    with weight |m|); direction="least" scores -log|m| + noise (weight
    1/|m|). Magnitudes are clamped below at 1e-12 before the log. Uses the
    equivalence of Gumbel-argmax with categorical sampling, drawing the
    max score separately (the max of shifted Gumbels is Gumbel(log sum w)
    and independent of the argmax).
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise EmptyCandidateSet("gumbel_sample over an empty candidate set")
    if k < 1:
        raise ConfigError("k must be >= 1")
    if direction not in ("most", "least"):
        raise ConfigError(f"unknown direction {direction!r}")
    mags = np.maximum(np.abs(np.asarray(values, dtype=np.float64)[candidates]), MAGNITUDE_FLOOR)
    weights = mags if direction == "most" else 1.0 / mags
    total = weights.sum()
    picks = rng.choice(candidates.size, size=k, replace=True, p=weights / total)
    scores = math.log(total) + rng.gumbel(size=k)

    best: dict[int, float] = {}
    for local, score in zip(picks, scores):
        idx = int(candidates[local])
        if idx not in best or score > best[idx]:
            best[idx] = float(score)
    pairs = sorted(best.items(), key=lambda it: (-it[1], it[0]))
    return Draw(
        np.array([p[0] for p in pairs], dtype=np.int64),
        np.array([p[1] for p in pairs]),
    )


def swap(binary: BinaryMasks, sets: SwapSets) -> BinaryMasks:
    """Apply the XOR exchange: retained-side bits drop out, pruned-side
    bits come back in; everything else unchanged."""
    out = binary.copy()
    flat = out.weights_flat()
    for idx, expect, name in (
        (sets.omega_retained, True, "omega_retained"),
        (sets.omega_pruned, False, "omega_pruned"),
    ):
        if idx.size:
            if not np.all(flat[idx] == expect):
                raise SetViolation(f"{name} points at bits of the wrong polarity")
            flat[idx] = ~flat[idx]
    out.set_weights_flat(flat)
    for idx, expect, name in (
        (sets.alpha_retained, True, "alpha_retained"),
        (sets.alpha_pruned, False, "alpha_pruned"),
    ):
        if idx.size:
            if not np.all(out.adj[idx] == expect):
                raise SetViolation(f"{name} points at bits of the wrong polarity")
            out.adj[idx] = ~out.adj[idx]
    return out


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of 0/1 indicator sets: |a∩b| / sqrt(|a|·|b|);
    zero when either set is empty."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        return 0.0
    inter = np.intersect1d(a, b).size
    return float(inter / math.sqrt(a.size * b.size))


@dataclass
class AceRound:
    round: int
    k_edges: int
    k_weights: int
    kprime_ret_w: int
    kprime_pr_w: int
    kprime_ret_e: int
    kprime_pr_e: int
    sim_w: float
    sim_e: float
    halved: int


def write_ace_trace(rows: list[AceRound], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("round,K_edges,K_weights,Kprime_ret_w,Kprime_pr_w,Kprime_ret_e,Kprime_pr_e,sim_w,sim_e,halved\n")
        for r in rows:
            f.write(
                f"{r.round},{r.k_edges},{r.k_weights},{r.kprime_ret_w},{r.kprime_pr_w},"
                f"{r.kprime_ret_e},{r.kprime_pr_e},{r.sim_w!r},{r.sim_e!r},{r.halved}\n"
            )


def _auto_k(pruned_count: int) -> int:
    return max(1, math.ceil(0.1 * pruned_count))


def ace_refine(
    ds: GraphDataset,
    model: ModelState,
    binary: BinaryMasks,
    cfg: AceConfig,
    train_cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[BinaryMasks, list[AceRound]]:
    """Refine binary masks by exchanging elements between the retained and
    the pruned substructures.

    Per round: train both sides (retained on the retained loss, pruned on
    the complement loss, refine_epochs each, both starting from the model's
    initialization snapshot and continuing across rounds), draw exchange
    sets with the current sampling budget, gate against the previous
    round's pruned-side draw (one halving-retry at most), optionally
    equalize set sizes so sparsity is preserved exactly, then swap.

    Binary masks are the only state carried between rounds; resurrected
    entries re-enter with soft value 1.0 at the next training phase.
    """
    if binary.num_edges_active == 0 or binary.num_weights_active == 0:
        raise DegenerateMasks("retained side is empty")
    pruned_edges0 = binary.adj.size - binary.num_edges_active
    pruned_weights0 = binary.num_weights_total - binary.num_weights_active
    if not cfg.equalize_swap and (pruned_edges0 == 0 or pruned_weights0 == 0):
        raise EmptyCandidateSet("pruned side empty; nothing to resurrect")

    k_edges = cfg.k_init if cfg.k_init is not None else _auto_k(pruned_edges0)
    k_weights = cfg.k_init if cfg.k_init is not None else _auto_k(pruned_weights0)

    retained_model = model.fresh_from_init()
    pruned_model = model.fresh_from_init()

    current = binary.copy()
    prev_pruned_w: np.ndarray | None = None
    prev_pruned_e: np.ndarray | None = None
    trace: list[AceRound] = []

    for t in range(cfg.rounds):
        comp = current.complement()
        soft_ret = SoftMasks.from_binary(current)
        soft_pr = SoftMasks.from_binary(comp)
        train(ds, retained_model, soft_ret, _round_cfg(train_cfg, cfg.refine_epochs),
              train_weights=True, train_masks=True)
        train(ds, pruned_model, soft_pr, _round_cfg(train_cfg, cfg.refine_epochs),
              train_weights=True, train_masks=True)

        def draw_all(ke: int, kw: int):
            ret_e_cand = np.flatnonzero(current.adj)
            pr_e_cand = np.flatnonzero(comp.adj)
            ret_w_cand = np.flatnonzero(current.weights_flat())
            pr_w_cand = np.flatnonzero(comp.weights_flat())
            adj_ret_vals = soft_ret.adj_values()
            adj_pr_vals = soft_pr.adj_values()
            w_ret_vals = soft_ret.weight_values_flat()
            w_pr_vals = soft_pr.weight_values_flat()
            e_pr = (gumbel_sample(adj_pr_vals, pr_e_cand, ke, "most", rng)
                    if pr_e_cand.size else Draw.empty())
            e_ret = gumbel_sample(adj_ret_vals, ret_e_cand, ke, "least", rng)
            w_pr = (gumbel_sample(w_pr_vals, pr_w_cand, kw, "most", rng)
                    if pr_w_cand.size else Draw.empty())
            w_ret = gumbel_sample(w_ret_vals, ret_w_cand, kw, "least", rng)
            return e_ret, e_pr, w_ret, w_pr

        k_edges_start, k_weights_start = k_edges, k_weights
        e_ret, e_pr, w_ret, w_pr = draw_all(k_edges, k_weights)

        sim_w = similarity(prev_pruned_w, w_ret.indices) if prev_pruned_w is not None else 0.0
        sim_e = similarity(prev_pruned_e, e_ret.indices) if prev_pruned_e is not None else 0.0
        halved = 0
        trip_w = t > 0 and sim_w > cfg.similarity_threshold
        trip_e = t > 0 and sim_e > cfg.similarity_threshold
        if (trip_w or trip_e) and (cfg.adaptive_k or cfg.resample):
            if cfg.adaptive_k:
                if trip_e:
                    k_edges = max(1, k_edges // 2)
                if trip_w:
                    k_weights = max(1, k_weights // 2)
                halved = 1
            if cfg.resample:
                # one halving-retry per round: redraw once, then accept
                e_ret, e_pr, w_ret, w_pr = draw_all(k_edges, k_weights)

        prev_pruned_w = w_pr.indices
        prev_pruned_e = e_pr.indices

        if cfg.equalize_swap:
            ne = min(e_ret.size, e_pr.size)
            nw = min(w_ret.size, w_pr.size)
            e_ret_f, e_pr_f = e_ret.truncated(ne), e_pr.truncated(ne)
            w_ret_f, w_pr_f = w_ret.truncated(nw), w_pr.truncated(nw)
        else:
            e_ret_f, e_pr_f, w_ret_f, w_pr_f = e_ret, e_pr, w_ret, w_pr

        sets = SwapSets(
            omega_retained=w_ret_f.indices,
            omega_pruned=w_pr_f.indices,
            alpha_retained=e_ret_f.indices,
            alpha_pruned=e_pr_f.indices,
        )
        current = swap(current, sets)
        if current.num_edges_active == 0 or current.num_weights_active == 0:
            raise DegenerateMasks(f"retained side emptied in round {t}")

        trace.append(AceRound(
            round=t,
            k_edges=k_edges_start,
            k_weights=k_weights_start,
            kprime_ret_w=w_ret.size,
            kprime_pr_w=w_pr.size,
            kprime_ret_e=e_ret.size,
            kprime_pr_e=e_pr.size,
            sim_w=sim_w,
            sim_e=sim_e,
            halved=halved,
        ))
    return current, trace


def _round_cfg(train_cfg: TrainConfig, epochs: int) -> TrainConfig:
    return TrainConfig(
        epochs=epochs,
        lr=train_cfg.lr,
        weight_decay=train_cfg.weight_decay,
        lambda1=train_cfg.lambda1,
        lambda2=train_cfg.lambda2,
        seed=train_cfg.seed,
        norm_grad_through_degree=train_cfg.norm_grad_through_degree,
    )
