"""Iterative ticket search: prune, optionally refine, retrain from the
initial weights in isolation, rewind, repeat until the target sparsities.

Methods: "ace" (prune + adversarial refinement), "ugs" (prune only, the
classical joint-sparsification baseline), "random" (uniform selection with
the same per-round cardinalities).
"""
from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .ace import AceConfig, AceRound, ace_refine
from .data import GraphDataset
from .errors import BaselineDivergence, ConfigError, EmptyRecords, NonFiniteLoss
from .model import (
    BinaryMasks,
    ModelState,
    SoftMasks,
    TrainConfig,
    TrainTrace,
    train,
)
from .prune import PruneRatios, magnitude_prune

METHODS = ("ace", "ugs", "random")


@dataclass
class SearchConfig:
    s_adj: float = 0.99
    s_w: float = 0.99
    ratios: PruneRatios = field(default_factory=PruneRatios)
    method: str = "ace"
    fixed_side: tuple[str, float] | None = None  # ("graph", v) or ("model", v)
    delta: float = 0.0  # tolerance in accuracy points (1.0 = one percentage point)
    eval_epochs: int | None = None  # None: reuse the pruning-phase epoch count
    max_rounds: int = 100

    def __post_init__(self):
        if not (0.0 <= self.s_adj < 1.0 and 0.0 <= self.s_w < 1.0):
            raise ConfigError("target sparsities must be in [0, 1)")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.fixed_side is not None:
            side, value = self.fixed_side
            if side not in ("graph", "model") or not (0.0 < value < 1.0):
                raise ConfigError(f"bad fixed_side {self.fixed_side!r}")


@dataclass
class TicketRecord:
    round_index: int
    seed: int
    method: str
    graph_sparsity: float
    model_sparsity: float
    test_accuracy: float
    dense_baseline_accuracy: float
    delta: float
    is_glt: bool
    masks: BinaryMasks

    @classmethod
    def build(cls, round_index, seed, method, masks: BinaryMasks, test_acc, dense_acc, delta):
        gs = 1.0 - masks.num_edges_active / masks.adj.size
        ms = 1.0 - masks.num_weights_active / masks.num_weights_total
        return cls(
            round_index=round_index,
            seed=seed,
            method=method,
            graph_sparsity=gs,
            model_sparsity=ms,
            test_accuracy=test_acc,
            dense_baseline_accuracy=dense_acc,
            delta=delta,
            is_glt=test_acc >= dense_acc - delta / 100.0,
            masks=masks,
        )

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "seed": self.seed,
            "method": self.method,
            "graph_sparsity": self.graph_sparsity,
            "model_sparsity": self.model_sparsity,
            "test_accuracy": self.test_accuracy,
            "dense_baseline_accuracy": self.dense_baseline_accuracy,
            "delta": self.delta,
            "is_glt": self.is_glt,
            "adj_mask": _pack_bits(self.masks.adj),
            "weight_masks": [
                {"shape": list(w.shape), **_pack_bits(w.reshape(-1))} for w in self.masks.weights
            ],
        }


def _pack_bits(bits: np.ndarray) -> dict:
    return {
        "bits": base64.b64encode(np.packbits(bits).tobytes()).decode("ascii"),
        "len": int(bits.size),
    }


def unpack_bits(packed: dict) -> np.ndarray:
    raw = np.frombuffer(base64.b64decode(packed["bits"]), dtype=np.uint8)
    return np.unpackbits(raw)[: packed["len"]].astype(bool)


@dataclass
class SearchResult:
    seed: int
    method: str
    dense_accuracy: float
    dense_trace: TrainTrace
    records: list[TicketRecord]
    prune_traces: list[TrainTrace]
    ace_traces: list[list[AceRound]]
    soft_snapshots: list[dict]  # per round: trained soft mask values (for fluctuation analysis)


def run_search(
    ds: GraphDataset,
    cfg: SearchConfig,
    train_cfg: TrainConfig,
    ace_cfg: AceConfig,
    seed: int,
    hidden_dim: int = 128,
    backbone: str = "gcn",
    keep_soft: bool = False,
) -> SearchResult:
    """One seeded search run. Deterministic given its arguments."""
    run_train_cfg = TrainConfig(
        epochs=train_cfg.epochs,
        lr=train_cfg.lr,
        weight_decay=train_cfg.weight_decay,
        lambda1=train_cfg.lambda1,
        lambda2=train_cfg.lambda2,
        seed=seed,
        norm_grad_through_degree=train_cfg.norm_grad_through_degree,
    )
    eval_cfg = TrainConfig(
        epochs=cfg.eval_epochs or train_cfg.epochs,
        lr=train_cfg.lr,
        weight_decay=train_cfg.weight_decay,
        seed=seed,
        norm_grad_through_degree=train_cfg.norm_grad_through_degree,
    )
    model = ModelState.init(ds, hidden_dim, backbone, seed)
    rng = np.random.default_rng([seed, 0xACE])

    current = BinaryMasks.full(ds.num_edges, model.layer_shapes)

    # Dense baseline: same seed, full masks, pruning-phase epochs, best-val
    # protocol — the reference every ticket is compared against.
    try:
        dense_trace = train(ds, model, SoftMasks.from_binary(current), eval_cfg,
                            train_weights=True, train_masks=False)
    except NonFiniteLoss as exc:
        raise BaselineDivergence("dense baseline diverged") from exc
    dense_acc = dense_trace.best_test_acc
    model.rewind()

    pinned_adj: np.ndarray | None = None
    pinned_w: np.ndarray | None = None
    records: list[TicketRecord] = []
    prune_traces: list[TrainTrace] = []
    ace_traces: list[list[AceRound]] = []
    soft_snapshots: list[dict] = []

    round_index = 0
    while round_index < cfg.max_rounds:
        gs = 1.0 - current.num_edges_active / max(1, current.adj.size)
        ms = 1.0 - current.num_weights_active / current.num_weights_total
        if not (gs < cfg.s_adj and ms < cfg.s_w):
            break

        if pinned_adj is not None:
            current.adj = pinned_adj.copy()
        if pinned_w is not None:
            current.set_weights_flat(pinned_w.copy())

        ratios = _effective_ratios(cfg, round_index)
        k_e = int(np.floor(ratios.p_adj * current.num_edges_active))
        k_w = int(np.floor(ratios.p_w * current.num_weights_active))
        if k_e == 0 and k_w == 0:
            break  # no further progress possible

        new, soft, prune_trace = magnitude_prune(
            ds, model, current, ratios, run_train_cfg,
            selection="random" if cfg.method == "random" else "magnitude",
            rng=rng,
        )
        prune_traces.append(prune_trace)
        if keep_soft:
            soft_snapshots.append({
                "adj": soft.adj_values().copy(),
                "weights_flat": soft.weight_values_flat().copy(),
                "graph_sparsity": 1.0 - new.num_edges_active / new.adj.size,
                "model_sparsity": 1.0 - new.num_weights_active / new.num_weights_total,
            })

        if cfg.method == "ace":
            new, ace_trace = ace_refine(ds, model, new, ace_cfg, run_train_cfg, rng)
            ace_traces.append(ace_trace)

        if cfg.fixed_side is not None and cfg.fixed_side[0] == "graph" and pinned_adj is None:
            pinned_adj = new.adj.copy()
        if cfg.fixed_side is not None and cfg.fixed_side[0] == "model" and pinned_w is None:
            pinned_w = new.weights_flat().copy()

        # Tickets are judged trained in isolation from the original init.
        eval_model = model.fresh_from_init()
        eval_trace = train(ds, eval_model, SoftMasks.from_binary(new), eval_cfg,
                           train_weights=True, train_masks=False)
        model.rewind()

        records.append(TicketRecord.build(
            round_index, seed, cfg.method, new.copy(),
            eval_trace.best_test_acc, dense_acc, cfg.delta,
        ))
        current = new
        round_index += 1

    return SearchResult(
        seed=seed,
        method=cfg.method,
        dense_accuracy=dense_acc,
        dense_trace=dense_trace,
        records=records,
        prune_traces=prune_traces,
        ace_traces=ace_traces,
        soft_snapshots=soft_snapshots,
    )


def _effective_ratios(cfg: SearchConfig, round_index: int) -> PruneRatios:
    p_adj, p_w = cfg.ratios.p_adj, cfg.ratios.p_w
    if cfg.fixed_side is not None:
        side, value = cfg.fixed_side
        if side == "graph":
            # hit the pinned level in one step, then freeze the edge side
            p_adj = value if round_index == 0 else 0.0
        else:
            p_w = value if round_index == 0 else 0.0
    return PruneRatios(p_adj=p_adj, p_w=p_w)


def max_glt_sparsity(records: list[TicketRecord]) -> TicketRecord | None:
    """The winning ticket at the highest compounded sparsity, or None when
    no round produced a ticket matching the dense baseline."""
    if not records:
        raise EmptyRecords("no records to scan")
    winners = [r for r in records if r.is_glt]
    if not winners:
        return None
    return max(winners, key=lambda r: r.round_index)


def write_summary_csv(results: list[SearchResult], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("method,seed,round,graph_sparsity,model_sparsity,test_acc,dense_acc,is_glt\n")
        for res in results:
            for r in res.records:
                f.write(
                    f"{r.method},{r.seed},{r.round_index},{r.graph_sparsity!r},"
                    f"{r.model_sparsity!r},{r.test_accuracy!r},{r.dense_baseline_accuracy!r},"
                    f"{int(r.is_glt)}\n"
                )


def results_json(result: SearchResult, config_echo: dict, engine_version: str, timestamp: str) -> str:
    payload = {
        "engine_version": engine_version,
        "timestamp": timestamp,
        "config": config_echo,
        "dense_baseline_accuracy": result.dense_accuracy,
        "records": [r.to_dict() for r in result.records],
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"
