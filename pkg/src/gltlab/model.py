"""Masked GCN/GIN forwards, retained/pruned losses, training loop, and
evaluation.

Masks come in two forms: trainable soft masks in [0,1] (importance scores)
and frozen binary masks (ticket structure). The binary complement is always
derived, never stored.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .data import GraphDataset
from .errors import ConfigError, NonFiniteLoss, NonFiniteValue
from .optim import AdamParam, AdamState, adam_step

GCN = "gcn"
GIN = "gin"


@dataclass
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-2
    weight_decay: float = 0.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    seed: int = 0
    norm_grad_through_degree: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("l1 coefficients must be >= 0")


class BinaryMasks:
    """Frozen 0/1 ticket structure: one bit per undirected edge and per
    weight entry (per layer)."""

    def __init__(self, adj: np.ndarray, weights: list[np.ndarray]):
        self.adj = np.asarray(adj, dtype=bool)
        self.weights = [np.asarray(w, dtype=bool) for w in weights]

    @classmethod
    def full(cls, num_edges: int, layer_shapes: list[tuple[int, int]]) -> "BinaryMasks":
        return cls(np.ones(num_edges, dtype=bool), [np.ones(s, dtype=bool) for s in layer_shapes])

    def complement(self) -> "BinaryMasks":
        return BinaryMasks(~self.adj, [~w for w in self.weights])

    def copy(self) -> "BinaryMasks":
        return BinaryMasks(self.adj.copy(), [w.copy() for w in self.weights])

    @property
    def num_edges_active(self) -> int:
        return int(self.adj.sum())

    @property
    def num_weights_active(self) -> int:
        return int(sum(w.sum() for w in self.weights))

    @property
    def num_weights_total(self) -> int:
        return int(sum(w.size for w in self.weights))

    def weights_flat(self) -> np.ndarray:
        """Global flattened weight bitset (layer 0 first, row-major)."""
        return np.concatenate([w.reshape(-1) for w in self.weights])

    def set_weights_flat(self, flat: np.ndarray) -> None:
        off = 0
        for w in self.weights:
            w[...] = flat[off:off + w.size].reshape(w.shape)
            off += w.size

    def __eq__(self, other):
        if not isinstance(other, BinaryMasks):
            return NotImplemented
        return np.array_equal(self.adj, other.adj) and all(
            np.array_equal(a, b) for a, b in zip(self.weights, other.weights)
        )


class SoftMasks:
    """Trainable real-valued masks; entries outside the active (frozen-zero)
    pattern are held at exactly 0 through training."""

    def __init__(self, adj: Tensor, weights: list[Tensor], active_adj: np.ndarray, active_weights: list[np.ndarray]):
        self.adj = adj
        self.weights = weights
        self.active_adj = np.asarray(active_adj, dtype=bool)
        self.active_weights = [np.asarray(a, dtype=bool) for a in active_weights]

    @classmethod
    def from_binary(cls, binary: BinaryMasks) -> "SoftMasks":
        adj = Tensor(binary.adj.astype(np.float64).reshape(-1, 1))
        weights = [Tensor(w.astype(np.float64)) for w in binary.weights]
        return cls(adj, weights, binary.adj.copy(), [w.copy() for w in binary.weights])

    def adj_values(self) -> np.ndarray:
        return self.adj.values[:, 0]

    def weight_values_flat(self) -> np.ndarray:
        return np.concatenate([w.values.reshape(-1) for w in self.weights])


class ModelState:
    """Two-layer GNN weights plus the frozen initialization snapshot used
    for rewinding."""

    def __init__(self, layers: list[Tensor], backbone: str, hidden_dim: int, gin_epsilon: float = 0.0,
                 init_snapshot: list[np.ndarray] | None = None):
        self.layers = layers
        self.backbone = backbone
        self.hidden_dim = hidden_dim
        self.gin_epsilon = gin_epsilon
        if init_snapshot is None:
            init_snapshot = [t.values.copy() for t in layers]
        self.init_snapshot = init_snapshot
        for s in self.init_snapshot:
            s.setflags(write=False)

    @classmethod
    def init(cls, ds: GraphDataset, hidden_dim: int, backbone: str = GCN, seed: int = 0,
             gin_epsilon: float = 0.0) -> "ModelState":
        """Glorot-uniform initialization drawn from the run seed."""
        if backbone not in (GCN, GIN):
            raise ConfigError(f"unknown backbone {backbone!r}")
        rng = np.random.default_rng(seed)
        shapes = [(ds.num_features, hidden_dim), (hidden_dim, ds.num_classes)]
        layers = []
        for fan_in, fan_out in shapes:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append(Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out))))
        return cls(layers, backbone, hidden_dim, gin_epsilon)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        return [t.shape for t in self.layers]

    def rewind(self) -> None:
        """Restore weights to the initialization snapshot, bit for bit."""
        for t, snap in zip(self.layers, self.init_snapshot):
            t.values = snap.copy()
            t.grad = None

    def fresh_from_init(self) -> "ModelState":
        """New model sharing this model's initialization draw."""
        layers = [Tensor(s.copy()) for s in self.init_snapshot]
        return ModelState(layers, self.backbone, self.hidden_dim, self.gin_epsilon,
                          [s.copy() for s in self.init_snapshot])

    def weight_values(self) -> list[np.ndarray]:
        return [t.values.copy() for t in self.layers]

    def set_weight_values(self, values: list[np.ndarray]) -> None:
        for t, v in zip(self.layers, values):
            t.values = v.copy()


def forward(ds: GraphDataset, model: ModelState, masks: SoftMasks, tape: Tape,
            grad_through_degree: bool = True) -> Tensor:
    """Masked forward pass; returns pre-softmax logits.

    GCN renormalizes from the soft-masked adjacency each call:
    deg = rowsum(A ⊙ M_A) + 1 (the self-loop is added here and is never
    prunable). GIN uses sum aggregation with a (1 + eps) self term.
    """
    masked_w = [tape.mul(w, m) for w, m in zip(model.layers, masks.weights)]
    n, edges = ds.num_nodes, ds.edges

    if model.backbone == GCN:
        deg = tape.edge_degree(edges, n, masks.adj)
        if not grad_through_degree:
            deg = Tensor(deg.values)  # detached copy
        dinv = tape.pow_shift(deg, 1.0, -0.5)
        dinv2 = tape.mul(dinv, dinv)

        def normalized_agg(h: Tensor) -> Tensor:
            spread = tape.masked_spmm(edges, n, masks.adj, tape.row_scale(h, dinv))
            return tape.add(tape.row_scale(spread, dinv), tape.row_scale(h, dinv2))

        xw = tape.sparse_matmul(ds.features_csr(), masked_w[0])
        h1 = tape.relu(normalized_agg(xw))
        return normalized_agg(tape.matmul(h1, masked_w[1]))

    # GIN: h' = ((1+eps)*h + (A ⊙ M_A)h) W, ReLU between the two layers.
    def sum_agg(hw: Tensor) -> Tensor:
        return tape.add(tape.scale(hw, 1.0 + model.gin_epsilon), tape.masked_spmm(edges, n, masks.adj, hw))

    h1 = tape.relu(sum_agg(tape.sparse_matmul(ds.features_csr(), masked_w[0])))
    return sum_agg(tape.matmul(h1, masked_w[1]))


def masked_loss(ds: GraphDataset, model: ModelState, masks: SoftMasks, lambda1: float, lambda2: float,
                tape: Tape, grad_through_degree: bool = True, index_set: np.ndarray | None = None):
    """Cross-entropy over the train split plus l1 mask regularization.

    Used for both the retained and the pruned substructure: pass the
    complement-side soft masks to get the pruned-side loss.
    """
    if index_set is None:
        index_set = ds.train_idx
    logits = forward(ds, model, masks, tape, grad_through_degree)
    loss = tape.softmax_cross_entropy(logits, ds.labels, index_set)
    if lambda1 != 0.0:
        loss = tape.add(loss, tape.scale(tape.l1_sum(masks.adj), lambda1))
    if lambda2 != 0.0:
        for w in masks.weights:
            loss = tape.add(loss, tape.scale(tape.l1_sum(w), lambda2))
    return loss, logits


def loss_retained(ds, model, masks, lambda1, lambda2, grad_through_degree=True):
    tape = Tape()
    loss, _ = masked_loss(ds, model, masks, lambda1, lambda2, tape, grad_through_degree)
    return loss, tape


def loss_pruned(ds, model, masks_complement, lambda1, lambda2, grad_through_degree=True):
    tape = Tape()
    loss, _ = masked_loss(ds, model, masks_complement, lambda1, lambda2, tape, grad_through_degree)
    return loss, tape


def _accuracy(logits_values: np.ndarray, labels: np.ndarray, idx: np.ndarray) -> float:
    if idx.size == 0:
        return 0.0
    # np.argmax breaks ties toward the lower class index
    pred = np.argmax(logits_values[idx], axis=1)
    return float(np.mean(pred == labels[idx]))


@dataclass
class TrainTrace:
    """Per-epoch record plus the best-validation snapshot.

    Row e holds the state after e optimizer steps (row 0 is the unstepped
    state, row ``epochs`` the final one).
    """

    rows: list[tuple[int, float, float, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = -1.0
    best_test_acc: float = 0.0
    best_weights: list[np.ndarray] = field(default_factory=list)
    best_adj_mask: np.ndarray | None = None
    best_weight_masks: list[np.ndarray] = field(default_factory=list)

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("epoch,train_loss,val_acc,test_acc\n")
            for epoch, loss, val, test in self.rows:
                f.write(f"{epoch},{loss!r},{val!r},{test!r}\n")


def train(ds: GraphDataset, model: ModelState, masks: SoftMasks, cfg: TrainConfig,
          train_weights: bool, train_masks: bool) -> TrainTrace:
    """Full-graph training of weights and/or soft masks.

    Mutates ``model`` and ``masks`` in place (final state) and returns the
    trace with the best-validation snapshot. Deterministic given inputs.
    """
    if not (train_weights or train_masks):
        raise ConfigError("at least one of train_weights/train_masks must be set")

    for t in model.layers:
        t.requires_grad = train_weights
        t.zero_grad()
    mask_tensors = [masks.adj] + masks.weights
    for t in mask_tensors:
        t.requires_grad = train_masks
        t.zero_grad()

    params: list[AdamParam] = []
    if train_weights:
        params += [AdamParam(t) for t in model.layers]
    if train_masks:
        params.append(AdamParam(masks.adj, is_mask=True, active=masks.active_adj.reshape(-1, 1)))
        params += [
            AdamParam(t, is_mask=True, active=a)
            for t, a in zip(masks.weights, masks.active_weights)
        ]
    state = AdamState(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    trace = TrainTrace()
    for epoch in range(cfg.epochs + 1):
        tape = Tape()
        try:
            loss, logits = masked_loss(
                ds, model, masks, cfg.lambda1, cfg.lambda2, tape, cfg.norm_grad_through_degree
            )
        except NonFiniteValue as exc:
            raise NonFiniteLoss(f"non-finite forward at epoch {epoch}", trace) from exc
        val_acc = _accuracy(logits.values, ds.labels, ds.val_idx)
        test_acc = _accuracy(logits.values, ds.labels, ds.test_idx)
        trace.rows.append((epoch, loss.item(), val_acc, test_acc))
        if val_acc > trace.best_val_acc:
            trace.best_epoch = epoch
            trace.best_val_acc = val_acc
            trace.best_test_acc = test_acc
            trace.best_weights = model.weight_values()
            trace.best_adj_mask = masks.adj.values.copy()
            trace.best_weight_masks = [w.values.copy() for w in masks.weights]
        if epoch == cfg.epochs:
            break
        for p in params:
            p.tensor.zero_grad()
        tape.backward(loss)
        adam_step(state)
    return trace


def evaluate(ds: GraphDataset, model: ModelState, binary: BinaryMasks, split: str = "test") -> float:
    """Accuracy of the current weights under frozen binary masks."""
    idx = {"val": ds.val_idx, "test": ds.test_idx, "train": ds.train_idx}[split]
    soft = SoftMasks.from_binary(binary)
    tape = Tape()
    logits = forward(ds, model, soft, tape)
    return _accuracy(logits.values, ds.labels, idx)


def snapshot_masks(masks: SoftMasks) -> dict:
    return {
        "adj": masks.adj.values.copy(),
        "weights": [w.values.copy() for w in masks.weights],
    }


def clone_model(model: ModelState) -> ModelState:
    return ModelState(
        [Tensor(t.values.copy()) for t in model.layers],
        model.backbone,
        model.hidden_dim,
        model.gin_epsilon,
        [s.copy() for s in model.init_snapshot],
    )
