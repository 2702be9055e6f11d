"""Graph dataset model, bit-exact directory format, SBM fixtures, and the
Planetoid converter.

A dataset directory holds:
    meta.json     {"num_nodes":n,"num_features":d,"num_classes":c,"num_edges":e}
    edges.tsv     one undirected edge per line "u<TAB>v" with u < v
    features.csv  n lines of d comma-separated decimals (repr round-trip)
    labels.tsv    n lines, one integer each
    splits.json   {"train":[...],"val":[...],"test":[...]} sorted ascending

Undirected edges are stored exactly once with canonical ordering u < v and
no self-loops; the symmetric expansion happens on demand.
"""
from __future__ import annotations

import json
import os
import pickle
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import (
    DegenerateConfig,
    DuplicateEdge,
    IndexOutOfRange,
    IoError,
    MissingFile,
    ParseError,
    SelfLoopError,
    SplitOverlap,
)

META_NAME = "meta.json"
EDGES_NAME = "edges.tsv"
FEATURES_NAME = "features.csv"
LABELS_NAME = "labels.tsv"
SPLITS_NAME = "splits.json"


@dataclass
class GraphDataset:
    """Immutable node-classification graph.

    ``edges`` is an (E, 2) int array of undirected edges, each stored once
    with u < v and sorted lexicographically. Treat all fields as read-only
    after construction.
    """

    features: np.ndarray
    edges: np.ndarray
    labels: np.ndarray
    num_classes: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    _features_csr: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def features_csr(self) -> sp.csr_matrix:
        """CSR view of the feature matrix, cached (feature matmuls dominate
        forward cost on citation graphs, which are extremely sparse)."""
        if self._features_csr is None:
            self._features_csr = sp.csr_matrix(self.features)
        return self._features_csr

    def dense_adjacency(self, edge_values: np.ndarray | None = None) -> np.ndarray:
        """Symmetric dense adjacency (zero diagonal). Reference/oracle path
        only; intended for small graphs."""
        n = self.num_nodes
        a = np.zeros((n, n), dtype=np.float64)
        vals = np.ones(self.num_edges) if edge_values is None else np.asarray(edge_values, dtype=np.float64)
        u, v = self.edges[:, 0], self.edges[:, 1]
        a[u, v] = vals
        a[v, u] = vals
        return a

    def validate(self) -> None:
        n = self.num_nodes
        if self.labels.shape != (n,):
            raise IndexOutOfRange(f"labels length {self.labels.shape} != num_nodes {n}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise IndexOutOfRange("label outside [0, num_classes)")
        if self.edges.size:
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise IndexOutOfRange("edge endpoint outside [0, num_nodes)")
            if np.any(self.edges[:, 0] >= self.edges[:, 1]):
                raise SelfLoopError("edge list contains a self-loop or non-canonical pair")
        seen: dict[int, str] = {}
        for name, idx in (("train", self.train_idx), ("val", self.val_idx), ("test", self.test_idx)):
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise IndexOutOfRange(f"{name} split index outside [0, num_nodes)")
            for i in idx:
                if int(i) in seen:
                    raise SplitOverlap(f"node {int(i)} in both {seen[int(i)]} and {name} splits")
                seen[int(i)] = name

    def __eq__(self, other) -> bool:
        if not isinstance(other, GraphDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.train_idx, other.train_idx)
            and np.array_equal(self.val_idx, other.val_idx)
            and np.array_equal(self.test_idx, other.test_idx)
        )


def canonicalize_edges(pairs, line_numbers=None):
    """Collapse (u,v) pairs to the canonical sorted u<v edge list.

    Rejects self-loops and duplicates (reporting both offending line
    numbers when available). Line-order insensitive by construction.
    """
    canon = []
    for k, (u, v) in enumerate(pairs):
        line = line_numbers[k] if line_numbers is not None else k + 1
        if u == v:
            raise SelfLoopError(f"self-loop {u}-{v} at line {line}")
        canon.append((min(u, v), max(u, v), line))
    canon.sort(key=lambda t: (t[0], t[1], t[2]))
    edges = []
    for i, (u, v, line) in enumerate(canon):
        if i > 0 and canon[i - 1][0] == u and canon[i - 1][1] == v:
            raise DuplicateEdge(u, v, canon[i - 1][2], line)
        edges.append((u, v))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def _require(path):
    if not os.path.isfile(path):
        raise MissingFile(path)
    return path


def load_dataset(dir_path: str, row_normalize_features: bool = False) -> GraphDataset:
    """Load and validate a dataset directory.

    ``row_normalize_features`` divides each feature row by its L1 norm
    (rows summing to zero are left untouched); off by default.
    """
    meta_path = _require(os.path.join(dir_path, META_NAME))
    with open(meta_path, encoding="utf-8") as f:
        try:
            meta = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(meta_path, exc.lineno, exc.msg) from exc

    edges_path = _require(os.path.join(dir_path, EDGES_NAME))
    pairs, lines = [], []
    with open(edges_path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError(edges_path, line_no, f"expected 'u<TAB>v', got {line!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ParseError(edges_path, line_no, str(exc)) from exc
            pairs.append((u, v))
            lines.append(line_no)
    edges = canonicalize_edges(pairs, lines)

    feat_path = _require(os.path.join(dir_path, FEATURES_NAME))
    rows = []
    with open(feat_path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            try:
                rows.append([float(x) for x in line.split(",")] if line else [])
            except ValueError as exc:
                raise ParseError(feat_path, line_no, str(exc)) from exc
    features = np.array(rows, dtype=np.float64)
    if features.ndim != 2 or features.shape != (meta["num_nodes"], meta["num_features"]):
        raise ParseError(feat_path, 1, f"feature matrix shape {features.shape} disagrees with meta")

    labels_path = _require(os.path.join(dir_path, LABELS_NAME))
    labels = []
    with open(labels_path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError as exc:
                raise ParseError(labels_path, line_no, str(exc)) from exc
    labels = np.array(labels, dtype=np.int64)

    splits_path = _require(os.path.join(dir_path, SPLITS_NAME))
    with open(splits_path, encoding="utf-8") as f:
        try:
            splits = json.load(f)
        except json.JSONDecodeError as exc:
            raise ParseError(splits_path, exc.lineno, exc.msg) from exc

    if edges.shape[0] != meta["num_edges"]:
        raise ParseError(edges_path, 1, f"{edges.shape[0]} edges on disk, meta says {meta['num_edges']}")

    if row_normalize_features:
        features = features.copy()
        norms = np.abs(features).sum(axis=1)
        nz = norms > 0
        features[nz] /= norms[nz, None]

    ds = GraphDataset(
        features=features,
        edges=edges,
        labels=labels,
        num_classes=int(meta["num_classes"]),
        train_idx=np.array(sorted(splits["train"]), dtype=np.int64),
        val_idx=np.array(sorted(splits["val"]), dtype=np.int64),
        test_idx=np.array(sorted(splits["test"]), dtype=np.int64),
    )
    ds.validate()
    return ds


def _format_float(x: float) -> str:
    # repr() gives the shortest string that round-trips to the same double
    return repr(float(x))


def save_dataset(ds: GraphDataset, dir_path: str) -> None:
    """Write the dataset in the canonical directory format (UTF-8, LF,
    deterministic bytes; load∘save is the identity)."""
    try:
        os.makedirs(dir_path, exist_ok=True)
        meta = {
            "num_nodes": int(ds.num_nodes),
            "num_features": int(ds.num_features),
            "num_classes": int(ds.num_classes),
            "num_edges": int(ds.num_edges),
        }
        with open(os.path.join(dir_path, META_NAME), "w", encoding="utf-8", newline="\n") as f:
            json.dump(meta, f, separators=(",", ":"), sort_keys=True)
            f.write("\n")
        with open(os.path.join(dir_path, EDGES_NAME), "w", encoding="utf-8", newline="\n") as f:
            for u, v in ds.edges:
                f.write(f"{int(u)}\t{int(v)}\n")
        with open(os.path.join(dir_path, FEATURES_NAME), "w", encoding="utf-8", newline="\n") as f:
            for row in ds.features:
                f.write(",".join(_format_float(x) for x in row))
                f.write("\n")
        with open(os.path.join(dir_path, LABELS_NAME), "w", encoding="utf-8", newline="\n") as f:
            for y in ds.labels:
                f.write(f"{int(y)}\n")
        with open(os.path.join(dir_path, SPLITS_NAME), "w", encoding="utf-8", newline="\n") as f:
            json.dump(
                {
                    "train": [int(i) for i in ds.train_idx],
                    "val": [int(i) for i in ds.val_idx],
                    "test": [int(i) for i in ds.test_idx],
                },
                f,
                separators=(",", ":"),
                sort_keys=True,
            )
            f.write("\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def synth_sbm(
    num_blocks: int,
    nodes_per_block: int,
    p_in: float,
    p_out: float,
    d: int,
    seed: int,
) -> GraphDataset:
    """Deterministic stochastic-block-model fixture.

    Labels are block ids, features are one-hot(block mod d) plus seeded
    Gaussian noise, splits are ~60/20/20 stratified by block.
    """
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise DegenerateConfig(f"need 0 <= p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    rng = np.random.default_rng(seed)
    n = num_blocks * nodes_per_block
    blocks = np.repeat(np.arange(num_blocks), nodes_per_block)

    iu, iv = np.triu_indices(n, k=1)
    p = np.where(blocks[iu] == blocks[iv], p_in, p_out)
    keep = rng.random(p.shape) < p
    edges = np.stack([iu[keep], iv[keep]], axis=1).astype(np.int64)

    features = np.zeros((n, d), dtype=np.float64)
    features[np.arange(n), blocks % d] = 1.0
    features += 0.1 * rng.standard_normal((n, d))

    n_val = max(1, int(round(0.2 * nodes_per_block)))
    n_test = max(1, int(round(0.2 * nodes_per_block)))
    n_train = nodes_per_block - n_val - n_test
    if n_train < 1:
        raise DegenerateConfig(f"block of {nodes_per_block} nodes leaves an empty split")

    train, val, test = [], [], []
    for b in range(num_blocks):
        members = np.arange(b * nodes_per_block, (b + 1) * nodes_per_block)
        perm = rng.permutation(members)
        train.extend(perm[:n_train])
        val.extend(perm[n_train:n_train + n_val])
        test.extend(perm[n_train + n_val:])

    ds = GraphDataset(
        features=features,
        edges=edges,
        labels=blocks.astype(np.int64),
        num_classes=num_blocks,
        train_idx=np.array(sorted(train), dtype=np.int64),
        val_idx=np.array(sorted(val), dtype=np.int64),
        test_idx=np.array(sorted(test), dtype=np.int64),
    )
    ds.validate()
    return ds


# --------------------------------------------------------------------------
# Planetoid converter (public citation-network releases -> native format)
# --------------------------------------------------------------------------

def convert_planetoid(src_dir: str, name: str, out_dir: str, num_val: int = 500, num_test: int = 1000) -> GraphDataset:
    """Convert a public Cora/Citeseer/PubMed release to the native format.

    Supports two on-disk layouts:
      * the pickled split release (ind.<name>.x / .y / .tx / .ty / .allx /
        .ally / .graph / .test.index) with its standard train/val/test
        protocol (per-class labeled training nodes, 500 validation, 1000
        test nodes);
      * the raw text release (<name>.content + <name>.cites), for which
        splits are derived deterministically: first 20 nodes per class in
        node order for training, then the next ``num_val``/``num_test``
        unassigned nodes for validation/test.
    """
    name = name.lower()
    if os.path.isfile(os.path.join(src_dir, f"ind.{name}.x")):
        ds = _convert_planetoid_pickles(src_dir, name, num_val)
    elif os.path.isfile(os.path.join(src_dir, f"{name}.content")):
        ds = _convert_linqs_text(src_dir, name, num_val, num_test)
    else:
        raise MissingFile(f"no ind.{name}.x or {name}.content under {src_dir}")
    save_dataset(ds, out_dir)
    return ds


def _load_pickle(path):
    with open(_require(path), "rb") as f:
        return pickle.load(f, encoding="latin1")


def _convert_planetoid_pickles(src_dir, name, num_val):
    objs = {
        key: _load_pickle(os.path.join(src_dir, f"ind.{name}.{key}"))
        for key in ("x", "y", "tx", "ty", "allx", "ally", "graph")
    }
    with open(_require(os.path.join(src_dir, f"ind.{name}.test.index")), encoding="utf-8") as f:
        test_idx = np.array([int(line) for line in f if line.strip()], dtype=np.int64)

    allx, tx = sp.csr_matrix(objs["allx"]), sp.csr_matrix(objs["tx"])
    ally, ty = np.asarray(objs["ally"]), np.asarray(objs["ty"])

    # The test block may have index gaps (isolated nodes); fill with zeros.
    lo, hi = int(test_idx.min()), int(test_idx.max())
    span = hi - lo + 1
    tx_full = sp.lil_matrix((span, tx.shape[1]))
    ty_full = np.zeros((span, ty.shape[1]))
    tx_full[test_idx - lo] = tx
    ty_full[test_idx - lo] = ty

    features = sp.vstack([allx, sp.csr_matrix(tx_full)]).toarray().astype(np.float64)
    onehot = np.vstack([ally, ty_full])
    labels = onehot.argmax(axis=1).astype(np.int64)

    pairs = set()
    for u, nbrs in objs["graph"].items():
        for v in nbrs:
            if u != v:
                pairs.add((min(int(u), int(v)), max(int(u), int(v))))
    edges = canonicalize_edges(sorted(pairs))

    n_train = objs["y"].shape[0]
    train_idx = np.arange(n_train, dtype=np.int64)
    val_idx = np.arange(n_train, n_train + num_val, dtype=np.int64)

    ds = GraphDataset(
        features=features,
        edges=edges,
        labels=labels,
        num_classes=onehot.shape[1],
        train_idx=train_idx,
        val_idx=val_idx,
        test_idx=np.sort(test_idx),
    )
    ds.validate()
    return ds


def _convert_linqs_text(src_dir, name, num_val, num_test, train_per_class=20):
    ids, rows, raw_labels = [], [], []
    with open(os.path.join(src_dir, f"{name}.content"), encoding="utf-8") as f:
        for line in f:
            parts = line.strip().split()
            if not parts:
                continue
            ids.append(parts[0])
            rows.append([float(x) for x in parts[1:-1]])
            raw_labels.append(parts[-1])
    id_map = {node_id: i for i, node_id in enumerate(ids)}
    classes = sorted(set(raw_labels))
    class_map = {c: i for i, c in enumerate(classes)}
    features = np.array(rows, dtype=np.float64)
    labels = np.array([class_map[c] for c in raw_labels], dtype=np.int64)

    pairs = set()
    with open(os.path.join(src_dir, f"{name}.cites"), encoding="utf-8") as f:
        for line in f:
            parts = line.strip().split()
            if len(parts) != 2:
                continue
            if parts[0] not in id_map or parts[1] not in id_map:
                continue  # citations to papers outside the content file
            u, v = id_map[parts[0]], id_map[parts[1]]
            if u != v:
                pairs.add((min(u, v), max(u, v)))
    edges = canonicalize_edges(sorted(pairs))

    n = len(ids)
    taken = np.zeros(n, dtype=bool)
    per_class = {c: 0 for c in range(len(classes))}
    train = []
    for i in range(n):
        c = int(labels[i])
        if per_class[c] < train_per_class:
            per_class[c] += 1
            taken[i] = True
            train.append(i)
    rest = [i for i in range(n) if not taken[i]]
    if len(rest) < num_val + num_test:
        raise DegenerateConfig(f"{n} nodes leave too few for {num_val} val + {num_test} test")
    val = rest[:num_val]
    test = rest[-num_test:]

    ds = GraphDataset(
        features=features,
        edges=edges,
        labels=labels,
        num_classes=len(classes),
        train_idx=np.array(train, dtype=np.int64),
        val_idx=np.array(sorted(val), dtype=np.int64),
        test_idx=np.array(sorted(test), dtype=np.int64),
    )
    ds.validate()
    return ds
