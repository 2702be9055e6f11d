"""Minimal deterministic reverse-mode differentiation over dense matrices
and masked-sparse adjacency operators.

Everything is double precision. A ``Tape`` owns one forward pass; ops are
tape methods so the reverse order is exactly the recording order and a
tape can be consumed by at most one backward pass. Leaf ``Tensor``s are
plain value holders; the op set is intentionally tiny (2-layer GCN/GIN
plus a cross-entropy head needs nothing more).
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import (
    EmptyIndexSet,
    NonFiniteValue,
    ShapeMismatch,
    TapeConsumed,
)


class Tensor:
    """Dense 2-D value with a gradient accumulator."""

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values.reshape(-1, 1)
        if self.values.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteValue("tensor constructed with NaN/Inf values")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g


class Tape:
    """Ordered record of primitive ops; single backward pass per forward."""

    def __init__(self):
        self._backward_fns = []
        self._consumed = False

    # -- plumbing -----------------------------------------------------

    def _emit(self, values, inputs, backward_fn) -> Tensor:
        out = Tensor(values)  # Tensor() raises on NaN/Inf
        if any(t.requires_grad for t in inputs):
            out.requires_grad = True
            self._backward_fns.append((out, backward_fn))
        return out

    def backward(self, loss: Tensor) -> None:
        """Seed d(loss)/d(loss)=1 and run the tape in reverse. The tape is
        consumed; build a fresh tape per forward pass."""
        if self._consumed:
            raise TapeConsumed("tape already backwarded")
        self._consumed = True
        if loss.shape != (1, 1):
            raise ShapeMismatch(f"backward expects a scalar loss, got {loss.shape}")
        loss._accumulate(np.ones((1, 1)))
        for out, fn in reversed(self._backward_fns):
            if out.grad is not None:
                fn(out.grad)

    # -- primitives ---------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"matmul {a.shape} x {b.shape}")
        av, bv = a.values, b.values

        def backward(g):
            if a.requires_grad:
                a._accumulate(g @ bv.T)
            if b.requires_grad:
                b._accumulate(av.T @ g)

        return self._emit(av @ bv, (a, b), backward)

    def sparse_matmul(self, a_csr: sp.csr_matrix, b: Tensor) -> Tensor:
        """Product with a constant sparse left operand (no gradient to it)."""
        if a_csr.shape[1] != b.shape[0]:
            raise ShapeMismatch(f"sparse_matmul {a_csr.shape} x {b.shape}")

        def backward(g):
            if b.requires_grad:
                b._accumulate(a_csr.T @ g)

        return self._emit(a_csr @ b.values, (b,), backward)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeMismatch(f"add {a.shape} + {b.shape}")

        def backward(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)

        return self._emit(a.values + b.values, (a, b), backward)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeMismatch(f"mul {a.shape} * {b.shape}")
        av, bv = a.values, b.values

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * bv)
            if b.requires_grad:
                b._accumulate(g * av)

        return self._emit(av * bv, (a, b), backward)

    def scale(self, a: Tensor, c: float) -> Tensor:
        def backward(g):
            if a.requires_grad:
                a._accumulate(g * c)

        return self._emit(a.values * c, (a,), backward)

    def relu(self, a: Tensor) -> Tensor:
        keep = a.values > 0

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * keep)

        return self._emit(np.where(keep, a.values, 0.0), (a,), backward)

    def pow_shift(self, a: Tensor, shift: float, exponent: float) -> Tensor:
        """Elementwise (a + shift) ** exponent; a + shift must stay positive."""
        base = a.values + shift
        if np.any(base <= 0):
            raise NonFiniteValue("pow_shift base must be positive")
        out = base ** exponent

        def backward(g):
            if a.requires_grad:
                a._accumulate(g * exponent * base ** (exponent - 1.0))

        return self._emit(out, (a,), backward)

    def row_scale(self, h: Tensor, s: Tensor) -> Tensor:
        """Scale row i of h by s[i]; s has shape (n, 1)."""
        if s.shape != (h.shape[0], 1):
            raise ShapeMismatch(f"row_scale h={h.shape} s={s.shape}")
        hv, sv = h.values, s.values

        def backward(g):
            if h.requires_grad:
                h._accumulate(g * sv)
            if s.requires_grad:
                s._accumulate((g * hv).sum(axis=1, keepdims=True))

        return self._emit(hv * sv, (h, s), backward)

    def edge_degree(self, edges: np.ndarray, num_nodes: int, edge_mask: Tensor) -> Tensor:
        """Soft degree: deg[u] = sum of mask values over edges incident to u.
        Shape (n, 1); each undirected edge counts at both endpoints."""
        if edge_mask.shape != (edges.shape[0], 1):
            raise ShapeMismatch(f"edge_degree mask shape {edge_mask.shape} for {edges.shape[0]} edges")
        u, v = edges[:, 0], edges[:, 1]
        m = edge_mask.values[:, 0]
        deg = np.bincount(u, weights=m, minlength=num_nodes) + np.bincount(
            v, weights=m, minlength=num_nodes
        )

        def backward(g):
            if edge_mask.requires_grad:
                gcol = g[:, 0]
                edge_mask._accumulate((gcol[u] + gcol[v]).reshape(-1, 1))

        return self._emit(deg.reshape(-1, 1), (edge_mask,), backward)

    def masked_spmm(self, edges: np.ndarray, num_nodes: int, edge_mask: Tensor, h: Tensor) -> Tensor:
        """(A ⊙ M) · h with each undirected edge contributing symmetrically
        with its mask value."""
        if edge_mask.shape != (edges.shape[0], 1):
            raise ShapeMismatch(f"masked_spmm mask shape {edge_mask.shape} for {edges.shape[0]} edges")
        if h.shape[0] != num_nodes:
            raise ShapeMismatch(f"masked_spmm h rows {h.shape[0]} != num_nodes {num_nodes}")
        u, v = edges[:, 0], edges[:, 1]
        m = edge_mask.values[:, 0]
        a = sp.coo_matrix(
            (np.concatenate([m, m]), (np.concatenate([u, v]), np.concatenate([v, u]))),
            shape=(num_nodes, num_nodes),
        ).tocsr()
        hv = h.values

        def backward(g):
            if edge_mask.requires_grad:
                dm = np.einsum("ij,ij->i", g[u], hv[v]) + np.einsum("ij,ij->i", g[v], hv[u])
                edge_mask._accumulate(dm.reshape(-1, 1))
            if h.requires_grad:
                h._accumulate(a @ g)  # A is symmetric

        return self._emit(a @ hv, (edge_mask, h), backward)

    def l1_sum(self, a: Tensor) -> Tensor:
        """Sum of |a| with the sign subgradient, sign(0)=0."""
        sgn = np.sign(a.values)

        def backward(g):
            if a.requires_grad:
                a._accumulate(g[0, 0] * sgn)

        return self._emit(np.array([[np.abs(a.values).sum()]]), (a,), backward)

    def softmax_cross_entropy(self, logits: Tensor, labels: np.ndarray, index_set: np.ndarray) -> Tensor:
        """Mean cross-entropy over the selected rows."""
        index_set = np.asarray(index_set, dtype=np.int64)
        if index_set.size == 0:
            raise EmptyIndexSet("cross-entropy over an empty index set")
        z = logits.values[index_set]
        y = np.asarray(labels, dtype=np.int64)[index_set]
        zmax = z.max(axis=1, keepdims=True)
        ez = np.exp(z - zmax)
        log_probs = (z - zmax) - np.log(ez.sum(axis=1, keepdims=True))
        loss = -log_probs[np.arange(len(y)), y].mean()
        softmax = ez / ez.sum(axis=1, keepdims=True)

        def backward(g):
            if logits.requires_grad:
                d = softmax.copy()
                d[np.arange(len(y)), y] -= 1.0
                full = np.zeros_like(logits.values)
                full[index_set] = d / len(y)
                logits._accumulate(g[0, 0] * full)

        return self._emit(np.array([[loss]]), (logits,), backward)
