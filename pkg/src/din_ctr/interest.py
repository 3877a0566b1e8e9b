"""Pooling of behavior embeddings: fixed sum/average and the local activation unit."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .activation import PRELU, make_activation
from .errors import WidthMismatch

UNIT_HIDDEN = 36


def segment_sum(values: np.ndarray, indptr: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Row sums of ``values`` grouped by CSR ``indptr``; empty segments give zeros."""
    n_rows = len(indptr) - 1
    nnz = values.shape[0]
    data = np.ones(nnz, dtype=values.dtype) if weights is None else weights.astype(values.dtype, copy=False)
    mat = sp.csr_matrix((data, np.arange(nnz), indptr), shape=(n_rows, nnz))
    return np.asarray(mat @ values, dtype=values.dtype)


def fixed_pool(vectors, mode: str = "sum", dim: int | None = None) -> np.ndarray:
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    if not vectors:
        if dim is None:
            raise ValueError("dim is required to pool an empty list")
        return np.zeros(dim)
    widths = {v.shape for v in vectors}
    if len(widths) != 1 or (dim is not None and vectors[0].shape != (dim,)):
        raise WidthMismatch("pooled vectors must share one width")
    stacked = np.stack(vectors)
    if mode == "sum":
        return stacked.sum(axis=0)
    if mode == "average":
        return stacked.mean(axis=0)
    raise ValueError(f"unknown pooling mode {mode!r}")


def unit_input(E: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Rows ``[e, vec(outer(e, q)), q]``, the outer product flattened row-major."""
    n, d = E.shape
    outer = (E[:, :, None] * Q[:, None, :]).reshape(n, d * d)
    return np.concatenate([E, outer, Q], axis=1)


class ActivationUnit:
    """Feed-forward scorer ``a(e, v_A)``: one hidden layer and a linear scalar output."""

    def __init__(self, dim: int, hidden_width: int = UNIT_HIDDEN, activation: str = PRELU,
                 rng=None, dtype=np.float64):
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.dim = dim
        n_in = 2 * dim + dim * dim
        b1 = np.sqrt(6.0 / (n_in + hidden_width))
        b2 = np.sqrt(6.0 / (hidden_width + 1))
        self.w1 = rng.uniform(-b1, b1, size=(n_in, hidden_width)).astype(dtype)
        self.b1 = np.zeros(hidden_width, dtype=dtype)
        self.act = make_activation(activation, hidden_width, dtype=dtype)
        self.w2 = rng.uniform(-b2, b2, size=(hidden_width, 1)).astype(dtype)
        self.b2 = np.zeros(1, dtype=dtype)

    @property
    def input_width(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_width(self) -> int:
        return self.w1.shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        out = {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}
        out.update({f"act.{k}": v for k, v in self.act.parameters().items()})
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"act.{k}": v for k, v in self.act.buffers().items()}

    def make_constant(self, value: float = 1.0) -> "ActivationUnit":
        """Zero the output weights so every behavior gets weight ``value``."""
        self.w2[...] = 0
        self.b2[...] = value
        return self

    def forward(self, E: np.ndarray, Q: np.ndarray, training: bool = False, stats=None):
        if E.shape != Q.shape or E.shape[1] != self.dim:
            raise WidthMismatch(f"unit expects ({self.dim},)-wide behavior and ad vectors")
        X = unit_input(E, Q)
        h = X @ self.w1 + self.b1
        a, act_cache = self.act.forward(h, training=training, stats=stats)
        w = (a @ self.w2)[:, 0] + self.b2[0]
        return w, {"E": E, "Q": Q, "X": X, "a": a, "act": act_cache}

    def backward(self, cache, dw: np.ndarray):
        E, Q, X, a = cache["E"], cache["Q"], cache["X"], cache["a"]
        d = self.dim
        grads = {
            "w2": a.T @ dw[:, None],
            "b2": np.array([dw.sum()], dtype=self.b2.dtype),
        }
        da = dw[:, None] * self.w2[:, 0][None, :]
        dh, act_grads = self.act.backward(cache["act"], da)
        grads["w1"] = X.T @ dh
        grads["b1"] = dh.sum(axis=0)
        grads.update({f"act.{k}": v for k, v in act_grads.items()})
        dX = dh @ self.w1.T
        douter = dX[:, d:d + d * d].reshape(-1, d, d)
        dE = dX[:, :d] + np.einsum("nab,nb->na", douter, Q)
        dQ = dX[:, d + d * d:] + np.einsum("nab,na->nb", douter, E)
        return dE, dQ, grads


@dataclass
class PooledInterest:
    vector: np.ndarray
    weights: np.ndarray | None = None


def _as_rows(behaviors, dim):
    rows = np.asarray(behaviors, dtype=np.float64).reshape(-1, dim) if len(behaviors) else np.zeros((0, dim))
    return rows


def activation_weight(e_j, v_A, unit: ActivationUnit, training: bool = False) -> float:
    e = np.asarray(e_j, dtype=np.float64).reshape(1, -1)
    q = np.asarray(v_A, dtype=np.float64).reshape(1, -1)
    if e.shape != q.shape:
        raise WidthMismatch("behavior and ad vectors differ in width")
    w, _ = unit.forward(e, q, training=training)
    return float(w[0])


def adaptive_pool(behaviors, v_A, unit: ActivationUnit, training: bool = False) -> PooledInterest:
    """Weighted sum of behaviors with unnormalised unit outputs as weights."""
    v_A = np.asarray(v_A, dtype=np.float64)
    dim = v_A.shape[0]
    E = _as_rows(behaviors, dim)
    if E.shape[0] == 0:
        return PooledInterest(np.zeros(dim), np.zeros(0))
    w, _ = unit.forward(E, np.broadcast_to(v_A, E.shape).copy(), training=training)
    return PooledInterest((w[:, None] * E).sum(axis=0), w)


def adaptive_pool_backward(behaviors, v_A, unit: ActivationUnit, upstream, stats=None):
    """Gradients of ``upstream . adaptive_pool(...)`` w.r.t. behaviors, v_A and unit params.

    Uses inference-mode activation moments unless ``stats`` pins them.
    """
    v_A = np.asarray(v_A, dtype=np.float64)
    dim = v_A.shape[0]
    upstream = np.asarray(upstream, dtype=np.float64)
    E = _as_rows(behaviors, dim)
    if E.shape[0] == 0:
        zeros = {k: np.zeros_like(v) for k, v in unit.parameters().items()}
        return np.zeros((0, dim)), np.zeros(dim), zeros
    Q = np.broadcast_to(v_A, E.shape).copy()
    w, cache = unit.forward(E, Q, training=False, stats=stats)
    dw = E @ upstream
    dE_unit, dQ, grads = unit.backward(cache, dw)
    dE = w[:, None] * upstream[None, :] + dE_unit
    return dE, dQ.sum(axis=0), grads


ATTENTION_HEADER = ["user_key", "candidate_id", "behavior_index", "behavior_id", "weight"]


def write_attention_csv(rows, path) -> int:
    """``rows`` yields (user_key, candidate_id, behavior_index, behavior_id, weight).

    ``path`` may also be an open text stream.
    """
    fh = path if hasattr(path, "write") else open(path, "w", newline="", encoding="utf-8")
    n = 0
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ATTENTION_HEADER)
        for user_key, cand, idx, bid, weight in rows:
            writer.writerow([user_key, int(cand), int(idx), int(bid), repr(float(weight))])
            n += 1
    finally:
        if fh is not path:
            fh.close()
    return n
