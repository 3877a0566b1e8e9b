"""Embedding dictionaries with table lookup and row-sparse updates."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import IdOutOfRange, NonFiniteGradient


@dataclass
class EmbeddingTable:
    name: str
    rows: np.ndarray  # (cardinality, dim)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    @property
    def cardinality(self) -> int:
        return self.rows.shape[0]


def init_table(name: str, cardinality: int, dim: int, seed, dtype=np.float32) -> EmbeddingTable:
    """Rows i.i.d. uniform on [-1/sqrt(dim), 1/sqrt(dim)]."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(dim)
    rows = rng.uniform(-bound, bound, size=(cardinality, dim)).astype(dtype)
    # rounding to a narrower dtype must not leave the interval
    b = dtype(bound)
    if b > bound:
        b = np.nextafter(b, dtype(0))
    np.clip(rows, -b, b, out=rows)
    return EmbeddingTable(name, rows)


def lookup(table: EmbeddingTable, ids) -> np.ndarray:
    """Rows for ``ids`` in the given order; shape (len(ids), dim)."""
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= table.cardinality):
        raise IdOutOfRange(f"table {table.name!r}")
    return table.rows[ids]


@dataclass
class SparseGradient:
    """Gradient rows for a subset of table ids. ``ids`` are unique."""

    table: str
    ids: np.ndarray
    values: np.ndarray

    @classmethod
    def empty(cls, table: str, dim: int, dtype=np.float64) -> "SparseGradient":
        return cls(table, np.zeros(0, dtype=np.int64), np.zeros((0, dim), dtype=dtype))

    @classmethod
    def accumulate(cls, table: str, ids, values, dim: int) -> "SparseGradient":
        """Sum rows that share an id."""
        ids = np.asarray(ids, dtype=np.int64)
        values = np.asarray(values).reshape(len(ids), dim)
        if ids.size == 0:
            return cls.empty(table, dim, values.dtype)
        uniq, inverse = np.unique(ids, return_inverse=True)
        out = np.zeros((len(uniq), dim), dtype=values.dtype)
        np.add.at(out, inverse, values)
        return cls(table, uniq, out)

    @property
    def entries(self) -> dict[int, np.ndarray]:
        return {int(j): v for j, v in zip(self.ids, self.values)}

    def __add__(self, other: "SparseGradient") -> "SparseGradient":
        ids = np.concatenate([self.ids, other.ids])
        vals = np.concatenate([self.values, other.values])
        return SparseGradient.accumulate(self.table, ids, vals, self.values.shape[1])

    def check_finite(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteGradient(self.table)


StepRule = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def sgd_rule(lr: float) -> StepRule:
    def step(rows, grad, ids):
        return rows - lr * grad
    return step


def apply_sparse_update(table: EmbeddingTable, grad: SparseGradient, step_rule: StepRule) -> EmbeddingTable:
    """Update only the rows named in ``grad``; every other row is untouched.

    ``step_rule(rows, grad_rows, ids)`` returns the new values of the rows.
    The table is modified in place and returned.
    """
    grad.check_finite()
    if grad.ids.size == 0:
        return table
    if grad.ids.min() < 0 or grad.ids.max() >= table.cardinality:
        raise IdOutOfRange(f"table {table.name!r}")
    new = step_rule(table.rows[grad.ids], grad.values, grad.ids)
    table.rows[grad.ids] = new
    return table
