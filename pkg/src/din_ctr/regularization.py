"""Mini-batch aware l2 regularization and the dropout / frequency-filter baselines.

Occurrence counts are kept per embedding table (id space): ``n_j`` is the
number of training samples in which row ``j`` of that table is used by any
group.  For tables owned by a single group this is the per-group count.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embedding import EmbeddingTable, SparseGradient
from .errors import UnknownFeatureOccurrence
from .features import USER_BEHAVIOR, FeatureSchema, InstanceSet


def _present_pairs(data: InstanceSet, vocab: str) -> tuple[np.ndarray, np.ndarray]:
    """Unique (row, id) pairs for every use of table ``vocab``."""
    schema = data.schema
    segs, ids = [], []
    for g, spec in enumerate(schema.groups):
        if spec.vocab == vocab:
            segs.append(data.segments(g))
            ids.append(data.indices[g])
    if not segs:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    seg = np.concatenate(segs)
    ix = np.concatenate(ids)
    card = schema.vocabularies()[vocab]
    key = np.unique(seg * card + ix)
    return key // card, key % card


@dataclass
class OccurrenceCounts:
    """``counts[vocab][j]`` = n_j; zero means the id never occurs."""

    counts: dict[str, np.ndarray]

    def get(self, vocab: str, j: int) -> int:
        return int(self.counts[vocab][j])

    def as_dict(self, vocab: str) -> dict[int, int]:
        c = self.counts[vocab]
        nz = np.flatnonzero(c)
        return {int(j): int(c[j]) for j in nz}

    def to_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for vocab, c in self.counts.items():
                for j in np.flatnonzero(c):
                    fh.write(f"{vocab}\t{j}\t{c[j]}\n")

    @classmethod
    def from_tsv(cls, path, schema: FeatureSchema) -> "OccurrenceCounts":
        counts = {v: np.zeros(k, dtype=np.int64) for v, k in schema.vocabularies().items()}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    vocab, j, n = line.rstrip("\n").split("\t")
                    counts[vocab][int(j)] = int(n)
        return cls(counts)


def count_occurrences(data: InstanceSet) -> OccurrenceCounts:
    if len(data) == 0:
        raise ValueError("cannot count occurrences over an empty training set")
    counts = {}
    for vocab, card in data.schema.vocabularies().items():
        _, ids = _present_pairs(data, vocab)
        counts[vocab] = np.bincount(ids, minlength=card).astype(np.int64)
    return OccurrenceCounts(counts)


def mba_batch_indicator(batch: InstanceSet, vocab: str) -> np.ndarray:
    """Sorted ids ``j`` with alpha_mj = 1 (used by at least one batch instance)."""
    ids = [batch.indices[g] for g, s in enumerate(batch.schema.groups) if s.vocab == vocab]
    if not ids:
        return np.zeros(0, np.int64)
    return np.unique(np.concatenate(ids))


def mba_gradient_terms(batch: InstanceSet, counts: OccurrenceCounts, lam: float,
                       tables: dict[str, EmbeddingTable]) -> dict[str, SparseGradient]:
    """Penalty gradient ``lam * alpha_mj / n_j * w_j`` for batch-present rows."""
    out = {}
    for vocab, table in tables.items():
        present = mba_batch_indicator(batch, vocab)
        n = counts.counts[vocab][present]
        if np.any(n == 0):
            bad = present[n == 0][:5].tolist()
            raise UnknownFeatureOccurrence(f"{vocab}: ids without training counts {bad}")
        scale = (lam / n.astype(np.float64))[:, None]
        values = (scale * table.rows[present]).astype(table.rows.dtype)
        out[vocab] = SparseGradient(vocab, present, values)
    return out


def exact_l2_oracle(data: InstanceSet, counts: OccurrenceCounts, tables: dict[str, EmbeddingTable],
                    batches: Sequence[np.ndarray] | None = None) -> float:
    """The l2 norm of the embedding dictionary expanded over samples.

    With ``batches`` (row index arrays partitioning ``data``) the sum is taken
    batch by batch; both orders give the same value.
    """
    parts = [np.arange(len(data))] if batches is None else list(batches)
    total = 0.0
    for rows in parts:
        sub = data.take(rows)
        for vocab, table in tables.items():
            _, ids = _present_pairs(sub, vocab)
            if ids.size == 0:
                continue
            sq = np.sum(table.rows[ids].astype(np.float64) ** 2, axis=1)
            total += float(np.sum(sq / counts.counts[vocab][ids]))
    return total


def mba_penalty(data: InstanceSet, counts: OccurrenceCounts, tables: dict[str, EmbeddingTable],
                batches: Sequence[np.ndarray]) -> float:
    """Mini-batch aware approximation: sum over batches of alpha_mj / n_j * |w_j|^2."""
    total = 0.0
    for rows in batches:
        sub = data.take(rows)
        for vocab, table in tables.items():
            present = mba_batch_indicator(sub, vocab)
            if present.size == 0:
                continue
            sq = np.sum(table.rows[present].astype(np.float64) ** 2, axis=1)
            total += float(np.sum(sq / counts.counts[vocab][present]))
    return total


def _behavior_groups(schema: FeatureSchema) -> list[int]:
    return [g for g, s in enumerate(schema.groups) if s.category == USER_BEHAVIOR and s.multi_hot]


def _mask_group(data: InstanceSet, g: int, keep: np.ndarray) -> InstanceSet:
    seg = data.segments(g)
    lens = np.bincount(seg[keep], minlength=len(data))
    ptr = np.zeros(len(data) + 1, dtype=np.int64)
    np.cumsum(lens, out=ptr[1:])
    return data.with_group(g, ptr, data.indices[g][keep])


def dropout_ids(data, rate: float = 0.5, rng=None):
    """Drop each behavior id independently with probability ``rate``.

    Accepts an :class:`InstanceSet` or a single instance together with its
    schema as ``(instance, schema)``.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    if isinstance(data, tuple):
        inst, schema = data
        out = dropout_ids(InstanceSet.from_instances(schema, [inst]), rate, rng)
        return out[0]
    for g in _behavior_groups(data.schema):
        keep = rng.random(len(data.indices[g])) >= rate
        data = _mask_group(data, g, keep)
    return data


def frequency_filter(counts: OccurrenceCounts, top_n: int, vocab: str) -> np.ndarray:
    """The ``top_n`` most frequent ids of ``vocab`` (ties to the smaller id), sorted."""
    if top_n < 1:
        raise ValueError("top_n must be >= 1")
    c = counts.counts[vocab]
    order = np.lexsort((np.arange(len(c)), -c))
    return np.sort(order[:top_n])


def apply_filter(data: InstanceSet, keep: dict[str, np.ndarray]) -> InstanceSet:
    """Remove behavior ids outside the keep-set of their id space."""
    for g in _behavior_groups(data.schema):
        vocab = data.schema.groups[g].vocab
        if vocab in keep:
            data = _mask_group(data, g, np.isin(data.indices[g], keep[vocab]))
    return data
