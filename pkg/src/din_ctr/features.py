"""Group-wise categorical feature space and sparse instance encoding.

An instance is a list of feature groups; each group holds the integer ids
that are switched on in that group's binary vector.  One-hot groups carry
exactly one id, multi-hot groups carry a (possibly empty) sorted set.

Instances are kept one-by-one as :class:`Instance` for convenience and in
bulk as :class:`InstanceSet`, a per-group CSR layout that the models and the
training loop consume directly.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    DataFormatError,
    DuplicateGroupName,
    IdOutOfRange,
    InvalidCardinality,
    MissingGroupCategory,
    OneHotArity,
    SchemaError,
)

ONE_HOT = "one-hot"
MULTI_HOT = "multi-hot"
ENCODINGS = (ONE_HOT, MULTI_HOT)

USER_PROFILE = "user-profile"
USER_BEHAVIOR = "user-behavior"
AD = "ad"
CONTEXT = "context"
CATEGORIES = (USER_PROFILE, USER_BEHAVIOR, AD, CONTEXT)

DEFAULT_MAX_IDS = 100
EMPTY_LIST = "-"


@dataclass(frozen=True)
class FeatureGroupSpec:
    """One feature group.

    ``vocab`` names the id space; groups with the same vocab share one
    embedding table (e.g. the ad's goods_id and the user's visited goods).
    It defaults to the group name.
    """

    name: str
    cardinality: int
    encoding: str = ONE_HOT
    category: str = CONTEXT
    max_ids_per_instance: int = 1
    vocab: str | None = None

    def __post_init__(self):
        if self.encoding not in ENCODINGS:
            raise SchemaError(f"group {self.name!r}: unknown encoding {self.encoding!r}")
        if self.category not in CATEGORIES:
            raise SchemaError(f"group {self.name!r}: unknown category {self.category!r}")
        if int(self.cardinality) < 1:
            raise InvalidCardinality(f"group {self.name!r}: cardinality must be >= 1")
        if int(self.max_ids_per_instance) < 1:
            raise SchemaError(f"group {self.name!r}: max_ids_per_instance must be >= 1")
        if self.vocab is None:
            object.__setattr__(self, "vocab", self.name)

    @property
    def multi_hot(self) -> bool:
        return self.encoding == MULTI_HOT


@dataclass(frozen=True)
class FeatureSchema:
    groups: tuple[FeatureGroupSpec, ...]
    total_dimensionality: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(
            self, "total_dimensionality", sum(g.cardinality for g in self.groups)
        )

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def names(self) -> list[str]:
        return [g.name for g in self.groups]

    def index(self, name: str) -> int:
        for i, g in enumerate(self.groups):
            if g.name == name:
                return i
        raise KeyError(name)

    def __getitem__(self, name: str) -> FeatureGroupSpec:
        return self.groups[self.index(name)]

    def vocabularies(self) -> dict[str, int]:
        """Id space name -> cardinality, in first-appearance order."""
        out: dict[str, int] = {}
        for g in self.groups:
            out.setdefault(g.vocab, g.cardinality)
        return out

    def paired_ad_group(self, behavior: str) -> int | None:
        """Index of the one-hot ad group sharing the behavior group's id space."""
        vocab = self[behavior].vocab
        for i, g in enumerate(self.groups):
            if g.category == AD and g.vocab == vocab and not g.multi_hot:
                return i
        return None

    def to_tsv(self) -> str:
        lines = []
        for g in self.groups:
            cols = [g.name, str(g.cardinality), g.encoding, g.category,
                    str(g.max_ids_per_instance)]
            if g.vocab != g.name:
                cols.append(g.vocab)
            lines.append("\t".join(cols))
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_tsv().encode()).hexdigest()


def build_schema(specs: Sequence[FeatureGroupSpec]) -> FeatureSchema:
    if not specs:
        raise SchemaError("schema needs at least one group")
    seen: set[str] = set()
    for s in specs:
        if s.name in seen:
            raise DuplicateGroupName(s.name)
        seen.add(s.name)
    cats = {s.category for s in specs}
    if USER_BEHAVIOR not in cats or AD not in cats:
        raise MissingGroupCategory("schema needs a user-behavior group and an ad group")
    by_vocab: dict[str, int] = {}
    for s in specs:
        if by_vocab.setdefault(s.vocab, s.cardinality) != s.cardinality:
            raise SchemaError(f"groups sharing vocab {s.vocab!r} disagree on cardinality")
    return FeatureSchema(tuple(specs))


def dense_dimensionality(schema: FeatureSchema, embedding_dim: int) -> int:
    """Width of the concatenated vector fed to the MLP: one slot per group."""
    if embedding_dim < 1:
        raise ValueError("embedding_dim must be >= 1")
    return schema.n_groups * embedding_dim


@dataclass(frozen=True)
class Instance:
    ids: tuple[tuple[int, ...], ...]
    label: int
    user_key: str = ""

    @property
    def nnz(self) -> int:
        return sum(len(g) for g in self.ids)


def _encode_group(spec: FeatureGroupSpec, raw) -> tuple[int, ...]:
    raw = [int(v) for v in raw]
    for v in raw:
        if not 0 <= v < spec.cardinality:
            raise IdOutOfRange(f"group {spec.name!r}: id {v} not in [0, {spec.cardinality})")
    if not spec.multi_hot:
        if len(raw) != 1:
            raise OneHotArity(f"group {spec.name!r}: one-hot group got {len(raw)} ids")
        return (raw[0],)
    # raw lists are chronological: keep the most recent distinct ids
    kept: list[int] = []
    seen: set[int] = set()
    for v in reversed(raw):
        if v not in seen:
            seen.add(v)
            kept.append(v)
            if len(kept) == spec.max_ids_per_instance:
                break
    return tuple(sorted(kept))


def encode_instance(raw: Sequence[Sequence[int]], label: int, user_key, schema: FeatureSchema) -> Instance:
    if len(raw) != schema.n_groups:
        raise SchemaError(f"expected {schema.n_groups} groups, got {len(raw)}")
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    ids = tuple(_encode_group(spec, r) for spec, r in zip(schema.groups, raw))
    return Instance(ids, int(label), str(user_key))


def validate_instance(inst: Instance, schema: FeatureSchema) -> None:
    if len(inst.ids) != schema.n_groups:
        raise SchemaError("group count mismatch")
    for spec, ids in zip(schema.groups, inst.ids):
        if any(not 0 <= j < spec.cardinality for j in ids):
            raise IdOutOfRange(spec.name)
        if not spec.multi_hot and len(ids) != 1:
            raise OneHotArity(spec.name)
        if spec.multi_hot and (list(ids) != sorted(set(ids)) or len(ids) > spec.max_ids_per_instance):
            raise SchemaError(f"group {spec.name!r}: ids must be distinct, sorted and capped")
    if inst.label not in (0, 1):
        raise ValueError("label must be binary")


def _gather_csr(indptr: np.ndarray, indices: np.ndarray, rows: np.ndarray):
    lengths = indptr[1:] - indptr[:-1]
    new_len = lengths[rows]
    new_indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(new_len, out=new_indptr[1:])
    total = int(new_indptr[-1])
    if total == 0:
        return new_indptr, np.zeros(0, dtype=indices.dtype)
    starts = np.repeat(indptr[:-1][rows], new_len)
    offsets = np.arange(total, dtype=np.int64) - np.repeat(new_indptr[:-1], new_len)
    return new_indptr, indices[starts + offsets]


class InstanceSet:
    """Column-oriented collection of instances (one CSR pair per group)."""

    def __init__(self, schema: FeatureSchema, indptr, indices, labels, user_keys):
        self.schema = schema
        self.indptr = [np.asarray(p, dtype=np.int64) for p in indptr]
        self.indices = [np.asarray(ix, dtype=np.int64) for ix in indices]
        self.labels = np.asarray(labels, dtype=np.int8)
        self.user_keys = np.asarray(user_keys, dtype=object)
        n = len(self.labels)
        if len(self.user_keys) != n or any(len(p) != n + 1 for p in self.indptr):
            raise ValueError("inconsistent InstanceSet columns")

    @classmethod
    def from_instances(cls, schema: FeatureSchema, instances: Iterable[Instance]) -> "InstanceSet":
        instances = list(instances)
        indptr, indices = [], []
        for g in range(schema.n_groups):
            lens = np.fromiter((len(i.ids[g]) for i in instances), dtype=np.int64, count=len(instances))
            p = np.zeros(len(instances) + 1, dtype=np.int64)
            np.cumsum(lens, out=p[1:])
            flat = np.fromiter((j for i in instances for j in i.ids[g]), dtype=np.int64, count=int(p[-1]))
            indptr.append(p)
            indices.append(flat)
        labels = [i.label for i in instances]
        keys = [i.user_key for i in instances]
        return cls(schema, indptr, indices, labels, keys)

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, rows) -> "InstanceSet":
        rows = np.asarray(rows, dtype=np.int64)
        indptr, indices = [], []
        for p, ix in zip(self.indptr, self.indices):
            np_, ni = _gather_csr(p, ix, rows)
            indptr.append(np_)
            indices.append(ni)
        return InstanceSet(self.schema, indptr, indices, self.labels[rows], self.user_keys[rows])

    def group_ids(self, g: int, row: int) -> np.ndarray:
        return self.indices[g][self.indptr[g][row]:self.indptr[g][row + 1]]

    def lengths(self, g: int) -> np.ndarray:
        return np.diff(self.indptr[g])

    def segments(self, g: int) -> np.ndarray:
        """Row index of every stored id in group ``g``."""
        return np.repeat(np.arange(len(self), dtype=np.int64), self.lengths(g))

    def __getitem__(self, row: int) -> Instance:
        ids = tuple(tuple(int(v) for v in self.group_ids(g, row)) for g in range(self.schema.n_groups))
        return Instance(ids, int(self.labels[row]), str(self.user_keys[row]))

    def __iter__(self) -> Iterator[Instance]:
        for r in range(len(self)):
            yield self[r]

    def with_group(self, g: int, indptr, indices) -> "InstanceSet":
        ptrs = list(self.indptr)
        idx = list(self.indices)
        ptrs[g], idx[g] = np.asarray(indptr, np.int64), np.asarray(indices, np.int64)
        return InstanceSet(self.schema, ptrs, idx, self.labels, self.user_keys)

    @staticmethod
    def concatenate(parts: Sequence["InstanceSet"]) -> "InstanceSet":
        schema = parts[0].schema
        indptr, indices = [], []
        for g in range(schema.n_groups):
            lens = np.concatenate([p.lengths(g) for p in parts])
            ptr = np.zeros(len(lens) + 1, dtype=np.int64)
            np.cumsum(lens, out=ptr[1:])
            indptr.append(ptr)
            indices.append(np.concatenate([p.indices[g] for p in parts]))
        return InstanceSet(
            schema, indptr, indices,
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.user_keys for p in parts]),
        )


# --- file formats ---------------------------------------------------------

def parse_schema(text: str, source="<schema>") -> FeatureSchema:
    """Schema from its TSV form: name, cardinality, encoding, category, max_ids[, vocab]."""
    specs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) not in (5, 6):
            raise DataFormatError(source, lineno, "expected 5 or 6 tab-separated columns")
        try:
            specs.append(FeatureGroupSpec(
                name=cols[0], cardinality=int(cols[1]), encoding=cols[2],
                category=cols[3], max_ids_per_instance=int(cols[4]),
                vocab=cols[5] if len(cols) == 6 else None,
            ))
        except ValueError as exc:
            raise DataFormatError(source, lineno, str(exc)) from exc
    return build_schema(specs)


def read_schema(path) -> FeatureSchema:
    return parse_schema(Path(path).read_text(encoding="utf-8"), path)


def write_schema(schema: FeatureSchema, path) -> None:
    Path(path).write_text(schema.to_tsv(), encoding="utf-8")


def _format_ids(ids) -> str:
    if len(ids) == 0:
        return EMPTY_LIST
    return ",".join(str(int(v)) for v in ids)


def write_instances(data: InstanceSet, path) -> None:
    n_groups = data.schema.n_groups
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in range(len(data)):
            cols = [str(data.user_keys[r]), str(int(data.labels[r]))]
            cols.extend(_format_ids(data.group_ids(g, r)) for g in range(n_groups))
            fh.write("\t".join(cols) + "\n")


def read_instances(path, schema: FeatureSchema, validate: bool = True) -> InstanceSet:
    n_groups = schema.n_groups
    keys, labels = [], []
    lens = [[] for _ in range(n_groups)]
    flat = [[] for _ in range(n_groups)]
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            cols = line.rstrip("\n").split("\t")
            if len(cols) != n_groups + 2:
                raise DataFormatError(path, lineno, f"expected {n_groups + 2} columns, got {len(cols)}")
            keys.append(cols[0])
            if cols[1] not in ("0", "1"):
                raise DataFormatError(path, lineno, f"bad label {cols[1]!r}")
            labels.append(int(cols[1]))
            for g in range(n_groups):
                field_ = cols[2 + g]
                if field_ == EMPTY_LIST:
                    lens[g].append(0)
                    continue
                try:
                    ids = [int(v) for v in field_.split(",")]
                except ValueError as exc:
                    raise DataFormatError(path, lineno, str(exc)) from exc
                lens[g].append(len(ids))
                flat[g].extend(ids)
    indptr = []
    for g in range(n_groups):
        p = np.zeros(len(labels) + 1, dtype=np.int64)
        np.cumsum(np.asarray(lens[g], dtype=np.int64), out=p[1:])
        indptr.append(p)
    data = InstanceSet(schema, indptr, [np.asarray(f, dtype=np.int64) for f in flat], labels, keys)
    if validate:
        check_instance_set(data, schema)
    return data


def check_instance_set(data: InstanceSet, schema: FeatureSchema | None = None) -> InstanceSet:
    """Vectorised form of the Instance invariants; returns ``data``."""
    schema = schema or data.schema
    if data.schema.n_groups != schema.n_groups:
        raise SchemaError("instance set does not match schema")
    for g, spec in enumerate(schema.groups):
        ix, lens = data.indices[g], data.lengths(g)
        if ix.size and (ix.min() < 0 or ix.max() >= spec.cardinality):
            raise IdOutOfRange(spec.name)
        if not spec.multi_hot:
            if np.any(lens != 1):
                raise OneHotArity(spec.name)
            continue
        if np.any(lens > spec.max_ids_per_instance):
            raise SchemaError(f"group {spec.name!r}: more than max_ids_per_instance ids")
        if ix.size > 1:
            same_row = np.diff(data.segments(g)) == 0
            if np.any(np.diff(ix)[same_row] <= 0):
                raise SchemaError(f"group {spec.name!r}: ids must be distinct and sorted")
    if np.any((data.labels != 0) & (data.labels != 1)):
        raise ValueError("labels must be binary")
    return data
