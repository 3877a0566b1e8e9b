"""Mini-batch training: SGD with per-epoch exponential decay, lazy Adam, regularizer hooks."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .embedding import SparseGradient, apply_sparse_update, sgd_rule
from .errors import UndefinedMetric
from .features import USER_BEHAVIOR, InstanceSet
from .metrics import auc, weighted_auc
from .model import Gradients, Network, nll_loss
from .regularization import (
    OccurrenceCounts,
    apply_filter,
    count_occurrences,
    dropout_ids,
    frequency_filter,
    mba_gradient_terms,
)

log = logging.getLogger(__name__)

SGD = "sgd"
ADAM = "adam"
REG_KINDS = ("none", "dropout", "filter", "mba")


@dataclass
class OptimizerConfig:
    kind: str = SGD
    initial_lr: float = 1.0
    decay_rate: float = 0.1
    batch_size: int = 32
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in (SGD, ADAM):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.initial_lr > 0:
            raise ValueError("initial_lr must be positive")
        if not 0 < self.decay_rate <= 1:
            raise ValueError("decay_rate must lie in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class RegularizerConfig:
    kind: str = "none"
    lam: float = 0.0
    dropout_rate: float = 0.5
    filter_top_n: int | None = None

    def __post_init__(self):
        if self.kind not in REG_KINDS:
            raise ValueError(f"unknown regularizer {self.kind!r}")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lambda must be finite and non-negative")
        if self.kind == "filter" and not self.filter_top_n:
            raise ValueError("filter regularizer needs filter_top_n")


class _SparseSlots:
    """Adam moments for embedding rows, allocated on first touch."""

    def __init__(self, cardinality: int, dim: int, dtype):
        self.slot_of = np.full(cardinality, -1, dtype=np.int64)
        self.m = np.zeros((0, dim), dtype=dtype)
        self.v = np.zeros((0, dim), dtype=dtype)

    @property
    def allocated(self) -> int:
        return int(np.count_nonzero(self.slot_of >= 0))

    def slots(self, ids: np.ndarray) -> np.ndarray:
        new = ids[self.slot_of[ids] < 0]
        if new.size:
            start = self.allocated
            self.slot_of[new] = np.arange(start, start + new.size)
            need = start + new.size
            if need > len(self.m):
                cap = max(need, 2 * len(self.m), 64)
                for name in ("m", "v"):
                    old = getattr(self, name)
                    grown = np.zeros((cap, old.shape[1]), dtype=old.dtype)
                    grown[:len(old)] = old
                    setattr(self, name, grown)
        return self.slot_of[ids]


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, net: Network, grads: Gradients) -> None:
        lr = net.dtype(self.lr)
        for name, p in net.parameters().items():
            p -= lr * grads.dense[name]
        for vocab, table in net.tables.items():
            apply_sparse_update(table, grads.sparse[vocab], sgd_rule(lr))


class Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.dense: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.sparse: dict[str, _SparseSlots] = {}

    def step(self, net: Network, grads: Gradients) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        step = self.lr * math.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        dt = net.dtype
        for name, p in net.parameters().items():
            g = grads.dense[name]
            if name not in self.dense:
                self.dense[name] = (np.zeros_like(p), np.zeros_like(p))
            m, v = self.dense[name]
            m *= dt(b1)
            m += dt(1 - b1) * g
            v *= dt(b2)
            v += dt(1 - b2) * g * g
            p -= dt(step) * m / (np.sqrt(v) + dt(self.eps))
        for vocab, table in net.tables.items():
            sg = grads.sparse[vocab]
            if sg.ids.size == 0:
                continue
            slots = self.sparse.setdefault(vocab, _SparseSlots(table.cardinality, table.dim, dt))

            def rule(rows, g, ids, slots=slots):
                k = slots.slots(ids)
                m = dt(b1) * slots.m[k] + dt(1 - b1) * g
                v = dt(b2) * slots.v[k] + dt(1 - b2) * g * g
                slots.m[k], slots.v[k] = m, v
                return rows - dt(step) * m / (np.sqrt(v) + dt(self.eps))

            apply_sparse_update(table, sg, rule)


@dataclass
class TrainState:
    config: OptimizerConfig
    optimizer: Sgd | Adam
    seed: int = 0
    epoch: int = 0
    step: int = 0

    @classmethod
    def create(cls, config: OptimizerConfig, seed: int = 0) -> "TrainState":
        if config.kind == SGD:
            opt = Sgd(config.initial_lr)
        else:
            opt = Adam(config.initial_lr, config.adam_beta1, config.adam_beta2, config.adam_eps)
        return cls(config, opt, seed)

    @property
    def lr(self) -> float:
        return self.optimizer.lr


def decay_lr(state: TrainState) -> TrainState:
    """Advance one epoch: lr = initial_lr * decay_rate ** epoch."""
    state.epoch += 1
    state.optimizer.lr = state.config.initial_lr * state.config.decay_rate ** state.epoch
    return state


def make_batches(n: int | InstanceSet, batch_size: int, seed=0, shuffle: bool = True) -> list[np.ndarray]:
    """Row-index arrays B_1..B_B; the last one may be short."""
    n = len(n) if isinstance(n, InstanceSet) else int(n)
    if n < 1:
        raise ValueError("cannot batch an empty dataset")
    order = np.arange(n)
    if shuffle:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _add_penalty(grads: Gradients, extra: dict[str, SparseGradient]) -> None:
    for vocab, pen in extra.items():
        g = grads.sparse[vocab]
        if pen.ids.size == 0:
            continue
        if np.array_equal(g.ids, pen.ids):
            grads.sparse[vocab] = SparseGradient(vocab, g.ids, g.values + pen.values)
        else:
            grads.sparse[vocab] = g + pen


def train_step(net: Network, batch: InstanceSet, state: TrainState,
               reg: RegularizerConfig | None = None, counts: OccurrenceCounts | None = None,
               rng=None) -> float:
    """One update on ``batch``; returns the batch loss before the update."""
    reg = reg or RegularizerConfig()
    if reg.kind == "dropout":
        batch = dropout_ids(batch, reg.dropout_rate, rng)
    p, cache = net.forward(batch, training=True)
    loss = nll_loss(p, batch.labels)
    grads = net.backward(cache, batch.labels)
    if reg.kind == "mba" and reg.lam > 0:
        if counts is None:
            raise ValueError("mini-batch aware regularization needs occurrence counts")
        _add_penalty(grads, mba_gradient_terms(batch, counts, reg.lam, net.tables))
    grads.check_finite()
    state.optimizer.step(net, grads)
    state.step += 1
    return loss


@dataclass
class EpochReport:
    epoch: int
    train_loss: float
    test_auc: float | None
    test_wauc: float | None
    lr: float

    def to_json(self) -> str:
        return json.dumps({"epoch": self.epoch, "train_loss": self.train_loss,
                           "test_auc": self.test_auc, "test_wauc": self.test_wauc,
                           "lr": self.lr})


def evaluate(net: Network, data: InstanceSet) -> tuple[float | None, float | None]:
    p = net.predict_proba(data)
    try:
        a = auc(p, data.labels)
    except UndefinedMetric:
        a = None
    try:
        w = weighted_auc(data.user_keys, p, data.labels)
    except UndefinedMetric:
        w = None
    return a, w


def filter_keep_sets(schema, counts: OccurrenceCounts, top_n: int) -> dict[str, np.ndarray]:
    vocabs = {s.vocab for s in schema.groups if s.category == USER_BEHAVIOR and s.multi_hot}
    return {v: frequency_filter(counts, top_n, v) for v in sorted(vocabs)}


def train(net: Network, train_set: InstanceSet, eval_set: InstanceSet | None,
          optimizer: OptimizerConfig, regularizer: RegularizerConfig | None = None,
          epochs: int = 2, seed: int = 0, counts: OccurrenceCounts | None = None,
          metrics_log=None):
    """Fixed-budget training with evaluation after every epoch.

    Returns the (in-place updated) network and a list of :class:`EpochReport`.
    ``metrics_log`` is a path or writable file receiving one JSON line per epoch.
    """
    regularizer = regularizer or RegularizerConfig()
    if eval_set is not None and eval_set.schema != train_set.schema:
        raise ValueError("train and eval schemas differ")
    reports: list[EpochReport] = []
    if epochs <= 0:
        return net, reports
    if counts is None and regularizer.kind in ("mba", "filter"):
        counts = count_occurrences(train_set)
    if regularizer.kind == "filter":
        keep = filter_keep_sets(train_set.schema, counts, regularizer.filter_top_n)
        train_set = apply_filter(train_set, keep)
        if eval_set is not None:
            eval_set = apply_filter(eval_set, keep)
    state = TrainState.create(optimizer, seed)
    rng = np.random.default_rng(seed)
    sink = open(metrics_log, "a", encoding="utf-8") if isinstance(metrics_log, (str, bytes)) or hasattr(metrics_log, "__fspath__") else metrics_log
    try:
        for _ in range(epochs):
            lr = state.lr
            total, seen = 0.0, 0
            for rows in make_batches(len(train_set), optimizer.batch_size, rng, shuffle=True):
                batch = train_set.take(rows)
                total += train_step(net, batch, state, regularizer, counts, rng) * len(rows)
                seen += len(rows)
            a, w = evaluate(net, eval_set) if eval_set is not None else (None, None)
            rep = EpochReport(state.epoch + 1, total / seen, a, w, lr)
            reports.append(rep)
            log.info("epoch %d loss %.5f auc %s wauc %s lr %g", rep.epoch, rep.train_loss, a, w, lr)
            if sink is not None:
                sink.write(rep.to_json() + "\n")
                sink.flush()
            decay_lr(state)
    finally:
        if sink is not None and sink is not metrics_log:
            sink.close()
    return net, reports
