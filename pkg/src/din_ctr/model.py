"""LR, BaseModel (Embedding&MLP) and DIN networks with batched forward/backward.

All three read an :class:`~din_ctr.features.InstanceSet` batch.  Every group
is embedded by table lookup; one-hot groups give one vector, multi-hot groups
are pooled to one vector (sum pooling in BaseModel, the local activation
unit in DIN for behavior groups that have an ad group in the same id space).
The per-group vectors are concatenated and fed to an MLP ending in a 2-way
softmax whose click component is the predicted CTR.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .activation import PRELU, make_activation
from .embedding import EmbeddingTable, SparseGradient, init_table
from .errors import NoAttention, NonFiniteGradient
from .features import USER_BEHAVIOR, FeatureSchema, Instance, InstanceSet, dense_dimensionality
from .interest import UNIT_HIDDEN, ActivationUnit, segment_sum

LR = "lr"
BASE = "base"
DIN = "din"
KINDS = (LR, BASE, DIN)

PROB_CLAMP = 1e-12
DEFAULT_MLP = (200, 80)


def nll_loss(p, y) -> float:
    """Mean negative log-likelihood, probabilities clamped away from 0 and 1."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


@dataclass
class Gradients:
    dense: dict[str, np.ndarray] = field(default_factory=dict)
    sparse: dict[str, SparseGradient] = field(default_factory=dict)

    def check_finite(self) -> None:
        for name, g in self.dense.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(name)
        for g in self.sparse.values():
            g.check_finite()


@dataclass
class Prediction:
    probability: float
    attention: dict[str, np.ndarray] | None = None


def _glorot(rng, n_in, n_out, dtype):
    bound = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype)


class Network:
    """Parameters and computation for one of the three model kinds."""

    def __init__(self, schema: FeatureSchema, kind: str = DIN, embedding_dim: int = 12,
                 mlp_widths=DEFAULT_MLP, activation: str = PRELU, unit_hidden: int = UNIT_HIDDEN,
                 seed=0, dtype=np.float32):
        if kind not in KINDS:
            raise ValueError(f"unknown model kind {kind!r}")
        self.schema = schema
        self.kind = kind
        self.dtype = np.dtype(dtype).type
        self.activation = activation
        self.embedding_dim = 1 if kind == LR else int(embedding_dim)
        self.mlp_widths = tuple(int(w) for w in mlp_widths)
        self.unit_hidden = int(unit_hidden)
        rng = np.random.default_rng(seed)

        self.tables: dict[str, EmbeddingTable] = {}
        for vocab, card in schema.vocabularies().items():
            if kind == LR:
                rows = np.zeros((card, 1), dtype=self.dtype)
                self.tables[vocab] = EmbeddingTable(vocab, rows)
            else:
                self.tables[vocab] = init_table(vocab, card, self.embedding_dim, rng, self.dtype)

        self.bias = np.zeros(1, dtype=self.dtype)
        self.layers: list[tuple[np.ndarray, np.ndarray]] = []
        self.acts = []
        self.units: dict[str, ActivationUnit] = {}
        self.pairing: dict[int, int] = {}
        if kind == LR:
            return

        width = dense_dimensionality(schema, self.embedding_dim)
        for h in self.mlp_widths:
            self.layers.append((_glorot(rng, width, h, self.dtype), np.zeros(h, dtype=self.dtype)))
            self.acts.append(make_activation(activation, h, dtype=self.dtype))
            width = h
        self.out_w = _glorot(rng, width, 2, self.dtype)
        self.out_b = np.zeros(2, dtype=self.dtype)

        if kind == DIN:
            for g, spec in enumerate(schema.groups):
                if spec.category != USER_BEHAVIOR or not spec.multi_hot:
                    continue
                ad = schema.paired_ad_group(spec.name)
                if ad is None:
                    continue
                self.pairing[g] = ad
                self.units[spec.name] = ActivationUnit(
                    self.embedding_dim, self.unit_hidden, activation, rng, self.dtype)

    # -- parameter access -------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        """Dense trainable tensors by name (views into the live arrays)."""
        if self.kind == LR:
            return {"lr.bias": self.bias}
        out = {}
        for i, ((w, b), act) in enumerate(zip(self.layers, self.acts)):
            out[f"mlp.{i}.w"] = w
            out[f"mlp.{i}.b"] = b
            out.update({f"mlp.{i}.act.{k}": v for k, v in act.parameters().items()})
        out["mlp.out.w"] = self.out_w
        out["mlp.out.b"] = self.out_b
        for name, unit in self.units.items():
            out.update({f"unit.{name}.{k}": v for k, v in unit.parameters().items()})
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for i, act in enumerate(self.acts):
            out.update({f"mlp.{i}.act.{k}": v for k, v in act.buffers().items()})
        for name, unit in self.units.items():
            out.update({f"unit.{name}.{k}": v for k, v in unit.buffers().items()})
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"table.{k}": t.rows for k, t in self.tables.items()}
        out.update({f"param.{k}": v for k, v in self.parameters().items()})
        out.update({f"buffer.{k}": v for k, v in self.buffers().items()})
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        if set(own) != set(state):
            missing = sorted(set(own) ^ set(state))
            raise KeyError(f"state mismatch: {missing[:5]}")
        for k, dst in own.items():
            src = np.asarray(state[k])
            if src.shape != dst.shape:
                raise ValueError(f"{k}: shape {src.shape} != {dst.shape}")
            dst[...] = src

    def copy(self) -> "Network":
        return copy.deepcopy(self)

    def dice_layers(self) -> dict:
        out = {f"mlp.{i}": a for i, a in enumerate(self.acts)}
        out.update({f"unit.{n}": u.act for n, u in self.units.items()})
        return out

    # -- forward ----------------------------------------------------------

    def forward(self, batch: InstanceSet, training: bool = False, dice_stats=None):
        """Click probabilities (float64, shape (n,)) and a cache for backward.

        ``dice_stats`` maps layer names to pinned (mean, var) moments.
        """
        if self.kind == LR:
            return self._forward_lr(batch)
        dice_stats = dice_stats or {}
        schema = self.schema
        n = len(batch)
        D = self.embedding_dim
        slots: list[np.ndarray | None] = [None] * schema.n_groups
        gcache: dict[int, dict] = {}
        for g, spec in enumerate(schema.groups):
            ix = batch.indices[g]
            E = self.tables[spec.vocab].rows[ix]
            gcache[g] = {"ix": ix, "E": E}
            if not spec.multi_hot:
                slots[g] = E
        for g, spec in enumerate(schema.groups):
            if not spec.multi_hot:
                continue
            c = gcache[g]
            E, indptr = c["E"], batch.indptr[g]
            c["indptr"] = indptr
            if g in self.pairing and E.shape[0] > 0:
                seg = batch.segments(g)
                Q = slots[self.pairing[g]][seg]
                unit = self.units[spec.name]
                w, ucache = unit.forward(E, Q, training=training,
                                         stats=dice_stats.get(f"unit.{spec.name}"))
                c.update(seg=seg, w=w, unit=ucache)
                slots[g] = segment_sum(E, indptr, w)
            else:
                slots[g] = segment_sum(E, indptr) if E.shape[0] else np.zeros((n, D), self.dtype)
        z = np.concatenate(slots, axis=1) if slots else np.zeros((n, 0), self.dtype)
        hidden = []
        for i, ((W, b), act) in enumerate(zip(self.layers, self.acts)):
            h = z @ W + b
            out, acache = act.forward(h, training=training, stats=dice_stats.get(f"mlp.{i}"))
            hidden.append((z, acache))
            z = out
        logits = z @ self.out_w + self.out_b
        diff = logits[:, 1].astype(np.float64) - logits[:, 0].astype(np.float64)
        p = expit(diff)
        cache = {"n": n, "groups": gcache, "slots": slots, "hidden": hidden, "top": z, "p": p}
        return p, cache

    def _forward_lr(self, batch: InstanceSet):
        n = len(batch)
        logit = np.full(n, float(self.bias[0]), dtype=np.float64)
        gcache = {}
        for g, spec in enumerate(self.schema.groups):
            ix = batch.indices[g]
            seg = batch.segments(g)
            vals = self.tables[spec.vocab].rows[ix, 0].astype(np.float64)
            logit += np.bincount(seg, weights=vals, minlength=n)
            gcache[g] = {"ix": ix, "seg": seg}
        p = expit(logit)
        return p, {"n": n, "groups": gcache, "p": p}

    def dice_statistics(self, cache) -> dict:
        """Moments used by every Dice layer in a forward pass (for pinning)."""
        out = {}
        for i, (_, acache) in enumerate(cache.get("hidden", [])):
            if "stats" in acache:
                out[f"mlp.{i}"] = acache["stats"]
        for g, c in cache["groups"].items():
            if "unit" in c and "stats" in c["unit"]["act"]:
                out[f"unit.{self.schema.groups[g].name}"] = c["unit"]["act"]["stats"]
        return out

    # -- backward ---------------------------------------------------------

    def backward(self, cache, labels) -> Gradients:
        """Gradients of the mean batch NLL with respect to every parameter."""
        y = np.asarray(labels, dtype=np.float64)
        n = cache["n"]
        dlogit = (cache["p"] - y) / n
        grads = Gradients()
        if self.kind == LR:
            return self._backward_lr(cache, dlogit, grads)

        dtype = self.dtype
        dz = np.stack([-dlogit, dlogit], axis=1).astype(dtype)
        top = cache["top"]
        grads.dense["mlp.out.w"] = top.T @ dz
        grads.dense["mlp.out.b"] = dz.sum(axis=0)
        dx = dz @ self.out_w.T
        for i in reversed(range(len(self.layers))):
            W, _ = self.layers[i]
            z_in, acache = cache["hidden"][i]
            dh, agrads = self.acts[i].backward(acache, dx)
            grads.dense[f"mlp.{i}.w"] = z_in.T @ dh
            grads.dense[f"mlp.{i}.b"] = dh.sum(axis=0)
            for k, v in agrads.items():
                grads.dense[f"mlp.{i}.act.{k}"] = v
            dx = dh @ W.T

        D = self.embedding_dim
        dslots = [dx[:, g * D:(g + 1) * D] for g in range(self.schema.n_groups)]
        dslots = [s.copy() for s in dslots]
        rows: dict[str, list] = {v: [] for v in self.tables}
        # multi-hot groups first: DIN pushes query gradients into ad slots
        for g, spec in enumerate(self.schema.groups):
            if not spec.multi_hot:
                continue
            c = cache["groups"][g]
            if c["E"].shape[0] == 0:
                continue
            seg = c.get("seg")
            if seg is None:
                seg = np.repeat(np.arange(n), np.diff(c["indptr"]))
            up = dslots[g][seg]
            if "w" in c:
                unit = self.units[spec.name]
                dw = np.einsum("nd,nd->n", up, c["E"])
                dE_unit, dQ, ugrads = unit.backward(c["unit"], dw)
                for k, v in ugrads.items():
                    grads.dense[f"unit.{spec.name}.{k}"] = v
                dE = c["w"][:, None] * up + dE_unit
                dslots[self.pairing[g]] += segment_sum(dQ, c["indptr"])
            else:
                dE = up
            rows[spec.vocab].append((c["ix"], dE))
        for g, spec in enumerate(self.schema.groups):
            if spec.multi_hot:
                continue
            rows[spec.vocab].append((cache["groups"][g]["ix"], dslots[g]))
        for name, unit in self.units.items():
            for k, v in unit.parameters().items():
                grads.dense.setdefault(f"unit.{name}.{k}", np.zeros_like(v))
        for vocab, parts in rows.items():
            if parts:
                ids = np.concatenate([p[0] for p in parts])
                vals = np.concatenate([p[1] for p in parts])
                grads.sparse[vocab] = SparseGradient.accumulate(vocab, ids, vals, D)
            else:
                grads.sparse[vocab] = SparseGradient.empty(vocab, D, dtype)
        return grads

    def _backward_lr(self, cache, dlogit, grads: Gradients) -> Gradients:
        grads.dense["lr.bias"] = np.array([dlogit.sum()], dtype=self.dtype)
        rows: dict[str, list] = {v: [] for v in self.tables}
        for g, spec in enumerate(self.schema.groups):
            c = cache["groups"][g]
            rows[spec.vocab].append((c["ix"], dlogit[c["seg"]][:, None]))
        for vocab, parts in rows.items():
            ids = np.concatenate([p[0] for p in parts])
            vals = np.concatenate([p[1] for p in parts]).astype(self.dtype)
            grads.sparse[vocab] = SparseGradient.accumulate(vocab, ids, vals, 1)
        return grads

    # -- convenience ------------------------------------------------------

    def loss(self, batch: InstanceSet, training: bool = False, dice_stats=None) -> float:
        p, _ = self.forward(batch, training=training, dice_stats=dice_stats)
        return nll_loss(p, batch.labels)

    def predict_proba(self, data: InstanceSet, chunk: int = 8192) -> np.ndarray:
        """Click probabilities in inference mode, clamped into (0, 1)."""
        out = np.empty(len(data), dtype=np.float64)
        for start in range(0, len(data), chunk):
            rows = np.arange(start, min(start + chunk, len(data)))
            p, _ = self.forward(data.take(rows), training=False)
            out[rows] = p
        return np.clip(out, PROB_CLAMP, 1.0 - PROB_CLAMP)

    def attention(self, batch: InstanceSet, group: str) -> tuple[np.ndarray, np.ndarray]:
        """Per-behavior weights (flat, CSR order) and the group's indptr."""
        if group not in self.units:
            raise KeyError(group)
        g = self.schema.index(group)
        _, cache = self.forward(batch, training=False)
        c = cache["groups"][g]
        w = c.get("w", np.zeros(0))
        return np.asarray(w, dtype=np.float64), batch.indptr[g]


# -- single-instance entry points ------------------------------------------

def with_candidate(instance: Instance, schema: FeatureSchema, candidate: dict[str, int] | None) -> Instance:
    """Copy of ``instance`` with ad-group ids replaced by ``candidate``."""
    if not candidate:
        return instance
    ids = list(instance.ids)
    for name, value in candidate.items():
        ids[schema.index(name)] = (int(value),)
    return Instance(tuple(ids), instance.label, instance.user_key)


def _single(instance, net: Network, candidate, kind):
    if net.kind != kind:
        raise ValueError(f"network kind is {net.kind!r}, expected {kind!r}")
    inst = with_candidate(instance, net.schema, candidate)
    batch = InstanceSet.from_instances(net.schema, [inst])
    p, cache = net.forward(batch, training=False)
    prob = float(np.clip(p[0], PROB_CLAMP, 1 - PROB_CLAMP))
    attention = None
    if kind == DIN:
        attention = {}
        for g in net.pairing:
            c = cache["groups"][g]
            attention[net.schema.groups[g].name] = np.asarray(c.get("w", np.zeros(0)), dtype=np.float64)
    return Prediction(prob, attention), cache


def forward_lr(instance: Instance, net: Network) -> Prediction:
    return _single(instance, net, None, LR)[0]


def forward_base(instance: Instance, net: Network, candidate: dict[str, int] | None = None) -> Prediction:
    return _single(instance, net, candidate, BASE)[0]


def forward_din(instance: Instance, net: Network, candidate: dict[str, int] | None = None) -> Prediction:
    return _single(instance, net, candidate, DIN)[0]


def pooled_slots(instance: Instance, net: Network, candidate: dict[str, int] | None = None) -> list[np.ndarray]:
    """The per-group vectors concatenated before the MLP."""
    inst = with_candidate(instance, net.schema, candidate)
    _, cache = net.forward(InstanceSet.from_instances(net.schema, [inst]))
    return [s[0].copy() for s in cache["slots"]]


def attention_rows(net: Network, data: InstanceSet, limit: int | None = None, group: str | None = None):
    """Yield (user_key, candidate_id, behavior_index, behavior_id, weight) for a DIN network."""
    if net.kind != DIN or not net.units:
        raise NoAttention(f"a {net.kind!r} network has no attention weights")
    group = group or next(iter(net.units))
    g = net.schema.index(group)
    ad = net.pairing[g]
    n = len(data) if limit is None else min(int(limit), len(data))
    for start in range(0, n, 1024):
        batch = data.take(np.arange(start, min(n, start + 1024)))
        w, indptr = net.attention(batch, group)
        for r in range(len(batch)):
            cand = int(batch.group_ids(ad, r)[0])
            lo, hi = indptr[r], indptr[r + 1]
            for k in range(lo, hi):
                yield batch.user_keys[r], cand, k - lo, int(batch.indices[g][k]), w[k]
