"""PReLU and Dice activations.

Both are written as ``f(s) = p(s) * s + (1 - p(s)) * alpha * s`` and differ
only in the control function ``p``: a hard step at zero for PReLU, a sigmoid
of the standardised input for Dice.  Inputs are 2-D ``(rows, channels)``;
Dice statistics are taken over rows.

Dice backward treats the mean and variance as constants of the step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PRELU = "prelu"
DICE = "dice"
KINDS = (PRELU, DICE)

DEFAULT_ALPHA = 0.25
DICE_EPS = 1e-8
DICE_MOMENTUM = 0.99


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class PReLU:
    kind = PRELU

    def __init__(self, width: int, alpha: float = DEFAULT_ALPHA, dtype=np.float64):
        self.alpha = np.full(width, alpha, dtype=dtype)

    def parameters(self) -> dict[str, np.ndarray]:
        return {"alpha": self.alpha}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def forward(self, s, training: bool = False, stats=None):
        out = np.where(s > 0, s, self.alpha * s)
        return out, {"s": s}

    def backward(self, cache, upstream):
        s = cache["s"]
        pos = s > 0
        ds = upstream * np.where(pos, 1.0, self.alpha).astype(s.dtype)
        dalpha = np.where(pos, 0.0, upstream * s).sum(axis=0)
        return ds, {"alpha": dalpha.astype(self.alpha.dtype)}


class Dice:
    kind = DICE

    def __init__(self, width: int, alpha: float = DEFAULT_ALPHA, eps: float = DICE_EPS,
                 momentum: float = DICE_MOMENTUM, dtype=np.float64):
        if eps <= 0:
            raise ValueError("eps must be positive")
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        self.alpha = np.full(width, alpha, dtype=dtype)
        self.running_mean = np.zeros(width, dtype=dtype)
        self.running_var = np.ones(width, dtype=dtype)
        self.eps = eps
        self.momentum = momentum

    def parameters(self) -> dict[str, np.ndarray]:
        return {"alpha": self.alpha}

    def buffers(self) -> dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def batch_stats(self, s):
        if s.shape[0] == 0:
            raise ValueError("Dice needs at least one row in training mode")
        s64 = s.astype(np.float64, copy=False)
        mean = s64.mean(axis=0)
        var = s64.var(axis=0)
        return mean, var

    def forward(self, s, training: bool = False, stats=None):
        """``stats=(mean, var)`` pins the moments (no running update)."""
        if stats is not None:
            mean, var = stats
        elif training:
            mean, var = self.batch_stats(s)
            m = self.momentum
            self.running_mean[...] = m * self.running_mean + (1 - m) * mean
            self.running_var[...] = m * self.running_var + (1 - m) * var
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(np.asarray(var, dtype=np.float64) + self.eps)
        p = _sigmoid((s - np.asarray(mean, dtype=np.float64)) * inv_std).astype(s.dtype)
        out = s * (self.alpha + (1 - self.alpha) * p)
        return out, {"s": s, "p": p, "inv_std": inv_std.astype(s.dtype), "stats": (mean, var)}

    def backward(self, cache, upstream):
        s, p, inv_std = cache["s"], cache["p"], cache["inv_std"]
        a = self.alpha
        ds = upstream * (a + (1 - a) * p + (1 - a) * s * p * (1 - p) * inv_std)
        dalpha = (upstream * s * (1 - p)).sum(axis=0)
        return ds, {"alpha": dalpha.astype(a.dtype)}


def make_activation(kind: str, width: int, dtype=np.float64, **kw):
    if kind == PRELU:
        return PReLU(width, dtype=dtype, **{k: v for k, v in kw.items() if k == "alpha"})
    if kind == DICE:
        return Dice(width, dtype=dtype, **kw)
    raise ValueError(f"unknown activation {kind!r}")


# functional forms over a single activation vector or a (rows, channels) batch

def prelu(s, alpha=DEFAULT_ALPHA):
    s = np.asarray(s, dtype=np.float64)
    return np.where(s > 0, s, alpha * s)


@dataclass
class DiceState:
    alpha: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = DICE_EPS
    momentum: float = DICE_MOMENTUM
    mode: str = "training"

    @classmethod
    def create(cls, width: int, alpha=DEFAULT_ALPHA, **kw) -> "DiceState":
        return cls(np.full(width, alpha, dtype=np.float64), np.zeros(width), np.ones(width), **kw)

    def as_layer(self) -> Dice:
        layer = Dice(len(self.alpha), eps=self.epsilon, momentum=self.momentum)
        layer.alpha = self.alpha
        layer.running_mean = self.running_mean
        layer.running_var = self.running_var
        return layer


def dice_forward(s, state: DiceState, stats=None):
    """Dice over a (rows, channels) batch; updates ``state`` in training mode."""
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    out, _ = state.as_layer().forward(s, training=state.mode == "training", stats=stats)
    return out


def activation_backward(kind: str, s, upstream, alpha=DEFAULT_ALPHA, stats=None, eps=DICE_EPS):
    """(dL/ds, dL/dalpha) for one activation evaluated at ``s``.

    For Dice, ``stats=(mean, var)`` are the moments used in the forward pass
    and are held constant.
    """
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    upstream = np.broadcast_to(np.asarray(upstream, dtype=np.float64), s.shape)
    width = s.shape[1]
    if kind == PRELU:
        layer = PReLU(width, alpha=0.0)
        layer.alpha[...] = alpha
        _, cache = layer.forward(s)
    elif kind == DICE:
        if stats is None:
            raise ValueError("Dice backward needs the forward moments")
        layer = Dice(width, eps=eps)
        layer.alpha[...] = alpha
        _, cache = layer.forward(s, stats=stats)
    else:
        raise ValueError(f"unknown activation {kind!r}")
    ds, grads = layer.backward(cache, upstream)
    return ds, grads["alpha"]
