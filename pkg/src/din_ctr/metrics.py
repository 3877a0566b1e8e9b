"""AUC, impression-weighted per-user AUC and RelaImpr."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DivisionByRandomBaseline, UndefinedMetric


def _grouped_auc(groups: np.ndarray, scores: np.ndarray, labels: np.ndarray):
    """Per-group Mann-Whitney AUC with ties counted 1/2.

    Returns (auc per group or nan, impressions per group); groups are dense
    integer codes.
    """
    if groups.size == 0:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    n_groups = int(groups.max()) + 1
    order = np.lexsort((scores, groups))
    g, s, y = groups[order], scores[order], labels[order]
    n = len(g)
    idx = np.arange(n)
    new_group = np.ones(n, dtype=bool)
    new_group[1:] = g[1:] != g[:-1]
    group_start = np.maximum.accumulate(np.where(new_group, idx, 0))
    pos = idx - group_start
    new_tie = new_group.copy()
    new_tie[1:] |= s[1:] != s[:-1]
    tie_id = np.cumsum(new_tie) - 1
    tie_first = np.flatnonzero(new_tie)
    tie_last = np.append(tie_first[1:] - 1, n - 1)
    avg_rank = (pos[tie_first] + pos[tie_last]) / 2.0 + 1.0
    rank = avg_rank[tie_id]
    pos_mask = y == 1
    rank_sum = np.bincount(g[pos_mask], weights=rank[pos_mask], minlength=n_groups)
    n_pos = np.bincount(g[pos_mask], minlength=n_groups).astype(np.float64)
    n_all = np.bincount(g, minlength=n_groups).astype(np.float64)
    n_neg = n_all - n_pos
    with np.errstate(invalid="ignore", divide="ignore"):
        auc = (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    auc[(n_pos == 0) | (n_neg == 0)] = np.nan
    return auc, n_all


def auc(scores, labels) -> float:
    """P(random positive outranks random negative), ties worth 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    value, _ = _grouped_auc(np.zeros(len(scores), dtype=np.int64), scores, labels)
    if value.size == 0 or np.isnan(value[0]):
        raise UndefinedMetric("AUC needs at least one positive and one negative")
    return float(value[0])


def per_user_auc(user_keys, scores, labels):
    """(user keys, AUC or nan, impression counts) in sorted user order."""
    keys, codes = np.unique(np.asarray(user_keys).astype(str), return_inverse=True)
    value, imps = _grouped_auc(codes.astype(np.int64), np.asarray(scores, np.float64),
                               np.asarray(labels).astype(np.int64))
    return keys, value, imps


def weighted_auc(user_keys, scores, labels, return_counts: bool = False):
    """Impression-weighted mean of per-user AUCs.

    Users whose impressions are all one class have no AUC and are left out
    of both sums.
    """
    _, value, imps = per_user_auc(user_keys, scores, labels)
    ok = ~np.isnan(value)
    if not ok.any():
        raise UndefinedMetric("no user has both positive and negative impressions")
    result = float(np.sum(imps[ok] * value[ok]) / np.sum(imps[ok]))
    if return_counts:
        return result, int(ok.sum()), int((~ok).sum())
    return result


def rela_impr(measured_auc: float, base_auc: float) -> float:
    """Relative improvement over a baseline in percent, measured from AUC 0.5."""
    if base_auc == 0.5:
        raise DivisionByRandomBaseline("baseline AUC equals the random guesser")
    return ((measured_auc - 0.5) / (base_auc - 0.5) - 1.0) * 100.0


@dataclass
class MetricsReport:
    auc: float
    weighted_auc: float | None
    n_users_counted: int
    n_skipped_users: int
    rela_impr_baseline: str | None = None
    rela_impr: float | None = None
    model: str | None = None

    @classmethod
    def evaluate(cls, user_keys, scores, labels, model: str | None = None) -> "MetricsReport":
        try:
            w, counted, skipped = weighted_auc(user_keys, scores, labels, return_counts=True)
        except UndefinedMetric:
            w, counted, skipped = None, 0, len(np.unique(np.asarray(user_keys).astype(str)))
        return cls(auc(scores, labels), w, counted, skipped, model=model)

    @property
    def headline(self) -> float:
        """Weighted AUC when defined, plain AUC otherwise."""
        return self.weighted_auc if self.weighted_auc is not None else self.auc

    def with_baseline(self, name: str, base: "MetricsReport | float") -> "MetricsReport":
        base_auc = base.headline if isinstance(base, MetricsReport) else float(base)
        self.rela_impr_baseline = name
        self.rela_impr = rela_impr(self.headline, base_auc)
        return self

    def to_json_dict(self) -> dict:
        out = {
            "auc": self.auc,
            "weighted_auc": self.weighted_auc,
            "users": self.n_users_counted,
            "skipped_users": self.n_skipped_users,
        }
        if self.model is not None:
            out["model"] = self.model
        if self.rela_impr is not None:
            out["rela_impr_vs"] = {"baseline": self.rela_impr_baseline, "value_pct": self.rela_impr}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, d: dict) -> "MetricsReport":
        rel = d.get("rela_impr_vs") or {}
        return cls(d["auc"], d["weighted_auc"], d["users"], d["skipped_users"],
                   rel.get("baseline"), rel.get("value_pct"), d.get("model"))
