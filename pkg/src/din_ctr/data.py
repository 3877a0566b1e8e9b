"""Dataset construction: Amazon reviews, MovieLens ratings, synthetic long-tail logs."""
from __future__ import annotations

import ast
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataFormatError
from .features import (
    AD,
    DEFAULT_MAX_IDS,
    MULTI_HOT,
    ONE_HOT,
    USER_BEHAVIOR,
    FeatureGroupSpec,
    FeatureSchema,
    InstanceSet,
    build_schema,
    read_instances,
    read_schema,
    write_instances,
    write_schema,
)
from .regularization import OccurrenceCounts, count_occurrences

log = logging.getLogger(__name__)

UNKNOWN_CATEGORY = "unknown"
MIN_REVIEWS = 5
ML_TRAIN_USERS = 100_000
ML_TOTAL_USERS = 138_493


@dataclass
class BehaviorLog:
    user_key: str
    items: np.ndarray       # dense goods ids, time ordered
    categories: np.ndarray  # dense category ids, aligned with items
    timestamps: np.ndarray


@dataclass
class DatasetBundle:
    schema: FeatureSchema
    train: InstanceSet
    test: InstanceSet
    counts: OccurrenceCounts
    vocabularies: dict[str, list[str]]  # vocab name -> raw id by dense id
    stats: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def dense_id(self, vocab: str, raw: str) -> int:
        return self.vocabularies[vocab].index(raw)

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_schema(self.schema, out / "schema.tsv")
        write_instances(self.train, out / "train.tsv")
        write_instances(self.test, out / "test.tsv")
        self.counts.to_tsv(out / "counts.tsv")
        with open(out / "vocab.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for vocab, raws in self.vocabularies.items():
                for dense, raw in enumerate(raws):
                    fh.write(f"{vocab}\t{raw}\t{dense}\n")
        (out / "stats.json").write_text(json.dumps(self.stats, sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, data_dir) -> "DatasetBundle":
        d = Path(data_dir)
        schema = read_schema(d / "schema.tsv")
        train = read_instances(d / "train.tsv", schema)
        test = read_instances(d / "test.tsv", schema)
        counts = OccurrenceCounts.from_tsv(d / "counts.tsv", schema) if (d / "counts.tsv").exists() \
            else count_occurrences(train)
        vocabs: dict[str, list[str]] = {}
        if (d / "vocab.tsv").exists():
            with open(d / "vocab.tsv", encoding="utf-8") as fh:
                for line in fh:
                    vocab, raw, _ = line.rstrip("\n").split("\t")
                    vocabs.setdefault(vocab, []).append(raw)
        stats = json.loads((d / "stats.json").read_text()) if (d / "stats.json").exists() else {}
        return cls(schema, train, test, counts, vocabs, stats)


def sequence_schema(n_items: int, n_cates: int, max_behaviors: int = DEFAULT_MAX_IDS,
                    item: str = "goods_id", cate: str = "cate_id") -> FeatureSchema:
    """Candidate item/category plus the user's item and category histories."""
    return build_schema([
        FeatureGroupSpec(item, n_items, ONE_HOT, AD, 1),
        FeatureGroupSpec(cate, n_cates, ONE_HOT, AD, 1),
        FeatureGroupSpec(f"hist_{item}", n_items, MULTI_HOT, USER_BEHAVIOR, max_behaviors, vocab=item),
        FeatureGroupSpec(f"hist_{cate}", n_cates, MULTI_HOT, USER_BEHAVIOR, max_behaviors, vocab=cate),
    ])


def _recent_distinct(seq, cap: int) -> list[int]:
    kept, seen = [], set()
    for v in reversed(seq):
        v = int(v)
        if v not in seen:
            seen.add(v)
            kept.append(v)
            if len(kept) == cap:
                break
    kept.sort()
    return kept


class _Builder:
    """Accumulates instances of a 4-group sequence schema into CSR columns."""

    def __init__(self, schema: FeatureSchema):
        self.schema = schema
        self.lens = [[] for _ in schema.groups]
        self.flat = [[] for _ in schema.groups]
        self.labels: list[int] = []
        self.keys: list[str] = []

    def add(self, user_key, item, cate, hist_items, hist_cates, label):
        for g, ids in enumerate(([item], [cate], hist_items, hist_cates)):
            self.lens[g].append(len(ids))
            self.flat[g].extend(ids)
        self.labels.append(label)
        self.keys.append(user_key)

    def build(self) -> InstanceSet:
        indptr = []
        for lens in self.lens:
            p = np.zeros(len(lens) + 1, dtype=np.int64)
            np.cumsum(np.asarray(lens, dtype=np.int64), out=p[1:])
            indptr.append(p)
        return InstanceSet(self.schema, indptr, [np.asarray(f, dtype=np.int64) for f in self.flat],
                           self.labels, self.keys)


# --- Amazon ---------------------------------------------------------------

def _parse_line(line: str):
    try:
        return json.loads(line)
    except json.JSONDecodeError:
        # the public metadata dump is python-literal per line
        return ast.literal_eval(line)


def _read_records(path, fields, strict: bool):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = _parse_line(line)
                if not isinstance(rec, dict) or any(f not in rec for f in fields):
                    raise ValueError(f"missing one of {fields}")
            except (ValueError, SyntaxError) as exc:
                if strict:
                    raise DataFormatError(path, lineno, str(exc)) from exc
                log.warning("%s:%d: skipped malformed record (%s)", path, lineno, exc)
                continue
            yield lineno, rec


def _category_of(rec) -> str:
    cats = rec.get("categories") or rec.get("category")
    if not cats:
        return UNKNOWN_CATEGORY
    first = cats[0]
    if isinstance(first, (list, tuple)):
        return str(first[-1]) if first else UNKNOWN_CATEGORY
    # flat list form: a single path
    return str(cats[-1])


def k_core(events: list[tuple[str, str, int, int]], k: int = MIN_REVIEWS):
    """Drop users and items with fewer than ``k`` events until none remain."""
    while True:
        users = Counter(e[0] for e in events)
        items = Counter(e[1] for e in events)
        kept = [e for e in events if users[e[0]] >= k and items[e[1]] >= k]
        if len(kept) == len(events):
            return kept
        events = kept


def ingest_amazon(reviews_path, meta_path, min_reviews: int = MIN_REVIEWS, strict: bool = False):
    """Per-user time-sorted behavior logs and vocabularies.

    Returns ``(logs, vocabularies, item_categories, stats)``.
    """
    events = []
    for order, (_, rec) in enumerate(_read_records(reviews_path, ("reviewerID", "asin", "unixReviewTime"), strict)):
        events.append((str(rec["reviewerID"]), str(rec["asin"]), int(rec["unixReviewTime"]), order))
    events = k_core(events, min_reviews)
    asins = sorted({e[1] for e in events})
    asin_set = set(asins)
    cate_of: dict[str, str] = {}
    for _, rec in _read_records(meta_path, ("asin",), strict):
        a = str(rec["asin"])
        if a in asin_set:
            cate_of[a] = _category_of(rec)
    item_cate_raw = [cate_of.get(a, UNKNOWN_CATEGORY) for a in asins]
    cates = sorted(set(item_cate_raw))
    goods_index = {a: i for i, a in enumerate(asins)}
    cate_index = {c: i for i, c in enumerate(cates)}
    item_cate = np.array([cate_index[c] for c in item_cate_raw], dtype=np.int64)

    by_user: dict[str, list] = defaultdict(list)
    for user, asin, t, order in events:
        by_user[user].append((t, order, goods_index[asin]))
    logs = []
    for user in sorted(by_user):
        evs = sorted(by_user[user])
        items = np.array([e[2] for e in evs], dtype=np.int64)
        logs.append(BehaviorLog(user, items, item_cate[items], np.array([e[0] for e in evs])))
    stats = {"users": len(logs), "goods": len(asins), "categories": len(cates), "samples": len(events),
             "category_rule": "last node of the first category path"}
    return logs, {"goods_id": asins, "cate_id": cates}, item_cate, stats


def build_sequence_instances(logs, item_categories: np.ndarray, seed=0,
                             max_behaviors: int = DEFAULT_MAX_IDS, schema: FeatureSchema | None = None):
    """Predict-the-next-item instances, each positive paired with one sampled negative.

    For a log of length n, training uses prefixes k = 1..n-2 and the test
    instance predicts event n from the first n-1.  Logs shorter than 3 are
    skipped.
    """
    n_items = len(item_categories)
    schema = schema or sequence_schema(n_items, int(item_categories.max()) + 1, max_behaviors)
    rng = np.random.default_rng(seed)
    train, test = _Builder(schema), _Builder(schema)
    for lg in logs:
        n = len(lg.items)
        if n < 3:
            continue
        reviewed = set(lg.items.tolist())
        if len(reviewed) >= n_items:
            continue
        for k in range(1, n):
            sink = train if k <= n - 2 else test
            hist_items = _recent_distinct(lg.items[:k], max_behaviors)
            hist_cates = _recent_distinct(lg.categories[:k][-max_behaviors:], max_behaviors)
            pos = int(lg.items[k])
            sink.add(lg.user_key, pos, int(item_categories[pos]), hist_items, hist_cates, 1)
            neg = int(rng.integers(n_items))
            while neg in reviewed:
                neg = int(rng.integers(n_items))
            sink.add(lg.user_key, neg, int(item_categories[neg]), hist_items, hist_cates, 0)
    return train.build(), test.build()


def prepare_amazon(reviews_path, meta_path, seed=0, max_behaviors: int = DEFAULT_MAX_IDS,
                   strict: bool = False) -> DatasetBundle:
    logs, vocabs, item_cate, stats = ingest_amazon(reviews_path, meta_path, strict=strict)
    schema = sequence_schema(len(vocabs["goods_id"]), len(vocabs["cate_id"]), max_behaviors)
    train, test = build_sequence_instances(logs, item_cate, seed, max_behaviors, schema)
    stats.update(train_instances=len(train), test_instances=len(test))
    return DatasetBundle(schema, train, test, count_occurrences(train), vocabs, stats)


# --- MovieLens --------------------------------------------------------------

def _read_csv_checked(path, columns, numeric):
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as exc:
        raise DataFormatError(path, 0, str(exc)) from exc
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DataFormatError(path, 1, f"missing columns {missing}")
    for col in numeric:
        vals = pd.to_numeric(df[col], errors="coerce")
        bad = np.flatnonzero(vals.isna().to_numpy())
        if bad.size:
            raise DataFormatError(path, int(bad[0]) + 2, f"non-numeric {col} {df[col].iloc[bad[0]]!r}")
        df[col] = vals
    return df


def ingest_movielens(ratings_path, movies_path, seed=0, user_fraction: float = 1.0,
                     max_behaviors: int = DEFAULT_MAX_IDS) -> DatasetBundle:
    """Binary-labelled rating instances with a user-disjoint train/test split.

    Ratings of 4 and above are positive.  Each rating becomes one instance
    whose history is the user's strictly earlier ratings.
    """
    ratings = _read_csv_checked(ratings_path, ["userId", "movieId", "rating", "timestamp"],
                                ["userId", "movieId", "rating", "timestamp"])
    movies = _read_csv_checked(movies_path, ["movieId", "genres"], ["movieId"])
    movie_ids = [str(int(m)) for m in movies["movieId"]]
    first_genre = [g.split("|")[0] if g else UNKNOWN_CATEGORY for g in movies["genres"]]
    cate_of = dict(zip(movie_ids, first_genre))
    rated = {str(int(m)) for m in ratings["movieId"].unique()}
    for m in sorted(rated - set(cate_of)):
        cate_of[m] = UNKNOWN_CATEGORY
    movie_vocab = sorted(cate_of, key=int)
    cate_vocab = sorted(set(cate_of.values()))
    movie_index = {m: i for i, m in enumerate(movie_vocab)}
    cate_index = {c: i for i, c in enumerate(cate_vocab)}
    item_cate = np.array([cate_index[cate_of[m]] for m in movie_vocab], dtype=np.int64)

    all_users = np.unique(ratings["userId"].to_numpy().astype(np.int64))
    rng = np.random.default_rng(seed)
    users = all_users
    if user_fraction < 1.0:
        size = max(2, int(round(user_fraction * len(all_users))))
        users = np.sort(rng.choice(all_users, size=size, replace=False))
    n_train = int(round(len(users) * ML_TRAIN_USERS / ML_TOTAL_USERS))
    train_users = set(rng.permutation(users)[:n_train].tolist())

    schema = sequence_schema(len(movie_vocab), len(cate_vocab), max_behaviors,
                             item="movie_id", cate="movie_cate_id")
    sel = ratings[ratings["userId"].isin(users)]
    uid = sel["userId"].to_numpy().astype(np.int64)
    mid = np.array([movie_index[str(int(m))] for m in sel["movieId"]], dtype=np.int64)
    lab = (sel["rating"].to_numpy() >= 4.0).astype(np.int8)
    ts = sel["timestamp"].to_numpy().astype(np.int64)
    order = np.lexsort((np.arange(len(uid)), ts, uid))
    uid, mid, lab, ts = uid[order], mid[order], lab[order], ts[order]
    bounds = np.flatnonzero(np.diff(uid)) + 1
    train, test = _Builder(schema), _Builder(schema)
    for seg in np.split(np.arange(len(uid)), bounds):
        if seg.size == 0:
            continue
        u = int(uid[seg[0]])
        sink = train if u in train_users else test
        m_u, t_u, c_u = mid[seg], ts[seg], item_cate[mid[seg]]
        earlier = np.searchsorted(t_u, t_u, side="left")
        for i in range(seg.size):
            c = earlier[i]
            lo = max(0, c - max_behaviors)
            sink.add(str(u), int(m_u[i]), int(c_u[i]), _recent_distinct(m_u[lo:c], max_behaviors),
                     _recent_distinct(c_u[lo:c], max_behaviors), int(lab[seg[i]]))
    train_set, test_set = train.build(), test.build()
    stats = {"users": int(len(all_users)), "goods": len(movie_vocab), "categories": len(cate_vocab),
             "samples": int(len(ratings)), "selected_users": int(len(users)),
             "train_users": n_train, "test_users": int(len(users) - n_train),
             "train_instances": len(train_set), "test_instances": len(test_set),
             "category_rule": "first listed genre"}
    return DatasetBundle(schema, train_set, test_set, count_occurrences(train_set),
                         {"movie_id": movie_vocab, "movie_cate_id": cate_vocab}, stats)


# --- synthetic long-tail generator --------------------------------------------

def synth_generate(n_users: int, vocab_size: int, behaviors_per_user: int, interest_clusters: int,
                   seed=0, instances_per_user: int = 10, zipf_exponent: float = 1.2,
                   test_fraction: float = 0.2, item_bias_scale: float = 1.0,
                   affinity_scale: float = 4.0, max_behaviors: int = DEFAULT_MAX_IDS) -> DatasetBundle:
    """Users with clustered interests over a Zipf-popular item vocabulary.

    Items belong to one of ``interest_clusters`` categories.  Each user
    prefers a few categories; behaviors are drawn from those, and candidate
    items are drawn half from the preferred categories and half from the
    whole catalogue.  A click is Bernoulli with logit
    ``affinity_scale * (interest in the candidate's category) + item bias - 1``.
    The planted click probability of every test instance is stored in
    ``extras["planted_test_scores"]``; ``extras["event_counts"]`` holds how
    often each item was drawn as a behavior event.
    """
    if n_users < 2 or vocab_size < 2 or behaviors_per_user < 1 or interest_clusters < 1:
        raise ValueError("n_users, vocab_size >= 2; behaviors_per_user, interest_clusters >= 1")
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    C = interest_clusters
    cluster = rng.integers(C, size=vocab_size)
    rank = rng.permutation(vocab_size) + 1
    pop = rank.astype(np.float64) ** -zipf_exponent
    bias = rng.normal(0.0, item_bias_scale, size=vocab_size)
    # per-cluster sampling tables
    members = [np.flatnonzero(cluster == c) for c in range(C)]
    cdfs = [np.cumsum(pop[m]) / pop[m].sum() if m.size else np.zeros(0) for m in members]
    global_cdf = np.cumsum(pop) / pop.sum()

    def draw(c, size):
        if members[c].size == 0:
            return np.searchsorted(global_cdf, rng.random(size))
        return members[c][np.minimum(np.searchsorted(cdfs[c], rng.random(size)), members[c].size - 1)]

    schema = sequence_schema(vocab_size, C, max_behaviors)
    train, test = _Builder(schema), _Builder(schema)
    planted = []
    event_counts = np.zeros(vocab_size, dtype=np.int64)
    for u in range(n_users):
        key = f"u{u}"
        k = int(rng.integers(1, min(3, C) + 1))
        prefs = rng.choice(C, size=k, replace=False)
        weights = rng.dirichlet(np.ones(k))
        interest = np.zeros(C)
        interest[prefs] = weights
        beh_clusters = rng.choice(prefs, size=behaviors_per_user, p=weights)
        beh = np.concatenate([draw(c, 1) for c in beh_clusters])
        np.add.at(event_counts, beh, 1)
        hist_items = _recent_distinct(beh, max_behaviors)
        hist_cates = _recent_distinct(cluster[beh], max_behaviors)
        for _ in range(instances_per_user):
            if rng.random() < 0.5:
                c = int(rng.choice(prefs, p=weights))
                item = int(draw(c, 1)[0])
            else:
                item = int(min(np.searchsorted(global_cdf, rng.random()), vocab_size - 1))
            logit = affinity_scale * interest[cluster[item]] + bias[item] - 1.0
            prob = 1.0 / (1.0 + np.exp(-logit))
            label = int(rng.random() < prob)
            if rng.random() < test_fraction:
                test.add(key, item, int(cluster[item]), hist_items, hist_cates, label)
                planted.append(prob)
            else:
                train.add(key, item, int(cluster[item]), hist_items, hist_cates, label)
    train_set, test_set = train.build(), test.build()
    counts = count_occurrences(train_set)
    vocabs = {"goods_id": [str(i) for i in range(vocab_size)], "cate_id": [str(c) for c in range(C)]}
    stats = {"users": n_users, "goods": vocab_size, "categories": C,
             "samples": len(train_set) + len(test_set),
             "train_instances": len(train_set), "test_instances": len(test_set)}
    return DatasetBundle(schema, train_set, test_set, counts, vocabs, stats,
                         extras={"planted_test_scores": np.asarray(planted), "event_counts": event_counts})
