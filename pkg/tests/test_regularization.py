import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from din_ctr.embedding import init_table
from din_ctr.errors import UnknownFeatureOccurrence
from din_ctr.features import InstanceSet, encode_instance
from din_ctr.model import Network
from din_ctr.regularization import (
    OccurrenceCounts,
    apply_filter,
    count_occurrences,
    dropout_ids,
    exact_l2_oracle,
    frequency_filter,
    mba_batch_indicator,
    mba_gradient_terms,
    mba_penalty,
)
from din_ctr.training import OptimizerConfig, RegularizerConfig, TrainState, make_batches, train_step
from toys import random_instances, toy_schema

TOY = toy_schema()


def histories(schema, lists, goods=0):
    """Instances whose goods history is given; the ad goods id is fixed."""
    return InstanceSet.from_instances(schema, [
        encode_instance([[0], [goods], [0], h, []], 1, f"u{i}", schema) for i, h in enumerate(lists)
    ])


def tables_for(schema, rng, dim=2):
    return {v: init_table(v, k, dim, rng, dtype=np.float64) for v, k in schema.vocabularies().items()}


def test_count_example(schema):
    c = count_occurrences(histories(schema, [[1], [1, 2], []], goods=6))
    assert c.get("goods", 1) == 2 and c.get("goods", 2) == 1
    assert c.as_dict("goods") == {1: 2, 2: 1, 6: 3}
    # never occurring → absent
    assert 5 not in c.as_dict("goods")


def test_count_shared_table_counts_samples_once(schema):
    # id 3 used both as the ad and in the history of one sample: one occurrence
    c = count_occurrences(histories(schema, [[3, 3, 1]], goods=3))
    assert c.get("goods", 3) == 1


def test_counts_tsv_round_trip(schema, tmp_path, batch):
    c = count_occurrences(batch)
    c.to_tsv(tmp_path / "counts.tsv")
    back = OccurrenceCounts.from_tsv(tmp_path / "counts.tsv", schema)
    for v in c.counts:
        np.testing.assert_array_equal(back.counts[v], c.counts[v])


def test_batch_indicator(schema):
    np.testing.assert_array_equal(mba_batch_indicator(histories(schema, [[1], [2]], goods=1), "goods"), [1, 2])
    np.testing.assert_array_equal(mba_batch_indicator(histories(schema, [[4], [4], [4]], goods=4), "goods"), [4])
    assert mba_batch_indicator(histories(schema, [[], []]), "cate").tolist() == [0]
    assert mba_batch_indicator(histories(schema, [[], []]).with_group(
        4, np.zeros(3, np.int64), np.zeros(0, np.int64)), "hist_cate").size == 0


def test_gradient_terms_example(schema):
    data = histories(schema, [[1], [1], [1], [1]], goods=0)
    counts = count_occurrences(data)
    assert counts.get("goods", 1) == 4
    tables = tables_for(schema, 0)
    tables["goods"].rows[1] = [2.0, 0.0]
    terms = mba_gradient_terms(histories(schema, [[1]]), counts, 0.01, tables)
    k = list(terms["goods"].ids).index(1)
    np.testing.assert_allclose(terms["goods"].values[k], [0.005, 0.0], rtol=1e-15)
    zero = mba_gradient_terms(histories(schema, [[1]]), counts, 0.0, tables)
    assert not zero["goods"].values.any()


def test_unknown_occurrence(schema):
    counts = count_occurrences(histories(schema, [[1]]))
    with pytest.raises(UnknownFeatureOccurrence):
        mba_gradient_terms(histories(schema, [[5]]), counts, 0.01, tables_for(schema, 0))


def test_oracle_examples(schema):
    data = InstanceSet.from_instances(schema, [encode_instance([[0], [2], [1], [], []], 0, "u", schema)])
    counts = count_occurrences(data)
    tables = tables_for(schema, 0)
    for t in tables.values():
        t.rows[:] = 0
    tables["goods"].rows[2] = [1.0, 1.0]
    assert exact_l2_oracle(data, counts, tables) == 2.0


def test_oracle_telescopes(batch):
    counts = count_occurrences(batch)
    tables = tables_for(batch.schema, 3)
    expected = sum(float(np.sum(t.rows[counts.counts[v] > 0] ** 2)) for v, t in tables.items())
    assert exact_l2_oracle(batch, counts, tables) == pytest.approx(expected, rel=1e-12)


@given(seed=st.integers(0, 10_000), n=st.integers(1, 20), bs=st.integers(1, 7))
def test_batch_partition_equals_per_sample(seed, n, bs):
    data = random_instances(TOY, n, seed)
    counts = count_occurrences(data)
    tables = tables_for(TOY, seed)
    batches = make_batches(n, bs, seed)
    whole = exact_l2_oracle(data, counts, tables)
    assert abs(exact_l2_oracle(data, counts, tables, batches) - whole) <= 1e-12 * max(1.0, whole)


@given(seed=st.integers(0, 10_000), n=st.integers(1, 12))
def test_mba_exact_when_ids_at_most_once_per_batch(seed, n):
    data = random_instances(TOY, n, seed)
    counts = count_occurrences(data)
    tables = tables_for(TOY, seed)
    batches = make_batches(n, 1, seed)  # one instance per batch: every id at most once
    whole = exact_l2_oracle(data, counts, tables)
    assert abs(mba_penalty(data, counts, tables, batches) - whole) <= 1e-12 * max(1.0, whole)


def test_four_batch_example(schema):
    # id 1 occurs in batches 1 and 3 (twice in batch 3), n_1 = 3
    data = histories(schema, [[1], [2], [1], [1], [2], [2], [], []], goods=0)
    counts = count_occurrences(data)
    assert counts.get("goods", 1) == 3
    tables = tables_for(schema, 0)
    for t in tables.values():
        t.rows[:] = 0
    tables["goods"].rows[1] = [1.0, 2.0]
    batches = [np.array([0, 1]), np.array([4, 5]), np.array([2, 3]), np.array([6, 7])]
    total = np.zeros(2)
    for rows in batches:
        terms = mba_gradient_terms(data.take(rows), counts, 0.01, tables)["goods"]
        total += dict(zip(terms.ids.tolist(), terms.values))[1] if 1 in terms.ids else 0
    np.testing.assert_allclose(total, (1 / 3 + 1 / 3) * 0.01 * np.array([1.0, 2.0]), rtol=1e-14)
    assert mba_penalty(data, counts, tables, batches) == pytest.approx(2 / 3 * 5.0, rel=1e-14)
    assert exact_l2_oracle(data, counts, tables, batches) == pytest.approx(5.0, rel=1e-14)


def test_dropout(batch):
    same = dropout_ids(batch, 0.0, 1)
    for g in range(batch.schema.n_groups):
        np.testing.assert_array_equal(same.indices[g], batch.indices[g])
    empty = dropout_ids(batch, 1.0, 1)
    assert empty.indices[3].size == 0 and empty.indices[4].size == 0
    for g in range(3):
        np.testing.assert_array_equal(empty.indices[g], batch.indices[g])
    a, b = dropout_ids(batch, 0.5, 7), dropout_ids(batch, 0.5, 7)
    np.testing.assert_array_equal(a.indptr[3], b.indptr[3])


def test_dropout_rate_concentration():
    schema = toy_schema(n_items=10_000, max_ids=10_000)
    data = histories(schema, [list(range(10_000))])
    kept = dropout_ids(data, 0.5, 0).indices[3].size
    assert abs(kept / 10_000 - 0.5) <= 0.02


def test_dropout_single_instance(schema):
    x = encode_instance([[0], [1], [0], [1, 2], [0]], 1, "u", schema)
    y = dropout_ids((x, schema), 1.0, 0)
    assert len(y.ids[3]) == 0 and list(y.ids[0]) == [0]


def test_frequency_filter_examples():
    counts = OccurrenceCounts({"v": np.array([0, 5, 3, 3])})
    assert frequency_filter(counts, 2, "v").tolist() == [1, 2]
    assert frequency_filter(counts, 1, "v").tolist() == [1]
    assert frequency_filter(counts, 10, "v").tolist() == [0, 1, 2, 3]


def test_apply_filter(schema):
    data = histories(schema, [[1, 2, 5], [5]], goods=5)
    out = apply_filter(data, {"goods": np.array([1, 5])})
    assert out.group_ids(3, 0).tolist() == [1, 5]
    assert out.group_ids(1, 0).tolist() == [5]  # ad group untouched


def test_mba_touches_only_batch_rows():
    """Sparse-touch invariant on every step of a 1k-instance run."""
    schema = toy_schema(n_items=400, n_cates=30, n_users=50, max_ids=5)
    data = random_instances(schema, 1000, 5)
    counts = count_occurrences(data)
    net = Network(schema, "din", 3, (4,), seed=0, dtype=np.float64)
    state = TrainState.create(OptimizerConfig("adam", 0.01, 1.0, 32))
    reg = RegularizerConfig("mba", 0.01)
    for rows in make_batches(len(data), 32, 0):
        b = data.take(rows)
        before = {v: t.rows.copy() for v, t in net.tables.items()}
        train_step(net, b, state, reg, counts)
        for v, t in net.tables.items():
            absent = np.setdiff1d(np.arange(t.cardinality), mba_batch_indicator(b, v))
            np.testing.assert_array_equal(t.rows[absent], before[v][absent])
            slots = state.optimizer.sparse[v].slot_of
            assert np.all(slots[np.flatnonzero(counts.counts[v] == 0)] < 0)
