import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from din_ctr.errors import (
    DataFormatError,
    DuplicateGroupName,
    IdOutOfRange,
    InvalidCardinality,
    MissingGroupCategory,
    OneHotArity,
    SchemaError,
)
from din_ctr.features import (
    AD,
    CONTEXT,
    MULTI_HOT,
    ONE_HOT,
    USER_BEHAVIOR,
    USER_PROFILE,
    FeatureGroupSpec,
    FeatureSchema,
    InstanceSet,
    build_schema,
    dense_dimensionality,
    encode_instance,
    parse_schema,
    read_instances,
    read_schema,
    validate_instance,
    write_instances,
    write_schema,
)
from toys import random_instances, toy_schema


def four_group_schema():
    return build_schema([
        FeatureGroupSpec("weekday", 7, ONE_HOT, CONTEXT),
        FeatureGroupSpec("gender", 2, ONE_HOT, USER_PROFILE),
        FeatureGroupSpec("visited_cate_ids", 50, MULTI_HOT, USER_BEHAVIOR, 10, vocab="ad_cate_id"),
        FeatureGroupSpec("ad_cate_id", 50, ONE_HOT, AD),
    ])


def test_cardinalities_sum():
    s = build_schema([
        FeatureGroupSpec("g1", 7, ONE_HOT, AD),
        FeatureGroupSpec("g2", 2, MULTI_HOT, USER_BEHAVIOR, 2),
    ])
    assert s.total_dimensionality == 9
    assert s.n_groups == 2
    assert s.names == ["g1", "g2"]


def test_four_group_layout():
    s = four_group_schema()
    assert s.n_groups == 4
    assert s.total_dimensionality == 7 + 2 + 50 + 50
    inst = encode_instance([[4], [1], [3, 9], [9]], 1, "u", s)
    assert inst.ids[:2] == ((4,), (1,))
    assert inst.nnz == 1 + 1 + 2 + 1


def test_duplicate_name_rejected():
    with pytest.raises(DuplicateGroupName):
        build_schema([
            FeatureGroupSpec("cate_id", 3, ONE_HOT, AD),
            FeatureGroupSpec("cate_id", 3, MULTI_HOT, USER_BEHAVIOR, 2),
        ])


def test_zero_cardinality_rejected():
    with pytest.raises(InvalidCardinality):
        FeatureGroupSpec("g", 0)


def test_needs_behavior_and_ad_groups():
    with pytest.raises(MissingGroupCategory):
        build_schema([FeatureGroupSpec("g", 3, ONE_HOT, AD)])


def test_shared_vocab_must_agree():
    with pytest.raises(SchemaError):
        build_schema([
            FeatureGroupSpec("goods", 3, ONE_HOT, AD),
            FeatureGroupSpec("hist", 4, MULTI_HOT, USER_BEHAVIOR, 2, vocab="goods"),
        ])


def test_multi_hot_dedup_and_sort(schema):
    inst = encode_instance([[0], [1], [0], [3, 1, 3], []], 0, "u", schema)
    assert inst.ids[3] == (1, 3)
    assert inst.ids[4] == ()


def test_one_hot_arity(schema):
    with pytest.raises(OneHotArity):
        encode_instance([[0], [2, 5], [0], [], []], 0, "u", schema)


def test_id_out_of_range(schema):
    with pytest.raises(IdOutOfRange):
        encode_instance([[0], [7], [0], [], []], 0, "u", schema)


def test_truncation_keeps_most_recent():
    s = build_schema([
        FeatureGroupSpec("goods", 10, ONE_HOT, AD),
        FeatureGroupSpec("hist", 10, MULTI_HOT, USER_BEHAVIOR, 3, vocab="goods"),
    ])
    # chronological raw list: 5 and 6 are oldest
    inst = encode_instance([[0], [5, 6, 2, 9, 2, 1]], 1, "u", s)
    assert inst.ids[1] == (1, 2, 9)


@pytest.mark.parametrize("m,d,expected", [(4, 12, 48), (16, 12, 192), (1, 1, 1)])
def test_dense_dimensionality(m, d, expected):
    groups = [FeatureGroupSpec("ad", 3, ONE_HOT, AD)]
    groups += [FeatureGroupSpec(f"b{i}", 3, MULTI_HOT, USER_BEHAVIOR, 2) for i in range(m - 1)]
    # a single-group space is below what build_schema accepts
    schema = FeatureSchema(tuple(groups)) if m == 1 else build_schema(groups)
    assert dense_dimensionality(schema, d) == expected


raw_lists = st.lists(st.integers(0, 6), max_size=12)
TOY = toy_schema()


@given(hist=raw_lists, cates=st.lists(st.integers(0, 2), max_size=6),
       user=st.integers(0, 4), item=st.integers(0, 6), label=st.integers(0, 1))
def test_encode_then_validate(hist, cates, user, item, label):
    inst = encode_instance([[user], [item], [item % 3], hist, cates], label, "k", TOY)
    validate_instance(inst, TOY)
    assert inst.nnz == 3 + len(inst.ids[3]) + len(inst.ids[4])
    assert set(inst.ids[3]) <= set(hist)
    assert len(inst.ids[3]) == min(4, len(set(hist)))


def test_instance_set_round_trip(tmp_path, schema):
    data = random_instances(schema, 20, 3)
    write_schema(schema, tmp_path / "schema.tsv")
    write_instances(data, tmp_path / "x.tsv")
    back = read_instances(tmp_path / "x.tsv", read_schema(tmp_path / "schema.tsv"))
    assert list(back) == list(data)
    text = (tmp_path / "x.tsv").read_text().splitlines()
    assert all(len(line.split("\t")) == 2 + schema.n_groups for line in text)


def test_empty_list_literal(tmp_path, schema):
    inst = encode_instance([[0], [1], [2], [], [1]], 1, "u9", schema)
    write_instances(InstanceSet.from_instances(schema, [inst]), tmp_path / "x.tsv")
    assert (tmp_path / "x.tsv").read_text() == "u9\t1\t0\t1\t2\t-\t1\n"


def test_schema_file_optional_vocab_column():
    s = parse_schema("ad\t4\tone-hot\tad\t1\nhist\t4\tmulti-hot\tuser-behavior\t3\tad\n")
    assert s["hist"].vocab == "ad"
    assert parse_schema(s.to_tsv()) == s


def test_malformed_instance_line(tmp_path, schema):
    (tmp_path / "bad.tsv").write_text("u\t1\t0\t1\t2\t-\t1\nu\t1\t0\tx\t2\t-\t1\n")
    with pytest.raises(DataFormatError) as exc:
        read_instances(tmp_path / "bad.tsv", schema)
    assert exc.value.line == 2


def test_take_and_concatenate(schema):
    data = random_instances(schema, 10, 1)
    rows = np.array([7, 2, 2, 0])
    sub = data.take(rows)
    assert [sub[i] for i in range(4)] == [data[int(r)] for r in rows]
    both = InstanceSet.concatenate([data.take(np.arange(4)), data.take(np.arange(4, 10))])
    assert list(both) == list(data)
