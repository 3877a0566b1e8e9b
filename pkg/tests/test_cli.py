import csv
import json

import numpy as np
import pytest

from din_ctr.checkpoint import load_checkpoint
from din_ctr.cli import main
from din_ctr.config import RunConfig
from din_ctr.errors import ConfigError

SMALL = ["--n-users", "60", "--vocab-size", "200", "--behaviors", "6", "--clusters", "4",
         "--instances-per-user", "5"]
TRAIN_CFG = """\
model.kind = din
embedding.dim = 4
mlp.widths = 8,4
unit.hidden_width = 6
optimizer.kind = adam
optimizer.lr = 0.01
optimizer.decay = 1.0
optimizer.batch_size = 16
optimizer.epochs = 2
reg.kind = mba
reg.lambda = 0.01
seed = 3
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["prepare", "--dataset", "synth", "--out", str(d / "data"), "--seed", "1", *SMALL]) == 0
    (d / "din.cfg").write_text(TRAIN_CFG)
    (d / "base.cfg").write_text(TRAIN_CFG.replace("model.kind = din", "model.kind = base"))
    for kind in ("din", "base"):
        assert main(["train", "--config", str(d / f"{kind}.cfg"), "--data", str(d / "data"),
                     "--out", str(d / f"{kind}.ckpt"), "--metrics", str(d / f"{kind}.jsonl")]) == 0
    return d


def test_prepare_outputs(workdir, tmp_path, capsys):
    for name in ("schema.tsv", "train.tsv", "test.tsv", "counts.tsv", "vocab.tsv", "stats.json"):
        assert (workdir / "data" / name).exists()
    assert main(["prepare", "--dataset", "synth", "--out", str(tmp_path / "again"), "--seed", "1", *SMALL]) == 0
    assert "users\t60" in capsys.readouterr().out
    for name in ("schema.tsv", "train.tsv", "test.tsv", "counts.tsv"):
        assert (tmp_path / "again" / name).read_bytes() == (workdir / "data" / name).read_bytes()


def test_prepare_movielens_needs_movies(tmp_path):
    (tmp_path / "r.csv").write_text("userId,movieId,rating,timestamp\n1,1,4.0,1\n")
    assert main(["prepare", "--dataset", "movielens", "--ratings", str(tmp_path / "r.csv"),
                 "--out", str(tmp_path / "d")]) == 2


def test_prepare_malformed_input_names_line(tmp_path, capsys):
    (tmp_path / "r.csv").write_text("userId,movieId,rating,timestamp\n1,1,4.0,1\n1,2,x,2\n")
    (tmp_path / "m.csv").write_text("movieId,title,genres\n1,a,Drama\n2,b,Action\n")
    code = main(["prepare", "--dataset", "movielens", "--ratings", str(tmp_path / "r.csv"),
                 "--movies", str(tmp_path / "m.csv"), "--out", str(tmp_path / "d")])
    assert code == 1
    assert "r.csv:3" in capsys.readouterr().err


def test_train_outputs(workdir, capsys):
    lines = [json.loads(x) for x in (workdir / "din.jsonl").read_text().splitlines()]
    assert [x["epoch"] for x in lines] == [1, 2]
    net, manifest = load_checkpoint(workdir / "din.ckpt")
    assert net.kind == "din" and manifest["config"]["reg.lambda"] == 0.01


def test_train_is_deterministic(workdir, tmp_path):
    assert main(["train", "--config", str(workdir / "din.cfg"), "--data", str(workdir / "data"),
                 "--out", str(tmp_path / "again.ckpt")]) == 0
    assert (tmp_path / "again.ckpt").read_bytes() == (workdir / "din.ckpt").read_bytes()


def test_train_config_errors(workdir, tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("reg.kind = mba\n")
    assert main(["train", "--config", str(tmp_path / "bad.cfg"), "--data", str(workdir / "data"),
                 "--out", str(tmp_path / "x.ckpt")]) == 2
    assert "reg.lambda" in capsys.readouterr().err
    (tmp_path / "bad2.cfg").write_text("model.knd = din\n")
    assert main(["train", "--config", str(tmp_path / "bad2.cfg"), "--data", str(workdir / "data"),
                 "--out", str(tmp_path / "x.ckpt")]) == 2
    assert "model.knd" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_non_finite_exits_3(workdir, tmp_path, capsys):
    (tmp_path / "hot.cfg").write_text("model.kind = base\nembedding.dim = 4\nmlp.widths = 8\n"
                                      "optimizer.lr = 1e30\noptimizer.epochs = 1\n")
    assert main(["train", "--config", str(tmp_path / "hot.cfg"), "--data", str(workdir / "data"),
                 "--out", str(tmp_path / "x.ckpt")]) == 3
    assert "non-finite gradient in" in capsys.readouterr().err


def test_default_config_values():
    v = RunConfig.from_mapping({}).values
    assert (v["optimizer.lr"], v["optimizer.decay"], v["optimizer.batch_size"]) == (1.0, 0.1, 32)


@pytest.mark.parametrize("text,key", [
    ("embedding.dim = twelve", "embedding.dim"),
    ("mlp.widths = 8,,4", "mlp.widths"),
    ("optimizer.kind = lbfgs", "optimizer.kind"),
    ("reg.kind = filter", "reg.filter_top_n"),
    ("seed = 1\nseed = 2", "seed"),
    ("optimizer.decay = 0", "optimizer.decay"),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as err:
        RunConfig.from_text(text)
    assert err.value.key == key


def test_eval_and_self_baseline(workdir, tmp_path, capsys):
    out = tmp_path / "din.json"
    assert main(["eval", "--checkpoint", str(workdir / "din.ckpt"), "--data", str(workdir / "data"),
                 "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert 0 <= report["auc"] <= 1 and report["model"] == "din"
    assert json.loads(capsys.readouterr().out) == report
    assert main(["eval", "--checkpoint", str(workdir / "din.ckpt"), "--data", str(workdir / "data"),
                 "--baseline", str(out)]) == 0
    again = json.loads(capsys.readouterr().out)
    assert again["rela_impr_vs"]["value_pct"] == 0.0


def test_eval_missing_checkpoint(workdir, tmp_path, capsys):
    missing = tmp_path / "nope.ckpt"
    assert main(["eval", "--checkpoint", str(missing), "--data", str(workdir / "data")]) == 1
    assert str(missing) in capsys.readouterr().err


def test_eval_schema_mismatch(workdir, tmp_path):
    assert main(["prepare", "--dataset", "synth", "--out", str(tmp_path / "other"), "--n-users", "20",
                 "--vocab-size", "50", "--clusters", "3"]) == 0
    assert main(["eval", "--checkpoint", str(workdir / "din.ckpt"), "--data", str(tmp_path / "other")]) == 4


def test_dump_attention(workdir, tmp_path):
    out = tmp_path / "att.csv"
    assert main(["dump-attention", "--checkpoint", str(workdir / "din.ckpt"), "--data", str(workdir / "data"),
                 "--limit", "10", "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["user_key", "candidate_id", "behavior_index", "behavior_id", "weight"]
    assert 0 < len(rows) - 1 <= 10 * 6
    assert main(["dump-attention", "--checkpoint", str(workdir / "base.ckpt"),
                 "--data", str(workdir / "data")]) == 5


def test_export_embeddings(workdir, tmp_path):
    out = tmp_path / "emb.tsv"
    assert main(["export-embeddings", "--checkpoint", str(workdir / "din.ckpt"), "--group", "goods_id",
                 "--out", str(out)]) == 0
    table = np.loadtxt(out, delimiter="\t")
    assert table.shape == (200, 5)
    np.testing.assert_array_equal(table[:, 0], np.arange(200))
    net, _ = load_checkpoint(workdir / "din.ckpt")
    np.testing.assert_array_equal(table[:, 1:].astype(np.float32), net.tables["goods_id"].rows)
    assert main(["export-embeddings", "--checkpoint", str(workdir / "din.ckpt"), "--group", "foo"]) == 2


def test_usage_errors():
    with pytest.raises(SystemExit) as err:
        main(["bogus"])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main(["train"])
    assert err.value.code == 2
