"""``din-ctr`` command line: prepare, train, eval, dump-attention, export-embeddings.

Exit codes: 0 ok, 1 I/O or malformed input, 2 usage or configuration,
3 numerical failure, 4 schema mismatch, 5 unsupported for this model kind.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import DatasetBundle, ingest_movielens, prepare_amazon, synth_generate
from .errors import (
    ConfigError,
    DataFormatError,
    NoAttention,
    NonFiniteGradient,
    SchemaError,
    SchemaMismatch,
)
from .features import DEFAULT_MAX_IDS, read_instances, read_schema
from .interest import write_attention_csv
from .metrics import MetricsReport
from .model import Network, attention_rows
from .training import train

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC, EXIT_SCHEMA, EXIT_CAPABILITY = range(6)

log = logging.getLogger("din_ctr")


class UsageError(Exception):
    pass


def _print_stats(stats: dict) -> None:
    for key in ("users", "goods", "categories", "samples", "train_instances", "test_instances"):
        if key in stats:
            print(f"{key}\t{stats[key]}")
    for key in sorted(set(stats) - {"users", "goods", "categories", "samples",
                                    "train_instances", "test_instances"}):
        print(f"{key}\t{stats[key]}")


def cmd_prepare(args) -> int:
    if args.dataset == "amazon":
        if not (args.reviews and args.meta):
            raise UsageError("--dataset amazon needs --reviews and --meta")
        bundle = prepare_amazon(args.reviews, args.meta, seed=args.seed,
                                max_behaviors=args.max_behaviors, strict=args.strict)
    elif args.dataset == "movielens":
        if not (args.ratings and args.movies):
            raise UsageError("--dataset movielens needs --ratings and --movies")
        bundle = ingest_movielens(args.ratings, args.movies, seed=args.seed,
                                  user_fraction=args.user_fraction, max_behaviors=args.max_behaviors)
    else:
        bundle = synth_generate(args.n_users, args.vocab_size, args.behaviors, args.clusters,
                                seed=args.seed, instances_per_user=args.instances_per_user,
                                max_behaviors=args.max_behaviors)
    bundle.save(args.out)
    _print_stats(bundle.stats)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig.from_mapping({})
    data_dir = args.data or cfg["data.dir"]
    if not data_dir:
        raise UsageError("no data directory: pass --data or set data.dir")
    bundle = DatasetBundle.load(data_dir)
    net = Network(bundle.schema, cfg["model.kind"], cfg["embedding.dim"], cfg["mlp.widths"],
                  cfg["activation.kind"], cfg["unit.hidden_width"], seed=cfg["seed"])
    if args.metrics:
        Path(args.metrics).write_text("")
    net, reports = train(net, bundle.train, bundle.test, cfg.optimizer(), cfg.regularizer(),
                         cfg["optimizer.epochs"], cfg["seed"], counts=bundle.counts,
                         metrics_log=args.metrics)
    save_checkpoint(net, args.out, cfg.snapshot())
    if reports:
        last = reports[-1]
        print(f"epoch {last.epoch} test_auc {last.test_auc} test_weighted_auc {last.test_wauc}")
    return EXIT_OK


def _checkpoint_and_test(args):
    schema = read_schema(Path(args.data) / "schema.tsv")
    net, manifest = load_checkpoint(args.checkpoint, expected_schema=schema)
    test = read_instances(Path(args.data) / "test.tsv", schema)
    return net, manifest, test


def cmd_eval(args) -> int:
    net, _, test = _checkpoint_and_test(args)
    p = net.predict_proba(test)
    report = MetricsReport.evaluate(test.user_keys, p, test.labels, model=net.kind)
    if args.baseline:
        base = MetricsReport.from_json_dict(json.loads(Path(args.baseline).read_text()))
        report.with_baseline(base.model or Path(args.baseline).stem, base)
    text = json.dumps(report.to_json_dict(), sort_keys=True, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_dump_attention(args) -> int:
    schema = read_schema(Path(args.data) / "schema.tsv")
    net, _ = load_checkpoint(args.checkpoint, expected_schema=schema)
    if net.kind != "din":
        raise NoAttention(f"checkpoint holds a {net.kind!r} model; attention needs din")
    test = read_instances(Path(args.data) / "test.tsv", schema)
    rows = attention_rows(net, test, args.limit, args.group)
    n = write_attention_csv(rows, args.out or sys.stdout)
    if args.out:
        print(f"wrote {n} rows to {args.out}")
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    net, _ = load_checkpoint(args.checkpoint)
    names = net.schema.names
    if args.group not in names:
        raise UsageError(f"unknown group {args.group!r}; known groups: {', '.join(names)}")
    table = net.tables[net.schema[args.group].vocab]
    out = open(args.out, "w", encoding="utf-8", newline="\n") if args.out else sys.stdout
    try:
        for j, row in enumerate(table.rows):
            out.write(str(j) + "\t" + "\t".join(f"{float(v):.9g}" for v in row) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="din-ctr", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="BLAS thread limit (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", parents=[common], help="build a dataset bundle")
    p.add_argument("--dataset", required=True, choices=("amazon", "movielens", "synth"))
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-behaviors", type=int, default=DEFAULT_MAX_IDS)
    p.add_argument("--reviews")
    p.add_argument("--meta")
    p.add_argument("--strict", action="store_true", help="fail on malformed lines instead of skipping")
    p.add_argument("--ratings")
    p.add_argument("--movies")
    p.add_argument("--user-fraction", type=float, default=1.0)
    p.add_argument("--n-users", type=int, default=1000)
    p.add_argument("--vocab-size", type=int, default=10000)
    p.add_argument("--behaviors", type=int, default=10)
    p.add_argument("--clusters", type=int, default=20)
    p.add_argument("--instances-per-user", type=int, default=10)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="JSONL file receiving one line per epoch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score the test split and write a metrics report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--baseline", help="report JSON of the baseline model")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-attention", parents=[common], help="attention weights of a DIN checkpoint as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--limit", type=int, default=10)
    p.add_argument("--group", help="behavior group (default: the first one)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump_attention)

    p = sub.add_parser("export-embeddings", parents=[common], help="write one embedding row per dense id as TSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--group", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return args.func(args)
    except UsageError as exc:
        print(f"din-ctr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"din-ctr: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteGradient as exc:
        print(f"din-ctr: non-finite gradient in {exc.tensor}", file=sys.stderr)
        return EXIT_NUMERIC
    except SchemaMismatch as exc:
        print(f"din-ctr: schema mismatch: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except NoAttention as exc:
        print(f"din-ctr: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except (DataFormatError, SchemaError) as exc:
        print(f"din-ctr: malformed input: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"din-ctr: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
