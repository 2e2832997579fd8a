"""Command-line interface: ``toxispan <command> [options]``.

Exit codes:
  0  success
  2  usage or configuration error
  3  input/output error (missing or unwritable file)
  4  malformed data (bad CSV, prediction file or model file)
  5  training diverged (non-finite loss)

On failure a single line ``error<TAB><category><TAB><message>`` is written to
stderr, where category is one of usage, config, io, data, nan.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from toxispan.ablation import VARIANTS, ablate, format_table
from toxispan.config import ConfigError, RunConfig, load_config
from toxispan.corpus import CorpusError, SplitSpec, as_unlabeled, generate_synthetic, load_csv, split, write_csv
from toxispan.evaluation import breakdown
from toxispan.model import ConfigurationError, Labeler, TrainingError
from toxispan.selftrain import SslError, SslPlan, run_ssl
from toxispan.spans import PredictionFileError, ensemble, predict_corpus, read_predictions, write_predictions

EXIT_USAGE, EXIT_IO, EXIT_DATA, EXIT_NAN = 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, category: str, code: int, msg: str):
        super().__init__(msg)
        self.category = category
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", EXIT_USAGE, f"{self.prog}: {message}")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return value == "on"


def _config(args, **overrides) -> RunConfig:
    return load_config(getattr(args, "config", None), **overrides)


def _require(path: str, what: str) -> str:
    if not path:
        raise CliError("usage", EXIT_USAGE, f"missing {what} path")
    return path


def cmd_prepare(args) -> None:
    docs = load_csv(args.input)
    spec = SplitSpec.parse(args.splits, args.seed)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for name, part in zip(("train", "dev", "test"), split(docs, spec)):
        write_csv(part, outdir / f"{name}.csv")
        print(f"{name}\t{len(part)}")


def cmd_synth(args) -> None:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    docs = generate_synthetic(args.docs, seed=args.seed, empty_frac=args.empty_frac)
    write_csv(docs, outdir / "corpus.csv")
    print(f"corpus\t{len(docs)}")
    if args.splits:
        for name, part in zip(("train", "dev", "test"), split(docs, SplitSpec.parse(args.splits, args.seed))):
            write_csv(part, outdir / f"{name}.csv")
            print(f"{name}\t{len(part)}")
    if args.pool:
        # different stream from the labeled corpus, denser in toxic words
        pool = generate_synthetic(args.pool, seed=args.seed + 1, empty_frac=0.0, toxic_slot_prob=1.0)
        write_csv(as_unlabeled(pool), outdir / "pool.csv")
        print(f"pool\t{len(pool)}")


def cmd_train(args) -> None:
    cfg = _config(args, train=args.train, dev=args.dev, loss=args.loss, alpha=args.alpha, gamma=args.gamma,
                  epochs=args.epochs, model=args.out)
    train_docs = load_csv(_require(cfg.train, "--train"))
    dev_docs = load_csv(cfg.dev) if cfg.dev else []
    out = _require(cfg.model, "--out")
    labeler, log = cfg.train_settings().fit(train_docs, dev_docs)
    labeler.save(out)
    Path(out + ".log.tsv").write_text(log.to_tsv(), encoding="utf-8")
    Path(out + ".config").write_text(cfg.dump(), encoding="utf-8")
    best = log.best
    if best is not None:
        print(f"best_epoch\t{log.best_epoch}")
        print(f"dev_token_f1\t{best.dev_token_f1!r}")
        if best.dev_span_f1 is not None:
            print(f"dev_span_f1\t{best.dev_span_f1!r}")


def cmd_predict(args) -> None:
    labeler = Labeler.load(args.model)
    docs = load_csv(args.input, allow_unlabeled=True)
    write_predictions(predict_corpus(docs, labeler, append_fullstop=args.append_fullstop), args.out)


def cmd_eval(args) -> None:
    gold_docs = load_csv(args.gold)
    preds = {p.doc_id: p.offsets for p in read_predictions(args.pred)}
    golds = {d.id: d.gold for d in gold_docs}
    try:
        report = breakdown(preds, golds, {d.id: d.text for d in gold_docs})
    except KeyError as exc:
        raise CliError("data", EXIT_DATA, str(exc.args[0])) from None
    if not args.breakdown:
        report.buckets = []
    sys.stdout.write(report.to_lines() if args.format == "lines" else report.to_table())


def cmd_ssl(args) -> None:
    cfg = _config(args, train=args.train, dev=args.dev, pool=args.pool, ssl_iterations=args.iterations,
                  model=args.out)
    train_docs = load_csv(_require(cfg.train, "--train"))
    dev_docs = load_csv(cfg.dev) if cfg.dev else []
    pool = load_csv(_require(cfg.pool, "--pool"), allow_unlabeled=True)
    out = _require(cfg.model, "--out")
    plan = SslPlan(train_docs, as_unlabeled(pool), cfg.ssl_iterations, cfg.ssl_seed)
    labeler, log = run_ssl(plan, cfg.train_settings(), dev_docs)
    labeler.save(out)
    Path(out + ".ssl.tsv").write_text(log.to_tsv(), encoding="utf-8")
    sys.stdout.write(log.to_tsv())


def cmd_ensemble(args) -> None:
    systems = [read_predictions(p) for p in args.preds]
    try:
        combined = ensemble(systems)
    except ValueError as exc:
        raise CliError("data", EXIT_DATA, str(exc)) from None
    write_predictions(combined, args.out)


def cmd_ablate(args) -> None:
    cfg = _config(args, train=args.train, dev=args.dev)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise CliError("usage", EXIT_USAGE, f"unknown variants {bad}; choose from {','.join(VARIANTS)}")
    rows = ablate(load_csv(_require(cfg.train, "--train")), load_csv(_require(cfg.dev, "--dev")),
                  variants, cfg.train_settings())
    table = format_table(rows)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="toxispan",
        description="Toxic span detection toolkit.",
        epilog=__doc__.split("\n", 2)[2],
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="split a corpus CSV into train/dev/test")
    p.add_argument("--input", required=True)
    p.add_argument("--splits", default="80:10:10")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--docs", type=int, default=2500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--empty-frac", type=float, default=0.05)
    p.add_argument("--splits", default="80:10:10", help="also write train/dev/test ('' to skip)")
    p.add_argument("--pool", type=int, default=0, help="also write an unlabeled pool of this size")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a labeler")
    p.add_argument("--config")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--loss", choices=("ce", "wce", "dice"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write toxic offsets for a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--append-fullstop", type=_on_off, default=False, metavar="{on,off}")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--breakdown", action="store_true", help="add empty / non-empty gold buckets")
    p.add_argument("--format", choices=("table", "lines"), default="table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ssl", help="self-training with an unlabeled pool")
    p.add_argument("--config")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--pool")
    p.add_argument("--iterations", type=int)
    p.add_argument("--out", help="model file")
    p.set_defaults(func=cmd_ssl)

    p = sub.add_parser("ensemble", help="majority-vote several prediction files")
    p.add_argument("--preds", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("ablate", help="retrain with each cleaning step disabled")
    p.add_argument("--config")
    p.add_argument("--train")
    p.add_argument("--dev")
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)
    return parser


def _fail(category: str, code: int, msg: str) -> int:
    msg = " ".join(str(msg).split())
    print(f"error\t{category}\t{msg}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as exc:
        return _fail(exc.category, exc.code, str(exc))
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except CliError as exc:
        return _fail(exc.category, exc.code, str(exc))
    except TrainingError as exc:
        return _fail("nan", EXIT_NAN, str(exc))
    except ConfigError as exc:
        return _fail("config", EXIT_USAGE, str(exc))
    except (CorpusError, PredictionFileError, ConfigurationError, SslError) as exc:
        return _fail("data", EXIT_DATA, str(exc))
    except OSError as exc:
        return _fail("io", EXIT_IO, str(exc))
    except ValueError as exc:
        return _fail("config", EXIT_USAGE, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
