"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, attribnet, dataio, dtree, pipeline
from .core import DataError, NumericalError, load_taxonomy, write_metadata
from .shapley import importance_report

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=80)


def parse_depth_grid(text: str) -> list[int | None]:
    """``2-12,none`` -> [2, 3, ..., 12, None]."""
    out = []
    for item in text.split(","):
        item = item.strip().lower()
        try:
            if item in ("none", "unlimited"):
                out.append(None)
            elif "-" in item:
                lo, hi = (int(v) for v in item.split("-"))
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(item))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad depth {item!r}") from None
    if not out or any(d is not None and d < 1 for d in out):
        raise argparse.ArgumentTypeError("depths must be positive integers or 'none'")
    return out


def parse_triple(text: str) -> tuple[int, int, int]:
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected TRAIN,DEV,EVAL integers, got {text!r}") from None
    if len(vals) != 3 or min(vals) < 0:
        raise argparse.ArgumentTypeError(f"expected three non-negative integers, got {text!r}")
    return vals


def build_parser() -> Parser:
    p = Parser(prog="probattr", formatter_class=_formatter,
               description="Probabilistic attribute embeddings, decision trees and Shapley "
                           "explanations for spoofed speech.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)
    sub.required = True

    def cmd(name, help_):
        return sub.add_parser(name, help=help_, description=help_, formatter_class=_formatter)

    def common(sp, data=True):
        sp.add_argument("--taxonomy", required=True,
                        help="taxonomy YAML file, or 'default' for the shipped one")
        if data:
            sp.add_argument("--metadata", required=True, help="metadata CSV (utt_id,split,label,attack_id)")
            sp.add_argument("--embeddings", required=True, help="embedding file (binary PAEB or CSV)")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")

    def task_kind(sp, allow_all=False):
        extra = ["all"] if allow_all else []
        sp.add_argument("--task", choices=list(pipeline.TASKS) + extra,
                        default="all" if allow_all else "detection", help="downstream task")
        sp.add_argument("--kind", choices=list(pipeline.KINDS) + extra,
                        default="all" if allow_all else "attrib",
                        help="embedding kind: raw CM (cm) or attribute (attrib)")

    def depth_grid(sp):
        sp.add_argument("--depth-grid", type=parse_depth_grid, default=pipeline.DEFAULT_DEPTH_GRID,
                        help="candidate tree depths, e.g. '2-12,none' (default: 2-12,none)")

    def training(sp):
        sp.add_argument("--epochs", type=int, default=100, help="training epochs (default: 100)")
        sp.add_argument("--lr", type=float, default=1e-4, help="Adam base learning rate (default: 1e-4)")
        sp.add_argument("--batch-size", type=int, default=64, help="minibatch size (default: 64)")

    def synthetic(sp):
        sp.add_argument("--dim", type=int, default=160, help="embedding dimension (default: 160)")
        sp.add_argument("--scale", type=float, default=10.0, help="class-separation scale (default: 10)")
        sp.add_argument("--noise", type=float, default=1.0, help="noise standard deviation (default: 1)")
        sp.add_argument("--counts", type=parse_triple, default=(200, 50, 50),
                        help="utterances per attack as TRAIN,DEV,EVAL (default: 200,50,50)")
        sp.add_argument("--bonafide", type=parse_triple, default=(200, 50, 50),
                        help="bonafide utterances as TRAIN,DEV,EVAL (default: 200,50,50)")
        sp.add_argument("--alias-count", type=int, default=0,
                        help="eval utterances per renamed known attack (default: 0)")
        sp.add_argument("--unknown-attacks", type=int, default=0,
                        help="number of eval-only unknown attacks (default: 0)")
        sp.add_argument("--unknown-count", type=int, default=0,
                        help="eval utterances per unknown attack (default: 0)")

    sp = cmd("gen-synth", "generate a synthetic metadata + embedding corpus")
    common(sp, data=False)
    synthetic(sp)
    sp.add_argument("--format", choices=["binary", "csv"], default="binary",
                    help="embedding file format (default: binary)")

    sp = cmd("train-attrib", "train one attribute classifier per attribute set")
    common(sp)
    training(sp)

    sp = cmd("embed", "extract probabilistic attribute embeddings")
    sp.add_argument("--taxonomy", required=True, help="taxonomy YAML file, or 'default'")
    sp.add_argument("--embeddings", required=True, help="CM embedding file")
    sp.add_argument("--nets", required=True, help="directory written by train-attrib")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int, default=0, help="accepted for uniformity; extraction is deterministic")
    sp.add_argument("--format", choices=["binary", "csv"], default="binary",
                    help="embedding file format (default: binary)")

    sp = cmd("train-tree", "fit a decision tree, tuning max depth on dev")
    common(sp)
    task_kind(sp)
    depth_grid(sp)

    sp = cmd("eval", "score a saved tree on dev and eval")
    common(sp)
    task_kind(sp)
    sp.add_argument("--tree", required=True, help="tree JSON written by train-tree")

    sp = cmd("explain", "Shapley importance of each feature, averaged over runs")
    common(sp)
    task_kind(sp)
    depth_grid(sp)
    sp.add_argument("--runs", type=int, default=5, help="trees (seeds) to average over (default: 5)")
    sp.add_argument("--depth", default=None,
                    help="fixed tree depth (integer or 'none') instead of tuning on --depth-grid")

    sp = cmd("run", "full pipeline: attribute nets, trees, metrics and Shapley reports")
    sp.add_argument("--taxonomy", required=True, help="taxonomy YAML file, or 'default'")
    sp.add_argument("--metadata", help="metadata CSV; omit both files to use synthetic data")
    sp.add_argument("--embeddings", help="embedding file; omit both files to use synthetic data")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    task_kind(sp, allow_all=True)
    depth_grid(sp)
    sp.add_argument("--runs", type=int, default=5, help="Shapley runs to average (default: 5)")
    sp.add_argument("--no-explain", action="store_true", help="skip Shapley reports")
    training(sp)
    synthetic(sp)
    return p


# -- helpers ----------------------------------------------------------------

def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="\n")


def _dataset(args) -> pipeline.Dataset:
    tax = load_taxonomy(args.taxonomy)
    return pipeline.load_dataset(tax, args.metadata, args.embeddings)


def _task_data(ds, task, F):
    if task == "detection":
        return pipeline.detection_data(ds, F)
    return pipeline.attribution_data(ds, F)


def _check_kind(ds, kind):
    if kind == "attrib" and ds.X.shape[1] != ds.tax.total:
        raise DataError(f"attribute embeddings must have {ds.tax.total} dimensions, got {ds.X.shape[1]}")


def _synthetic_options(args) -> dict:
    return {"counts": args.counts, "bonafide": args.bonafide, "alias_count": args.alias_count,
            "unknown_attacks": args.unknown_attacks, "unknown_count": args.unknown_count,
            "dim": args.dim, "scale": args.scale, "noise": args.noise}


def _train_config(args) -> attribnet.TrainConfig:
    return attribnet.TrainConfig(epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=args.seed)


# -- subcommands ------------------------------------------------------------

def cmd_gen_synth(args) -> None:
    tax = load_taxonomy(args.taxonomy)
    spec = pipeline.synthetic_spec(tax, _synthetic_options(args), args.seed)
    records, embs = dataio.generate_synthetic(spec)
    out = _out_dir(args)
    write_metadata(records, out / "metadata.csv")
    name = "embeddings.paeb" if args.format == "binary" else "embeddings.csv"
    dataio.write_embeddings(out / name, embs, args.format)
    print(f"wrote {len(records)} utterances to {out}")


def cmd_train_attrib(args) -> None:
    ds = _dataset(args)
    results = pipeline.train_attribute_nets(ds, _train_config(args))
    out = _out_dir(args)
    (out / "nets").mkdir(exist_ok=True)
    for i, r in enumerate(results):
        stem = out / "nets" / f"{i:02d}_{ds.tax.sets[i].name}"
        dataio.write_net(stem.with_suffix(".panw"), r.net)
        dataio.write_train_log(Path(f"{stem}_log.csv"), r.history)
        print(f"{ds.tax.sets[i].name}: best dev EER {min(r.dev_eer_curve):.4f} at epoch {r.best_epoch}")


def load_nets(directory: str | Path, tax) -> list[attribnet.AttribNet]:
    directory = Path(directory)
    if (directory / "nets").is_dir():
        directory = directory / "nets"
    files = sorted(directory.glob("*.panw"))
    if len(files) != tax.n_sets:
        raise DataError(f"{directory}: found {len(files)} networks, taxonomy has {tax.n_sets} sets")
    return [dataio.read_net(f) for f in files]


def cmd_embed(args) -> None:
    tax = load_taxonomy(args.taxonomy)
    nets = load_nets(args.nets, tax)
    embs = dataio.read_embeddings(args.embeddings)
    X = dataio.embedding_matrix(embs)
    P = attribnet.extract_embeddings(nets, tax, X, [e.utt_id for e in embs])
    out = _out_dir(args)
    name = "attrib_embeddings.paeb" if args.format == "binary" else "attrib_embeddings.csv"
    dataio.write_embeddings(out / name, P, args.format)
    print(f"wrote {len(P)} attribute embeddings ({tax.total} dims) to {out / name}")


def cmd_train_tree(args) -> None:
    ds = _dataset(args)
    _check_kind(ds, args.kind)
    data = _task_data(ds, args.task, ds.X)
    res = pipeline.fit_task(args.task, args.kind, data, args.depth_grid, args.seed)
    out = _out_dir(args)
    stem = f"{args.task}_{args.kind}"
    dataio.write_tree(out / f"tree_{stem}.json", res.tree)
    names, _ = pipeline.feature_names(ds.tax, args.kind, ds.X.shape[1])
    _write(out / f"tree_{stem}.txt", dtree.render(res.tree, names))
    _write(out / f"depth_{stem}.csv", pipeline.depth_table_csv(res.search))
    depth = res.search.best_depth
    print(f"max_depth={'none' if depth is None else depth} dev_accuracy={res.search.best_accuracy:.4f}")


def cmd_eval(args) -> None:
    ds = _dataset(args)
    _check_kind(ds, args.kind)
    tree = dataio.read_tree(args.tree)
    if tree.n_features != ds.X.shape[1]:
        raise DataError(f"tree expects {tree.n_features} features, embeddings have {ds.X.shape[1]}")
    data = _task_data(ds, args.task, ds.X)
    rows = pipeline.evaluate(tree, data)
    res = pipeline.TaskResult(args.task, args.kind,
                              dtree.DepthSearch(tree.max_depth, float("nan"), [], tree), rows)
    out = _out_dir(args)
    text = pipeline.metrics_csv([res])
    _write(out / f"metrics_{args.task}_{args.kind}.csv", text)
    sys.stdout.write(text)


def cmd_explain(args) -> None:
    ds = _dataset(args)
    _check_kind(ds, args.kind)
    data = _task_data(ds, args.task, ds.X)
    if args.depth is not None:
        try:
            depth = None if args.depth.lower() == "none" else int(args.depth)
        except ValueError:
            raise UsageError(f"bad --depth {args.depth!r}") from None
    else:
        depth = dtree.tune_max_depth(data.X["train"], data.y["train"], data.X["dev"], data.y["dev"],
                                     args.depth_grid, args.seed, data.classes).best_depth
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    names, sets = pipeline.feature_names(ds.tax, args.kind, ds.X.shape[1])
    rep = importance_report(data.X["train"], data.y["train"], data.X["dev"], depth,
                            [args.seed + r for r in range(args.runs)], names, sets, data.classes,
                            positive_class=data.positive)
    out = _out_dir(args)
    stem = f"shapley_{args.task}_{args.kind}"
    _write(out / f"{stem}.csv", rep.to_csv())
    _write(out / f"{stem}_plot.csv", rep.plot_csv())
    _write(out / f"{stem}.txt", rep.to_text())
    sys.stdout.write(rep.to_text(top=10))


def cmd_run(args) -> None:
    if (args.metadata is None) != (args.embeddings is None):
        raise UsageError("--metadata and --embeddings must be given together")
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    cfg = pipeline.ExperimentConfig(
        taxonomy=args.taxonomy, metadata=args.metadata, embeddings=args.embeddings,
        synthetic=_synthetic_options(args),
        tasks=list(pipeline.TASKS) if args.task == "all" else [args.task],
        kinds=list(pipeline.KINDS) if args.kind == "all" else [args.kind],
        train=_train_config(args), depth_grid=args.depth_grid, runs=args.runs, seed=args.seed,
        explain=not args.no_explain)
    out = _out_dir(args)
    pipeline.run(cfg, out)
    sys.stdout.write((out / "report.txt").read_text(encoding="utf-8"))


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "train-attrib": cmd_train_attrib,
    "embed": cmd_embed,
    "train-tree": cmd_train_tree,
    "eval": cmd_eval,
    "explain": cmd_explain,
    "run": cmd_run,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"probattr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"probattr: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"probattr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"probattr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":
    sys.exit(main())
