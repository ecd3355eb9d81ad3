"""``binsim`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Errors are reported on stderr as a one-line JSON object.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, i2v, nn, s2v, synth
from ._kernels import BACKEND
from .cfg import CFGError, Dataset, ParseError, cfg_tokens, filter_by_size, load_dataset, save_dataset
from .evaluation import auc, confusion, kfold_run, roc

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 by default
        raise UsageError(f"{self.prog}: {message}")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _file_sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_dataset(path, strict: bool) -> Dataset:
    ds = load_dataset(path, strict=strict)
    for err in ds.errors:
        logging.getLogger("binsim").warning("%s: %s", path, err)
    if len(ds) == 0:
        raise DataError(f"{path}: dataset is empty")
    return ds


def _report_base(command: str, args: argparse.Namespace) -> dict:
    resolved = {k: v for k, v in vars(args).items() if k not in ("func",)}
    return {"command": command, "version": __version__, "args": resolved}


# -- synth-gen ----------------------------------------------------------------------


def cmd_synth_gen(args) -> dict:
    vc = synth.VariantConfig(args.substitute, args.rename, args.nop, args.split, args.merge, seed=args.seed)
    ds, corpus = synth.gen_dataset(args.sources, args.variants, vc, seed=args.seed)
    save_dataset(ds, args.out)
    if args.corpus:
        with open(args.corpus, "w", encoding="utf-8") as fh:
            i2v.write_corpus(corpus, fh)
    return {"cfgs": len(ds), "groups": len(ds.groups), "variant_config": asdict(vc)}


# -- i2v ----------------------------------------------------------------------------


def cmd_i2v_train(args) -> dict:
    with open(args.corpus, encoding="utf-8") as fh:
        corpus = i2v.read_corpus(fh)
    if not any(corpus):
        raise DataError(f"{args.corpus}: corpus is empty")
    config = i2v.SkipGramConfig(
        dim=args.dim, window=args.window, min_count=args.min_count, negatives=args.negatives,
        epochs=args.epochs, lr=args.lr, subsample=args.subsample, seed=args.seed, threads=args.threads,
    )
    vocab = i2v.build_vocab(corpus, args.min_count)
    if args.random:
        table = i2v.random_table(vocab, args.dim, seed=args.seed, arch=args.arch)
    else:
        table = i2v.train_skipgram(corpus, vocab, config, arch=args.arch)
    i2v.save_table_file(table, args.out)
    return {"config": asdict(config), "vocab": len(vocab), "losses": table.losses,
            "eval_losses": table.eval_losses, "random": args.random}


def cmd_i2v_query(args) -> dict:
    table = i2v.load_table_file(args.table)
    try:
        if args.query == "nn":
            hits = i2v.nearest_neighbors(table, args.token, args.k)
            return {"query": args.token, "neighbors": [{"token": t, "cosine": c} for t, c in hits]}
        answer = i2v.analogy(table, args.a, args.b, args.c)
    except KeyError as exc:
        raise DataError(str(exc.args[0]) if exc.args else "unknown token") from None
    return {"a": args.a, "b": args.b, "c": args.c, "answer": answer}


# -- model construction ---------------------------------------------------------


def _model_config(args) -> s2v.ModelConfig:
    return s2v.ModelConfig(
        extractor=args.extractor, static=args.static, p=args.p, T=args.T, ell=args.ell, m=args.m,
        max_vertices=args.max_vertices, imm_threshold=args.imm_threshold, mu_init=args.mu_init,
        neighbors=args.neighbors, seed=args.seed,
    )


def _table_for(args, dataset: Dataset) -> i2v.EmbeddingTable | None:
    if args.extractor == "mfe":
        if args.table:
            raise UsageError("--table makes no sense with --extractor mfe")
        return None
    if args.extractor == "random":
        if args.table:
            ref = i2v.load_table_file(args.table)
            vocab, dim = ref.vocabulary(), ref.dim
        else:
            vocab = i2v.build_vocab([cfg_tokens(c, args.imm_threshold) for c in dataset], args.min_count)
            dim = args.dim
        return i2v.random_table(vocab, dim, seed=args.seed)
    if not args.table:
        raise UsageError(f"--extractor {args.extractor} needs --table")
    return i2v.load_table_file(args.table)


def _filtered(args, dataset: Dataset) -> tuple[Dataset, float]:
    kept, frac = filter_by_size(dataset, args.max_vertices)
    if len(kept) == 0:
        raise DataError(f"no CFG has at most {args.max_vertices} vertices")
    return kept, frac


def _train_config(args) -> s2v.TrainConfig:
    return s2v.TrainConfig(batch_size=args.batch, lr=args.lr, epochs=args.epochs, seed=args.seed)


def cmd_train(args) -> dict:
    dataset, removed = _filtered(args, _load_dataset(args.dataset, args.strict))
    table = _table_for(args, dataset)
    model = s2v.GraphEmbeddingModel.create(_model_config(args), table)
    tc = _train_config(args)
    res = s2v.train(model, dataset, tc)
    extra = {"train": asdict(tc)}
    table_ref = None
    if args.table_ref and args.table:
        table_ref = str(args.table)
    s2v.save_model(model, args.out, table_ref=table_ref, extra=extra)
    splits = res.splits or ()
    return {
        "model_config": asdict(model.config),
        "train_config": asdict(tc),
        "seed": args.seed,
        "history": res.history,
        "initial_val": res.initial,
        "best_epoch": res.best_epoch,
        "test": res.test,
        "removed_fraction": removed,
        "split_groups": [len(s.groups) for s in splits],
        "checkpoint_sha256": _file_sha(args.out),
        "backend": BACKEND,
    }


def _load_model(args) -> tuple[s2v.GraphEmbeddingModel, dict]:
    table = i2v.load_table_file(args.table) if getattr(args, "table", None) else None
    model = s2v.load_model(args.model, table)
    obj = json.loads(Path(args.model).read_text(encoding="utf-8"))
    return model, obj


def cmd_embed(args) -> dict:
    model, _ = _load_model(args)
    dataset = _load_dataset(args.dataset, args.strict)
    cfgs = list(dataset.cfgs)
    version = _file_sha(args.model)[:16]
    vectors = model.embed(cfgs)
    with open(args.out, "w", encoding="utf-8") as fh:
        for cfg, vec in zip(cfgs, vectors):
            fh.write(json.dumps({"id": cfg.id, "vector": [float(x) for x in vec], "model_version": version}) + "\n")
    return {"embedded": len(cfgs), "model_version": version, "dim": int(vectors.shape[1]) if len(cfgs) else 0}


def load_db(path) -> tuple[list[str], np.ndarray, str]:
    ids: list[str] = []
    rows: list[list[float]] = []
    versions: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ids.append(str(rec["id"]))
                rows.append([float(x) for x in rec["vector"]])
                versions.add(str(rec.get("model_version", "")))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{n}: bad record ({exc})") from None
            if len(rows[-1]) != len(rows[0]):
                raise DataError(f"{path}:{n}: vector dimension {len(rows[-1])} != {len(rows[0])}")
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate ids")
    if len(versions) > 1:
        raise DataError(f"{path}: records come from different models")
    return ids, np.asarray(rows, dtype=np.float64).reshape(len(rows), -1), versions.pop() if versions else ""


def search(ids: list[str], db: np.ndarray, query: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Linear scan by cosine; ties broken by id."""
    qn = np.linalg.norm(query)
    norms = np.linalg.norm(db, axis=1)
    if qn == 0:
        raise DataError("query vector has zero norm")
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(norms > 0, db @ query / (norms * qn), -np.inf)
    order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))
    return [(ids[i], float(sims[i])) for i in order[:k]]


def cmd_search(args) -> dict:
    ids, db, version = load_db(args.db)
    if args.query_id is not None:
        if args.query_id not in ids:
            raise DataError(f"id {args.query_id!r} not in {args.db}")
        q = db[ids.index(args.query_id)]
    else:
        try:
            q = np.asarray(json.loads(args.query_vector), dtype=np.float64).reshape(-1)
        except (json.JSONDecodeError, ValueError, TypeError) as exc:
            raise UsageError(f"--query-vector must be a JSON list of numbers ({exc})") from None
        if q.shape[0] != db.shape[1]:
            raise DataError(f"query has dimension {q.shape[0]}, database {db.shape[1]}")
    hits = search(ids, db, q, args.k)
    return {"model_version": version, "results": [{"rank": r + 1, "id": i, "cosine": c} for r, (i, c) in enumerate(hits)]}


def cmd_eval(args) -> dict:
    model, obj = _load_model(args)
    tc = s2v.TrainConfig(**{**asdict(s2v.TrainConfig()), **obj.get("extra", {}).get("train", {})})
    tc.split = tuple(tc.split)
    seed = tc.seed if args.seed is None else args.seed
    dataset, removed = filter_by_size(_load_dataset(args.dataset, args.strict), model.config.max_vertices)
    if args.split == "all":
        pairs = s2v.generate_pairs(dataset, s2v.derive_seed(seed, "all"), "all")
    else:
        parts = dict(zip(("train", "val", "test"), s2v.split_dataset(dataset, tc.split, s2v.derive_seed(seed, "split"))))
        tag_seed = s2v.derive_seed(seed, args.split) if args.split != "train" else s2v.derive_seed(seed, "train", 1)
        pairs = s2v.generate_pairs(parts[args.split], tag_seed, args.split)
    scores = s2v.score_pairs(model, pairs, dataset.by_id)
    y = pairs.labels
    curve = roc(scores, y)
    if args.roc:
        Path(args.roc).write_text(curve.to_csv(), encoding="utf-8")
    return {
        "split": args.split,
        "seed": seed,
        "pairs": len(pairs),
        "auc": auc(scores, y),
        "roc_area": curve.area(),
        "confusion": confusion(scores, y, args.threshold),
        "removed_fraction": removed,
        "model_sha256": _file_sha(args.model),
        "model_config": obj.get("config"),
    }


def cmd_kfold(args) -> dict:
    dataset, removed = _filtered(args, _load_dataset(args.dataset, args.strict))
    table = _table_for(args, dataset)
    config = _model_config(args)
    res = kfold_run(dataset, args.k, _train_config(args),
                    make_model=lambda: s2v.GraphEmbeddingModel.create(config, table), seed=args.seed)
    return {
        "model_config": asdict(config),
        "train_config": asdict(_train_config(args)),
        "seed": args.seed,
        "k": args.k,
        "aucs": res.aucs,
        "mean": res.mean,
        "std": res.std,
        "folds": res.plan.folds(),
        "details": res.details,
        "removed_fraction": removed,
    }


# -- parser -------------------------------------------------------------------------


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True)
    p.add_argument("--extractor", choices=s2v.EXTRACTORS, default="mean")
    p.add_argument("--static", type=_bool, default=True, metavar="{true,false}")
    p.add_argument("--table", help="instruction embedding table (i2v extractors)")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=250)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--p", type=int, default=64, help="graph embedding size")
    p.add_argument("--T", type=int, default=2, help="propagation rounds")
    p.add_argument("--ell", type=int, default=2, help="layers of the neighbor network")
    p.add_argument("--m", type=int, default=150, help="instructions kept per vertex")
    p.add_argument("--max-vertices", type=int, default=100)
    p.add_argument("--imm-threshold", type=int, default=5000)
    p.add_argument("--mu-init", choices=("random", "zeros"), default="random")
    p.add_argument("--neighbors", choices=("undirected", "successors", "predecessors"), default="undirected")
    p.add_argument("--dim", type=int, default=100, help="random-table dimension when no --table is given")
    p.add_argument("--min-count", type=int, default=8, help="random-table vocabulary cutoff")
    p.add_argument("--report")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="binsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"binsim {__version__} ({BACKEND})")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--strict", action="store_true", help="abort on the first malformed dataset line")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-gen", help="generate a synthetic dataset and corpus")
    p.add_argument("--sources", type=int, required=True)
    p.add_argument("--variants", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--corpus")
    for name, default in (("substitute", 0.3), ("rename", 0.3), ("nop", 0.03), ("split", 0.08), ("merge", 0.08)):
        p.add_argument(f"--{name}", type=float, default=default)
    p.add_argument("--report")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("i2v-train", help="train skip-gram instruction embeddings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--min-count", type=int, default=8)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--subsample", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--threads", type=int, default=1, help="lock-free parallel training (not reproducible)")
    p.add_argument("--arch", default="")
    p.add_argument("--random", action="store_true", help="emit a random table instead of training")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_i2v_train)

    p = sub.add_parser("i2v-query", help="nearest-neighbor or analogy queries on a table")
    qs = p.add_subparsers(dest="query", required=True, parser_class=_Parser)
    q = qs.add_parser("nn")
    q.add_argument("--table", required=True)
    q.add_argument("--token", required=True)
    q.add_argument("--k", type=int, default=10)
    q.add_argument("--report")
    q.set_defaults(func=cmd_i2v_query)
    q = qs.add_parser("analogy", help="token nearest to b - a + c")
    q.add_argument("--table", required=True)
    for name in ("a", "b", "c"):
        q.add_argument(f"--{name}", required=True)
    q.add_argument("--report")
    q.set_defaults(func=cmd_i2v_query)

    p = sub.add_parser("train", help="train a siamese graph embedding model")
    _model_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--table-ref", action="store_true", help="store a reference to --table instead of a copy")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed every CFG of a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--table")
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("search", help="rank database entries by cosine to a query")
    p.add_argument("--db", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--query-id")
    g.add_argument("--query-vector", help="JSON list of numbers")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--report")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="AUC and confusion metrics on a split")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--table")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--seed", type=int, help="defaults to the training seed stored in the checkpoint")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--roc", help="write ROC points as CSV")
    p.add_argument("--report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("kfold", help="grouped k-fold cross-validation")
    _model_args(p)
    p.add_argument("--k", type=int, default=5)
    p.set_defaults(func=cmd_kfold)
    return parser


def _check_positive(args) -> None:
    for name in ("sources", "variants", "dim", "window", "min_count", "negatives", "epochs", "batch",
                 "k", "p", "T", "ell", "m", "max_vertices", "imm_threshold", "threads"):
        v = getattr(args, name, None)
        if v is None:
            continue
        if v < 0 or (v == 0 and name != "epochs"):
            raise UsageError(f"--{name.replace('_', '-')} must be positive")
    if getattr(args, "lr", 1.0) <= 0:
        raise UsageError("--lr must be positive")


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit": code}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _check_positive(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        result = args.func(args)
        report = {**_report_base(args.command, args), **result}
        if getattr(args, "report", None):
            _write_json(report, args.report)
        elif args.command in ("i2v-query", "search"):
            _write_json(result, None)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    except (s2v.TrainingError, nn.NumericalError, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, type(exc).__name__, str(exc))
    except (DataError, ParseError, CFGError, i2v.TableFormatError, s2v.ModelFormatError, nn.ShapeError,
            OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_DATA, type(exc).__name__, str(exc))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
