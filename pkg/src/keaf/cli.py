"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every table printed to stdout is followed by its machine-readable JSON
record (or the record goes to ``--record PATH`` when given).

Relative input paths are looked up under ``$KEAF_DATA_DIR`` when they do
not exist relative to the working directory.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import typing
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Corpus, build_corpus, corpus_stats, load_catalog, load_corpus, load_products, save_corpus, write_jsonl
from .embedder import load_embedding_store, write_embedding_store
from .errors import DataError, NumericalError
from .head import forward_episode
from .metrics import format_table
from .sampler import Episode, EpisodeSpec, prepare_corpus, sample_episodes, split_train_test
from .synth import synth_corpus
from .threshold import infer_labels
from .trainer import ABLATIONS, TrainConfig, evaluate, make_provider, result_threshold, run_ablation, train

DATA_DIR_ENV = "KEAF_DATA_DIR"
EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 1, 2, 3

log = logging.getLogger("keaf")


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def data_path(p: str | None) -> Path | None:
    if p is None:
        return None
    path = Path(p)
    base = os.environ.get(DATA_DIR_ENV)
    if base and not path.is_absolute() and not path.exists():
        return Path(base) / path
    return path


def emit(text: str, record: Any, record_path: str | None) -> None:
    print(text)
    line = json.dumps(record, sort_keys=True)
    if record_path:
        Path(record_path).write_text(line + "\n", encoding="utf-8")
    else:
        print(line)


def _corpus(args) -> Corpus:
    return load_corpus(data_path(args.products), data_path(args.catalog))


# ------------------------------------------------------------------ config flags

def _field_type(f: dataclasses.Field):
    hint = typing.get_type_hints(TrainConfig)[f.name]
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    return args[0] if args else hint


def add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One flag per TrainConfig key; unset flags leave the config value alone."""
    group = parser.add_argument_group("training config (override --config)")
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = _field_type(f)
        if kind is bool:
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif f.name == "eta":
            group.add_argument(flag, dest=f.name, type=float, nargs="+", default=None,
                               help="one value, or several for a grid")
        else:
            group.add_argument(flag, dest=f.name, type=kind, default=None)


def build_config(args) -> TrainConfig:
    data: dict[str, Any] = {}
    if args.config:
        path = data_path(args.config)
        TrainConfig.from_file(path)  # validates
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    for f in dataclasses.fields(TrainConfig):
        value = getattr(args, f.name)
        if value is not None:
            data[f.name] = value[0] if f.name == "eta" and len(value) == 1 else value
    try:
        return TrainConfig.from_dict(data)
    except DataError:
        raise
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _provider(config: TrainConfig, store_path: str | None):
    store = None
    if config.encoder == "store":
        if store_path is None:
            raise UsageError("--store is required with encoder 'store'")
        store = load_embedding_store(data_path(store_path))
    return make_provider(config, store)


def _split(corpus: Corpus, config: TrainConfig):
    prepared = prepare_corpus(corpus, config.episode_spec, balance=config.balance)
    return split_train_test(prepared, config.test_fraction, config.seed, config.n_way)


# ------------------------------------------------------------------ subcommands

def cmd_stats(args) -> int:
    stats = corpus_stats(_corpus(args))
    emit(stats.format(), stats.to_record(), args.record)
    return 0


def cmd_sample(args) -> int:
    spec = EpisodeSpec(args.n_way, args.k_support, args.k_query, args.t_lower, args.t_upper, args.seed)
    corpus = prepare_corpus(_corpus(args), spec, balance=args.balance)
    episodes = list(sample_episodes(corpus, spec, args.count))
    write_jsonl(args.out, (ep.to_record(i) for i, ep in enumerate(episodes)))
    record = {
        "episodes": len(episodes),
        "products_after_filter": len(corpus),
        "mean_support": float(np.mean([len(ep.support) for ep in episodes])) if episodes else 0.0,
        "mean_query": float(np.mean([len(ep.query) for ep in episodes])) if episodes else 0.0,
        "out": str(args.out),
    }
    emit(f"wrote {len(episodes)} episodes to {args.out}", record, args.record)
    return 0


def cmd_train(args) -> int:
    config = build_config(args)
    if isinstance(config.eta, (list, tuple)):
        raise UsageError("train takes a single --eta; sweep a grid with repeated runs")
    split = _split(_corpus(args), config)
    provider = _provider(config, args.store)

    log_file = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        def on_record(rec):
            if log_file is not None:
                log_file.write(json.dumps(rec, sort_keys=True) + "\n")

        result = train(config, split.train_corpus, split.test_corpus, provider, on_record)
    finally:
        if log_file is not None:
            log_file.close()

    tau = result_threshold(config, result)
    encoder = result.provider if getattr(result.provider, "trainable", False) else None
    save_checkpoint(args.checkpoint, result.params, tau, result.flags, encoder)
    scores = result.best_eval or {}
    record = {
        "checkpoint": str(args.checkpoint),
        "tau": tau,
        "steps": result.steps,
        "history": [[t, f] for t, f in result.history],
        "eval": scores,
        "train_labels": sorted(split.train_labels),
        "test_labels": sorted(split.test_labels),
    }
    text = f"steps {result.steps}  tau* {tau:.6g}"
    if scores:
        text += "\n" + format_table([("eval (best)", scores)])
    emit(text, record, args.record)
    return 0


def _checkpoint_provider(ckpt, store_path: str | None):
    if ckpt.encoder is not None:
        return ckpt.encoder
    if store_path is None:
        raise UsageError("--store is required: the checkpoint carries no encoder table")
    store = load_embedding_store(data_path(store_path))
    if store.dim != ckpt.params.dim_in:
        raise DataError(f"embedding store dim {store.dim} != checkpoint dim {ckpt.params.dim_in}")
    return store


def _checkpoint_tau(ckpt, override: float | None) -> float:
    tau = override if override is not None else ckpt.tau
    if tau is None:
        raise UsageError("the checkpoint has no threshold; pass --tau")
    return tau


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(data_path(args.checkpoint))
    provider = _checkpoint_provider(ckpt, args.store)
    tau = _checkpoint_tau(ckpt, args.tau)
    spec = EpisodeSpec(args.n_way, args.k_support, args.k_query, args.t_lower, args.t_upper, args.seed)
    corpus = prepare_corpus(_corpus(args), spec, balance=args.balance)
    if args.split != "all":
        split = split_train_test(corpus, args.test_fraction, args.split_seed, args.n_way)
        corpus = split.test_corpus if args.split == "test" else split.train_corpus
    report = evaluate(ckpt.params, tau, corpus, provider, spec, args.episodes, args.seed, ckpt.flags)
    scores = report.finalize()
    record = dict(scores, tau=tau, split=args.split)
    emit(format_table([("KEAF", scores)]), record, args.record)
    return 0


def cmd_predict(args) -> int:
    ckpt = load_checkpoint(data_path(args.checkpoint))
    provider = _checkpoint_provider(ckpt, args.store)
    tau = _checkpoint_tau(ckpt, args.tau)
    catalog = load_catalog(data_path(args.catalog))
    support = build_corpus(load_products(data_path(args.support)), catalog)
    queries = load_products(data_path(args.queries), ignore_labels=True)
    if not queries:
        raise DataError(f"{args.queries}: no query products")

    labels = tuple(sorted(support.used_labels))
    if not labels:
        raise DataError(f"{args.support}: support set has no labels")
    clash = {p.id for p in queries} & set(support.by_id)
    if clash:
        raise DataError(f"{args.queries}: query ids also in the support set: {sorted(clash)[:5]}")
    col = {lid: j for j, lid in enumerate(labels)}
    sup = []
    for p in support.products:
        y = [0] * len(labels)
        for lid in p.labels:
            y[col[lid]] = 1
        sup.append((p.id, tuple(y)))
    episode = Episode(labels, tuple(sup), tuple((p.id, (0,) * len(labels)) for p in queries))
    merged = Corpus(support.products + tuple(queries), support.catalog, support.label_index)
    fwd = forward_episode(ckpt.params, provider, merged, episode, ckpt.flags)

    names = support.labels_by_id
    lines, records = [], []
    for p, row in zip(queries, fwd.distances):
        picked = [labels[j] for j in sorted(infer_labels(row, tau))]
        lines.append(f"{p.id}\t" + "; ".join(names[lid].name for lid in picked))
        records.append({
            "id": p.id,
            "labels": picked,
            "pairs": [[names[lid].attribute, names[lid].value] for lid in picked],
            "distances": {lid: float(d) for lid, d in zip(labels, row)},
        })
    emit("\n".join(lines), {"tau": tau, "predictions": records}, args.record)
    return 0


def cmd_ablate(args) -> int:
    config = build_config(args)
    if isinstance(config.eta, (list, tuple)):
        raise UsageError("ablate takes a single --eta")
    split = _split(_corpus(args), config)
    provider = _provider(config, args.store)
    rows = run_ablation(config, split.train_corpus, split.test_corpus, provider, args.seeds,
                        test_episodes=args.test_episodes)
    record = {"rows": [dict(scores, model=name) for name, scores in rows],
              "axes": [name for name, _ in ABLATIONS]}
    emit(format_table(rows), record, args.record)
    return 0


def cmd_synth(args) -> int:
    data = synth_corpus(
        n_labels=args.labels, n_products=args.products, multilabel=args.multilabel,
        zipf=args.zipf, max_labels=args.max_labels, dim=args.dim, n_categories=args.categories,
        separation=args.separation, noise=args.noise, pair_rate=args.pair_rate,
        orthogonal=args.orthogonal, seed=args.seed,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(data.corpus, out / "products.jsonl", out / "catalog.jsonl")
    write_embedding_store(out / "embeddings.keaf", data.vectors, data.dim)
    stats = corpus_stats(data.corpus)
    record = dict(stats.to_record(), out=str(out))
    emit(stats.format(), record, args.record)
    return 0


# ------------------------------------------------------------------ parser

def _add_corpus(p, required=True):
    p.add_argument("--products", required=required, help="line-delimited product records")
    p.add_argument("--catalog", required=required, help="line-delimited label catalog")


def _add_episode(p):
    p.add_argument("--n-way", type=int, default=5)
    p.add_argument("--k-support", type=int, default=1)
    p.add_argument("--k-query", type=int, default=3)
    p.add_argument("--t-lower", type=int, default=0)
    p.add_argument("--t-upper", type=int, default=None)
    p.add_argument("--balance", action="store_true", help="balance single-label products")


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="keaf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("stats", help="corpus statistics")
    _add_corpus(p)
    p.add_argument("--record")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sample", help="sample episodes to a file")
    _add_corpus(p)
    _add_episode(p)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--record")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="episodic training")
    _add_corpus(p)
    p.add_argument("--store", help="embedding store (encoder 'store')")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--log", help="line-delimited training log output")
    p.add_argument("--config", help="JSON config file with TrainConfig keys")
    p.add_argument("--record")
    add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on sampled episodes")
    _add_corpus(p)
    _add_episode(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--store")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", type=float, help="override the stored threshold")
    p.add_argument("--split", choices=("all", "train", "test"), default="all")
    p.add_argument("--test-fraction", type=float, default=0.3)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--record")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict attribute-value pairs for query products")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--support", required=True, help="labelled support products")
    p.add_argument("--queries", required=True, help="query products (labels ignored)")
    p.add_argument("--store")
    p.add_argument("--tau", type=float)
    p.add_argument("--record")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("ablate", help="component ablation table")
    _add_corpus(p)
    p.add_argument("--store")
    p.add_argument("--config")
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--test-episodes", type=int, default=200)
    p.add_argument("--record")
    add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="generate a synthetic long-tailed corpus")
    p.add_argument("--labels", type=int, default=30)
    p.add_argument("--products", type=int, default=500)
    p.add_argument("--multilabel", type=float, default=0.45)
    p.add_argument("--zipf", type=float, default=1.1)
    p.add_argument("--max-labels", type=int, default=3)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--categories", type=int, default=5)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--pair-rate", type=float, default=0.0)
    p.add_argument("--orthogonal", action="store_true", help="orthogonal label centres")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".")
    p.add_argument("--record")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"keaf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"keaf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError) as exc:
        print(f"keaf: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"keaf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
