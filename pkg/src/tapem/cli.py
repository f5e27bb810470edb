"""``tapem`` command-line driver.

Subcommands: synth, train, eval, rank, export, gradcheck.  Every command
takes ``--seed``; all randomness flows from it through named streams.
Exit codes: 0 success, 1 usage/config error, 2 data integrity error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (ConfigError, IntegrityError, InputError, NumericError, TapemError,
                     UnknownNodeError)
from .hetgraph import CorpusSplit, load_dataset, temporal_split
from .model import Corpus
from .numerics import load_checkpoint, save_checkpoint
from .synth import SynthConfig, file_digest, generate_synthetic, write_synthetic

log = logging.getLogger("tapem")

DATA_ENV = "TAPEM_DATA"
CHECKPOINT = "checkpoint.bin"


# ----------------------------------------------------------------- helpers


def _read_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{what} not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return obj


def _atomic_write(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_manifest(out_path, command, config, seed, inputs, outputs, started):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "wall_time": round(time.time() - started, 3),
        "version": __version__,
    }
    _atomic_write(out_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _data_dir(args):
    d = args.data or os.environ.get(DATA_ENV)
    if not d:
        raise ConfigError(f"no dataset directory: pass --data or set {DATA_ENV}")
    if not Path(d).is_dir():
        raise ConfigError(f"dataset directory not found: {d}")
    return Path(d)


def _dataset_files(d: Path):
    names = ("nodes.tsv", "edges.tsv", "abstracts.jsonl", "split.json")
    return [d / n for n in names if (d / n).exists()]


def load_data(d: Path, seed, split_year=None):
    """Graph plus split (``split.json`` when present, else a temporal split)."""
    graph = load_dataset(d)
    if (d / "split.json").exists():
        split = CorpusSplit.from_json(graph, _read_json(d / "split.json", "split"))
    else:
        year = split_year
        if year is None and (d / "meta.json").exists():
            year = _read_json(d / "meta.json", "meta").get("split_year")
        if year is None:
            raise ConfigError("dataset has no split.json; pass --split-year")
        split = temporal_split(graph, int(year), seed)
    return graph, split


def _training_config(args):
    from .objective import TrainingConfig

    obj = _read_json(args.config, "config") if args.config else {}
    cfg = TrainingConfig.from_dict(obj)
    if getattr(args, "model", None):
        cfg.model = args.model
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    return cfg


def _check_compatible(meta, graph):
    if meta.get("vocab") != graph.vocab:
        raise IntegrityError("checkpoint vocabulary does not match the dataset")
    if meta.get("authors") != [graph.names[a] for a in graph.authors]:
        raise IntegrityError("checkpoint author set does not match the dataset")


def load_model(checkpoint, graph):
    from .objective import TrainingConfig, create_model

    store, meta = load_checkpoint(checkpoint)
    _check_compatible(meta, graph)
    cfg = TrainingConfig.from_dict(meta["config"])
    return create_model(Corpus(graph), cfg, store=store), meta


def _limit_threads(n):
    if n is None:
        return nullcontext()
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


# ----------------------------------------------------------------- commands


def cmd_synth(args):
    started = time.time()
    obj = _read_json(args.config, "config") if args.config else {}
    cfg = SynthConfig.from_dict(obj)
    seed = args.seed or 0
    graph, split = generate_synthetic(cfg, seed)
    out = Path(args.out)
    try:
        paths = write_synthetic(graph, split, cfg, seed, out)
    except OSError as exc:
        raise InputError(f"cannot write to {out}: {exc}") from None
    inputs = [args.config] if args.config else []
    write_manifest(out / "manifest.json", "synth", obj, seed, inputs, paths, started)
    print(f"wrote {len(graph.authors)} authors, {len(graph.papers)} papers, "
          f"{len(graph.venues)} venues to {out}")
    return 0


def cmd_train(args):
    from .objective import TrainingConfig, create_model, fit

    started = time.time()
    cfg = _training_config(args)
    d = _data_dir(args)
    graph, split = load_data(d, cfg.seed, args.split_year)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, log_path = out / CHECKPOINT, out / "train_log.jsonl"

    model, start_epoch = None, 0
    if args.resume:
        store, meta = load_checkpoint(args.resume)
        _check_compatible(meta, graph)
        if meta["config"]["model"] != cfg.model:
            raise ConfigError(f"checkpoint holds a {meta['config']['model']} model, not {cfg.model}")
        model = create_model(Corpus(graph), TrainingConfig.from_dict(meta["config"]), store=store)
        start_epoch = int(meta["epoch"]) + 1

    meta_base = {
        "config": cfg.to_dict(),
        "vocab": graph.vocab,
        "authors": [graph.names[a] for a in graph.authors],
    }
    if not args.resume:
        log_path.write_text("", encoding="utf-8")

    def on_epoch(stats, improved, current):
        with open(log_path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(stats.to_json() + "\n")
        if improved:
            save_checkpoint(ckpt, current.store, {**meta_base, "epoch": stats.epoch,
                                                   "val_recall5": stats.val_recall5})
        print(f"epoch {stats.epoch:3d}  loss {stats.loss_total:.4f}  "
              f"(ctx {stats.loss_ctx:.4f} pv {stats.loss_pv:.4f} metric {stats.loss_metric:.4f})  "
              f"val R@5 {stats.val_recall5:.4f}{'  *' if improved else ''}", flush=True)

    with _limit_threads(args.threads):
        result = fit(graph, split, cfg, model=model, start_epoch=start_epoch, on_epoch=on_epoch)
    print(f"best epoch {result.best_epoch}: val R@5 {result.best_score:.4f}; checkpoint {ckpt}")
    inputs = _dataset_files(d) + ([args.config] if args.config else [])
    write_manifest(out / "manifest.json", "train", cfg.to_dict(), cfg.seed, inputs,
                   {"checkpoint": ckpt, "log": log_path}, started)
    return 0


def cmd_eval(args):
    from .evaluation import evaluate, violation_report, write_rankings
    from .walker import APA, cooccurrence_counts, extract_pairs_from, generate_walks

    started = time.time()
    seed = args.seed or 0
    d = _data_dir(args)
    graph, split = load_data(d, seed, args.split_year)
    model, meta = load_model(args.checkpoint, graph)
    papers = split.validation if args.split == "val" else split.test
    pool = None if args.candidates == "whole" else args.pool_size
    counts = graph.paper_counts(split.train) if args.slice == "inactive" else None
    with _limit_threads(args.threads):
        report, ranked = evaluate(model, graph, papers, pool_size=pool, seed=seed,
                                  slice_counts=counts, threshold=args.threshold, mode=args.score)
        if args.violations:
            cfg = meta["config"]
            walks = generate_walks(graph, APA, cfg["walks_per_node"], cfg["walk_length"], seed)
            cooc = cooccurrence_counts(extract_pairs_from(walks, cfg["tau"], graph), graph.n_nodes)
            report.rank_violations = violation_report(model, graph, papers, cooc, mode=args.score)
    report.extra = {"split": args.split, "model": meta["config"]["model"]}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = {"report": out / "metrics.json"}
    _atomic_write(outputs["report"], report.to_json())
    if args.rankings:
        outputs["rankings"] = out / "rankings.tsv"
        write_rankings(outputs["rankings"], ranked, graph)
    print(report.table())
    write_manifest(out / "manifest.json", "eval", vars_config(args), seed,
                   _dataset_files(d) + [args.checkpoint], outputs, started)
    return 0


def vars_config(args):
    return {k: v for k, v in vars(args).items() if k != "func" and not callable(v)}


def _read_abstract(path):
    text = Path(path).read_text(encoding="utf-8")
    words = text.split()
    if not words:
        raise InputError(f"{path}: empty abstract")
    return words


def cmd_rank(args):
    from .evaluation import rank

    store, meta = load_checkpoint(args.checkpoint)
    words = _read_abstract(args.abstract)
    index = {t: i for i, t in enumerate(meta["vocab"])}
    ids = np.array([index.get(w, 0) for w in words], dtype=np.int64)
    model = _standalone_model(store, meta)
    P, _ = model.encoder.forward([ids])
    authors = np.arange(len(meta["authors"]))
    scores = _score_rows(model, P[0], authors, args.score)
    rl = rank(-1, authors, scores, np.zeros(len(authors), bool))
    top = min(args.top, len(authors))
    for i in range(top):
        print(f"{i + 1}\t{meta['authors'][rl.authors[i]]}\t{rl.scores[i]:.6f}")
    return 0


def _standalone_model(store, meta):
    """Model without a dataset: authors are addressed by table row."""
    from .objective import TrainingConfig, create_model

    return create_model(None, TrainingConfig.from_dict(meta["config"]), store=store)


def _score_rows(model, p, rows, mode=None):
    from .numerics import sigmoid

    if model.variant == "baseline":
        return model.store["base.author_center"][rows] @ p
    Q = model.store["author_emb"][rows]
    mode = mode or ("dot" if model.variant == "tapem-npv" else "classifier")
    if mode == "dot":
        return Q @ p
    G, _ = model.pair_forward(np.repeat(p[None], len(rows), axis=0), Q)
    return sigmoid(model.cls_forward(G)[0])


def cmd_export(args):
    started = time.time()
    store, meta = load_checkpoint(args.checkpoint)
    model = _standalone_model(store, meta)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    inputs = [args.checkpoint]
    if args.what == "authors":
        table = store["base.author_center" if model.variant == "baseline" else "author_emb"]
        lines = [name + "\t" + "\t".join(f"{x:.10g}" for x in row)
                 for name, row in zip(meta["authors"], table)]
    else:
        if model.variant == "baseline":
            raise ConfigError("pair embeddings exist only for TaPEm models")
        if not args.pairs:
            raise ConfigError("--what pairs needs --pairs FILE (paper<TAB>author per line)")
        graph = load_dataset(_data_dir(args))
        _check_compatible(meta, graph)
        author_row = {n: i for i, n in enumerate(meta["authors"])}
        lines = []
        for lineno, line in enumerate(Path(args.pairs).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            paper, author = line.split("\t")[:2]
            p_id = graph.node_id(paper)
            if author not in author_row:
                raise UnknownNodeError(f"{args.pairs}:{lineno}: unknown author id {author!r}")
            P, _ = model.encoder.forward([graph.paper_tokens(p_id)])
            q = store["author_emb"][author_row[author]]
            G, _ = model.pair_forward(P, q[None])
            lines.append(f"{paper}\t{author}\t" + "\t".join(f"{x:.10g}" for x in G[0]))
        inputs.append(args.pairs)
    _atomic_write(out, "\n".join(lines) + ("\n" if lines else ""))
    write_manifest(out.with_name(out.name + ".manifest.json"), "export", vars_config(args),
                   args.seed or 0, inputs, {"export": out}, started)
    print(f"wrote {len(lines)} rows to {out}")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import TOY_CONFIG, check_gradients
    from .objective import TrainingConfig

    cfg = None
    if args.config:
        cfg = TrainingConfig.from_dict({**TOY_CONFIG, **_read_json(args.config, "config")})
    started = time.time()
    results = check_gradients(cfg, seed=args.seed or 0, probes=args.probes, corrupt=args.corrupt)
    worst = max(results.values())
    for group, err in results.items():
        flag = "ok" if err < args.tolerance else "FAIL"
        print(f"{group:<14} max rel err {err:.3e}  {flag}")
    print(f"{time.time() - started:.1f}s")
    if worst >= args.tolerance:
        raise NumericError(f"gradient check failed: max relative error {worst:.3e} "
                           f">= {args.tolerance:g}")
    return 0


# --------------------------------------------------------------------- main


def build_parser():
    p = argparse.ArgumentParser(prog="tapem", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"tapem {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="global random seed")
        sp.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")

    s = sub.add_parser("synth", help="generate a synthetic academic network")
    s.add_argument("--config", help="JSON file with generator settings")
    s.add_argument("--out", required=True)
    common(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train TaPEm, an ablation, or the skip-gram baseline")
    s.add_argument("--data", help=f"dataset directory (default ${DATA_ENV})")
    s.add_argument("--config", help="JSON training config; missing fields take defaults")
    s.add_argument("--out", required=True)
    s.add_argument("--model", choices=["tapem", "tapem-npv", "tapem-no-attn", "baseline"])
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--split-year", type=int)
    common(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="author-identification metrics for a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", help=f"dataset directory (default ${DATA_ENV})")
    s.add_argument("--out", required=True)
    s.add_argument("--split", choices=["val", "test"], default="test")
    s.add_argument("--candidates", choices=["sampled", "whole"], default="sampled")
    s.add_argument("--pool-size", type=int, default=100)
    s.add_argument("--slice", choices=["all", "inactive"], default="all")
    s.add_argument("--threshold", type=int, default=5, help="inactive: at most this many papers")
    s.add_argument("--score", choices=["classifier", "dot"], help="override the scoring rule")
    s.add_argument("--violations", action="store_true", help="also count rank violations")
    s.add_argument("--rankings", action="store_true", help="dump per-paper rankings as TSV")
    s.add_argument("--split-year", type=int)
    common(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("rank", help="rank all authors for an abstract")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--abstract", required=True, help="text file with the abstract")
    s.add_argument("--top", type=int, default=10)
    s.add_argument("--score", choices=["classifier", "dot"])
    common(s)
    s.set_defaults(func=cmd_rank)

    s = sub.add_parser("export", help="export author or pair embeddings as TSV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--what", choices=["authors", "pairs"], default="authors")
    s.add_argument("--pairs", help="paper<TAB>author list for --what pairs")
    s.add_argument("--data", help=f"dataset directory (default ${DATA_ENV})")
    common(s)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    s.add_argument("--config", help="JSON overrides for the toy network widths")
    s.add_argument("--probes", type=int, default=40)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.add_argument("--corrupt", help=argparse.SUPPRESS)
    common(s)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TapemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
