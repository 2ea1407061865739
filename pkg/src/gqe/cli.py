"""Command-line front end: ingest, sample, train, eval, answer, oracle-check."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, config, evaluation, kgraph, model, sampler, training
from . import querydag as qd
from .atomic import DirectoryLock, write_text_if_changed
from .errors import GQEError

log = logging.getLogger("gqe")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROPERTY = 0, 1, 2, 3

MODEL_FILE = "model.ckpt"
STAGE1_FILE = "stage1.ckpt"
LOG_FILE = "train_log.jsonl"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _need(path: Path, what: str, hint: str) -> Path:
    if not path.exists():
        raise UsageError(f"{what} not found at {path}; {hint}")
    return path


# -- data locations ----------------------------------------------------------------
def _load_graph(cfg) -> kgraph.TypedGraph:
    return kgraph.read_graph(_need(Path(cfg.graph), "graph", "run `gqe ingest` first"))


def _load_split(cfg):
    d = _need(Path(cfg.data), "dataset", "run `gqe sample` first")
    full = _load_graph(cfg)
    train_g = kgraph.read_graph(_need(d / "train_graph", "train graph", "run `gqe sample` first"))
    return full, train_g, d


def _read_examples(d: Path, name: str, g):
    return sampler.loads_examples((d / f"{name}.jsonl").read_text(encoding="utf-8"), g)


def _load_model(cfg, g):
    params, extra = checkpoint.load(_need(Path(cfg.checkpoint) / MODEL_FILE, "checkpoint", "run `gqe train` first"))
    checkpoint.check_compatible(params, g)
    return params


# -- commands ----------------------------------------------------------------------
def cmd_ingest(cfg, args) -> int:
    out = Path(args.out or cfg.graph)
    if args.synthetic:
        g = kgraph.parse_synthetic(args.synthetic, seed=config.derive_seed(cfg.seed, "synthetic"))
    else:
        if not args.edges or not args.nodes:
            raise UsageError("ingest needs --edges and --nodes, or --synthetic blocks:K,N,p")
        g = kgraph.ingest(args.edges, args.nodes, args.features, args.min_relation_edges)
    changed = kgraph.write_graph(g, out)
    print(f"{'wrote' if changed else 'unchanged'} {out}: {g.num_nodes} nodes, {g.num_edges()} edges, "
          f"{len(g.forward_relations)} relations")
    return EXIT_OK


def cmd_sample(cfg, args) -> int:
    g = _load_graph(cfg)
    out = Path(cfg.data)
    split = kgraph.split_edges(g, cfg.delete_fraction, config.derive_seed(cfg.seed, "split"))
    spec = sampler.DatasetSpec(counts=cfg.dataset_counts(), seed=config.derive_seed(cfg.seed, "sample"),
                               pool_size=cfg.pool_size, test_negatives=cfg.test_negatives)
    ds = sampler.build_dataset(split, spec, g)
    changed = kgraph.write_graph(split.train_graph, out / "train_graph")
    deleted = "".join(f"{g.node_names[u]}\t{g.relations[r].name}\t{g.node_names[v]}\n"
                      for u, r, v in sorted(split.deleted_edges) if r % 2 == 0)
    changed |= write_text_if_changed(out / "deleted.tsv", deleted)
    for name in ("train", "valid", "test"):
        changed |= write_text_if_changed(out / f"{name}.jsonl", sampler.dumps_examples(ds.split(name), g))
    manifest = {
        "files": {"train": "train.jsonl", "valid": "valid.jsonl", "test": "test.jsonl",
                  "train_graph": "train_graph", "deleted": "deleted.tsv"},
        "spec": spec.to_json(),
        "seed": cfg.seed,
        "delete_fraction": cfg.delete_fraction,
        "counts": {n: len(ds.split(n)) for n in ("train", "valid", "test")},
        "warnings": ds.warnings,
    }
    changed |= write_text_if_changed(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for w in ds.warnings:
        print(f"warning: {w['structure']} {w['split']}: {w['produced']} of {w['requested']} examples",
              file=sys.stderr)
    print(f"{'wrote' if changed else 'unchanged'} {out}: " +
          ", ".join(f"{n} {len(ds.split(n))}" for n in ("train", "valid", "test")))
    return EXIT_OK


def cmd_train(cfg, args) -> int:
    ckdir = Path(cfg.checkpoint)
    with DirectoryLock(ckdir):
        if cfg.mode == "exact":
            g = _load_graph(cfg)
            params = model.exact_parameters(g, cfg.exact_budget)
            changed = checkpoint.save(params, ckdir / MODEL_FILE, {"mode": "exact"})
            print(f"{'wrote' if changed else 'unchanged'} exact checkpoint {ckdir / MODEL_FILE} (d={params.dim})")
            return EXIT_OK
        full, train_g, d = _load_split(cfg)
        train = _read_examples(d, "train", full)
        valid = _read_examples(d, "valid", full)
        tc = cfg.train
        rng = np.random.default_rng(config.derive_seed(cfg.seed, "init"))
        params = model.ModelParams.init(train_g, tc.dim, cfg.variant, cfg.aggregator, rng)
        v1 = training.default_validator(train_g, valid, ["chain1"])
        p1, log1 = training.train_stage1_edges(params, train_g, train, tc, v1)
        checkpoint.save(p1, ckdir / STAGE1_FILE, {"stage": 1, "best_val": log1.best_val})
        records = [r.to_json() for r in log1.records]
        final, best = p1, log1.best_val
        if not args.stage1_only:
            v2 = training.default_validator(train_g, valid)
            p2, log2 = training.train_stage2_full(p1.copy(), train_g, train, tc, v2)
            records += [r.to_json() for r in log2.records]
            final, best = p2, log2.best_val
        checkpoint.save(final, ckdir / MODEL_FILE, {"mode": "learned", "best_val": best})
        write_text_if_changed(ckdir / LOG_FILE, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    print(f"wrote {ckdir / MODEL_FILE}: best validation macro AUC {best:.4f}")
    return EXIT_OK


def cmd_eval(cfg, args) -> int:
    full, _, d = _load_split(cfg)
    params = _load_model(cfg, full)
    examples = _read_examples(d, args.split, full)
    report = evaluation.evaluate(params, full, examples, args.negatives, include_chain1=not args.exclude_chain1)
    out = Path(args.out or cfg.checkpoint)
    write_text_if_changed(out / f"report_{args.split}.json", evaluation.to_json_text(report))
    write_text_if_changed(out / f"report_{args.split}.txt", report.to_table())
    write_text_if_changed(out / f"ranks_{args.split}.csv", report.ranks_csv())
    sys.stdout.write(report.to_table())
    return EXIT_OK


def cmd_answer(cfg, args) -> int:
    g = _load_graph(cfg)
    params = _load_model(cfg, g)
    if args.query == "-":
        text = sys.stdin.read()
    else:
        text = _need(Path(args.query), "query file", "pass a query JSON file or - for standard input").read_text(
            encoding="utf-8")
    q = qd.loads(text, g)
    qd.check(q, g)
    rows = model.answer(params, g, q, args.top_k)
    sys.stdout.write("rank\tnode_id\tscore\n")
    for i, (v, s) in enumerate(rows, start=1):
        sys.stdout.write(f"{i}\t{g.node_names[v]}\t{s:.6f}\n")
    return EXIT_OK


def oracle_check(g, params, n_queries: int, seed: int):
    """Compare score positivity with the set oracle; returns (checked, mismatches)."""
    rng = np.random.default_rng(seed)
    checked, mismatches = 0, []
    for s in qd.structure_catalog():
        for _ in range(n_queries):
            try:
                q, _pos = sampler.sample_query(g, s, rng)
            except GQEError:
                break
            got = set(model.positive_set(params, g, q))
            want = set(qd.denotation(q, g))
            checked += 1
            if got != want:
                mismatches.append((q, sorted(got - want), sorted(want - got)))
    return checked, mismatches


def cmd_oracle_check(cfg, args) -> int:
    g = _load_graph(cfg)
    if g.num_nodes == 0 or g.num_edges() == 0:
        print("warning: graph has no edges; nothing to check", file=sys.stderr)
        return EXIT_OK
    if args.checkpoint:
        params, _ = checkpoint.load(args.checkpoint)
        checkpoint.check_compatible(params, g)
    else:
        params = model.exact_parameters(g, cfg.exact_budget)
    n = args.queries if args.queries is not None else cfg.oracle_queries
    checked, mismatches = oracle_check(g, params, n, config.derive_seed(cfg.seed, "oracle"))
    for q, extra, missing in mismatches[:20]:
        names = g.node_names
        print(f"mismatch {q.structure}: {qd.describe(q, g)} extra={[names[v] for v in extra]} "
              f"missing={[names[v] for v in missing]}")
    print(f"checked {checked} queries, {len(mismatches)} mismatches")
    return EXIT_PROPERTY if mismatches else EXIT_OK


# -- entry point -------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gqe", description="Graph query embeddings on typed knowledge graphs.")
    p.add_argument("--config", help="INI file with run settings")
    p.add_argument("--seed", type=int, help="root random seed")
    p.add_argument("--threads", type=int, help="worker threads (numerical kernels are single-threaded)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("ingest", help="load TSV files or build a synthetic graph")
    s.add_argument("--edges")
    s.add_argument("--nodes")
    s.add_argument("--features")
    s.add_argument("--min-relation-edges", type=int, default=0)
    s.add_argument("--synthetic", metavar="blocks:K,N,p[,R[,C]]")
    s.add_argument("--out", help="graph directory (default: config graph)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("sample", help="split edges and sample query datasets")
    s.set_defaults(func=cmd_sample)

    s = sub.add_parser("train", help="train a model or build exact parameters")
    s.add_argument("--mode", choices=("learned", "exact"))
    s.add_argument("--stage1-only", action="store_true", help="skip the multi-structure stage")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="AUC/APR report for a dataset split")
    s.add_argument("--split", choices=("train", "valid", "test"), default="test")
    s.add_argument("--negatives", choices=("standard", "hard", "both"), default="both")
    s.add_argument("--exclude-chain1", action="store_true")
    s.add_argument("--out", help="report directory (default: checkpoint dir)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("answer", help="rank nodes for a query JSON document")
    s.add_argument("query", help="query JSON file, or - for standard input")
    s.add_argument("--top-k", type=int, default=10)
    s.set_defaults(func=cmd_answer)

    s = sub.add_parser("oracle-check", help="verify exact-mode scores against set semantics")
    s.add_argument("--queries", type=int, help="queries per structure")
    s.add_argument("--checkpoint", help="check these parameters instead of the exact construction")
    s.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {"seed": args.seed, "threads": args.threads, "mode": getattr(args, "mode", None)}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            print(f"gqe: error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_USAGE
        overrides[key.strip()] = value.strip()
    try:
        cfg = config.load(args.config, overrides)
    except FileNotFoundError as exc:
        print(f"gqe: error: config file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"gqe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    os.environ.setdefault("OMP_NUM_THREADS", str(cfg.threads))
    try:
        return args.func(cfg, args)
    except UsageError as exc:
        print(f"gqe: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (GQEError, KeyError, ValueError, OSError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"gqe: error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
