"""Command-line entry point: gen, translate, train, infer, eval, bench, and
the pipeline orchestrator (translate -> train -> infer -> eval).

Exit codes: 0 ok, 1 configuration error, 2 runtime error. Stages stamp every
artifact with the config fingerprint; the pipeline skips stages whose outputs
already carry the current fingerprint unless --force is given. Execution is
pinned to a single BLAS thread by default so fixed seeds give byte-identical
artifacts.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import bench as bench_mod
from .config import RunConfig, fingerprint, load_config, save_config
from .errors import CheckpointError, ConfigError, IntentGCError
from .evalinfer import (EvalSet, eval_report, infer_all, load_pairs,
                        ranking_auc, save_embeddings, scaled_mrr)
from .graph import (load_features, load_graph, load_schema, save_dictionary)
from .params import load_checkpoint, save_checkpoint
from .synth import SyntheticSpec, gen_synthetic
from .trainer import train
from .translate import load_translated, save_translated, translate

log = logging.getLogger("intentgc.cli")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="intentgc", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--precision", choices=["f32", "f64"], help="override precision")
    p.add_argument("--mode", choices=["vectorwise", "bitwise"], help="override conv mode")
    p.add_argument("--threads", type=int, default=1,
                   help="BLAS thread cap (1 keeps runs reproducible)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a planted synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--users", type=int, default=200)
    g.add_argument("--items", type=int, default=200)
    g.add_argument("--blocks", type=int, default=2)
    g.add_argument("--aux-types", type=int, default=1)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--edges-per-user", type=int, default=10)
    g.add_argument("--gen-seed", type=int, default=7)

    t = sub.add_parser("translate", help="second-order translation of the graph")
    t.add_argument("--graph", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--rho", type=int)
    t.add_argument("--hot-threshold", type=int)
    t.add_argument("--dict-out", help="also persist the id dictionary")

    tr = sub.add_parser("train", help="train both towers")
    for flag in ("--graph", "--translated", "--features", "--schema"):
        tr.add_argument(flag, required=True)
    tr.add_argument("--out", required=True, help="checkpoint path")

    inf = sub.add_parser("infer", help="embed every user and item")
    for flag in ("--graph", "--translated", "--features", "--schema", "--checkpoint"):
        inf.add_argument(flag, required=True)
    inf.add_argument("--out-users", required=True)
    inf.add_argument("--out-items", required=True)
    inf.add_argument("--topk", type=int, default=0,
                     help="also write top-K recommendations per user "
                          "(retrieval method from knn_method in the config)")
    inf.add_argument("--out-recs", help="recommendations path (with --topk)")

    ev = sub.add_parser("eval", help="rank held-out pairs and report metrics")
    for flag in ("--graph", "--translated", "--features", "--schema", "--checkpoint", "--test"):
        ev.add_argument(flag, required=True)
    ev.add_argument("--metric", default="auc,mrr")
    ev.add_argument("--neg-per-user", type=int)
    ev.add_argument("--report", help="also write the report to this file")

    b = sub.add_parser("bench", help="time vector-wise vs bit-wise conv layers")
    b.add_argument("--out", help="write the TSV table to this file")

    pl = sub.add_parser("pipeline", help="translate -> train -> infer -> eval")
    for flag in ("--graph", "--features", "--schema"):
        pl.add_argument(flag, required=True)
    pl.add_argument("--test", help="held-out pairs; enables the eval stage")
    pl.add_argument("--outdir", required=True)
    pl.add_argument("--force", action="store_true", help="rerun all stages")
    return p


def _effective_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.precision is not None:
        cfg.precision = args.precision
    if args.mode is not None:
        cfg.mode = args.mode
    if getattr(args, "rho", None) is not None:
        cfg.rho = args.rho
    if getattr(args, "hot_threshold", None) is not None:
        cfg.hot_threshold = args.hot_threshold
    if getattr(args, "neg_per_user", None) is not None:
        cfg.neg_per_user = args.neg_per_user
    cfg.validate()
    return cfg


def _load_dataset(args, cfg):
    graph, iddict = load_graph(args.graph)
    schema = load_schema(args.schema)
    for role in ("user", "item"):
        width = schema.encoded_width(role)
        if width != cfg.dense_widths[0]:
            raise ConfigError(
                f"{role} encoded feature width {width} does not match "
                f"dense_widths[0] = {cfg.dense_widths[0]}; adjust the config")
    store = load_features(args.features, schema, graph, iddict)
    return graph, iddict, schema, store


def _load_translated_checked(path, graph, fp):
    tg, stamped = load_translated(path, graph)
    if stamped and stamped != fp:
        raise ConfigError(
            f"translated graph {path} was built under fingerprint {stamped}, "
            f"current config is {fp}; re-run translate (or --force the pipeline)")
    return tg


def cmd_gen(args, cfg) -> int:
    spec = SyntheticSpec(
        n_users=args.users, n_items=args.items, blocks=args.blocks,
        aux_types=args.aux_types, noise=args.noise,
        edges_per_user=args.edges_per_user, seed=args.gen_seed)
    paths = gen_synthetic(spec, args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_translate(args, cfg) -> int:
    graph, iddict = load_graph(args.graph)
    tg = translate(graph, rho=cfg.rho, hot_threshold=cfg.hot_threshold)
    save_translated(tg, graph, args.out, fingerprint(cfg))
    if args.dict_out:
        save_dictionary(iddict, args.dict_out)
    print(f"translated: {args.out} ({tg.n_relation_types} relation types)")
    return 0


def cmd_train(args, cfg) -> int:
    fp = fingerprint(cfg)
    graph, _, schema, store = _load_dataset(args, cfg)
    tg = _load_translated_checked(args.translated, graph, fp)
    train(graph, tg, store, schema, cfg, checkpoint_path=args.out,
          fingerprint=fp, progress=print, threads=args.threads)
    print(f"checkpoint: {args.out}")
    return 0


def _load_model_checked(args, cfg, graph):
    fp = fingerprint(cfg)
    tg = _load_translated_checked(args.translated, graph, fp)
    params, stamped, _ = load_checkpoint(args.checkpoint)
    if stamped and stamped != fp:
        raise ConfigError(
            f"checkpoint {args.checkpoint} fingerprint {stamped} does not match "
            f"current config {fp}")
    return tg, params, fp


def cmd_infer(args, cfg) -> int:
    graph, iddict, schema, store = _load_dataset(args, cfg)
    tg, params, fp = _load_model_checked(args, cfg, graph)
    users = infer_all("user", tg, store, schema, params, cfg)
    items = infer_all("item", tg, store, schema, params, cfg)
    save_embeddings(users, args.out_users, iddict.names(graph.type_names[0]), fp)
    save_embeddings(items, args.out_items, iddict.names(graph.type_names[1]), fp)
    print(f"embeddings: {args.out_users} {args.out_items}")
    if args.topk:
        recs_path = args.out_recs or str(Path(args.out_users).with_name("recommendations.tsv"))
        user_names = iddict.names(graph.type_names[0])
        item_names = iddict.names(graph.type_names[1])
        with open(recs_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"#fingerprint {fp}\n")
            for u in range(len(users)):
                top = knn(users.matrix[u], items, args.topk, method=cfg.knn_method)
                names = ",".join(item_names[i] if i < len(item_names) else str(i)
                                 for i in top)
                fh.write(f"{user_names[u] if u < len(user_names) else u}\t{names}\n")
        print(f"recommendations: {recs_path} (top-{args.topk}, {cfg.knn_method})")
    return 0


def _check_disjoint(pairs, graph, path):
    labeled = graph.labeled_pair_set()
    overlap = sum(1 for u, v in pairs if (int(u), int(v)) in labeled)
    if overlap:
        raise ConfigError(
            f"{overlap} test pairs in {path} also appear as training labels; "
            "evaluation requires a disjoint held-out set")


def cmd_eval(args, cfg) -> int:
    graph, iddict, schema, store = _load_dataset(args, cfg)
    tg, params, fp = _load_model_checked(args, cfg, graph)
    pairs = load_pairs(args.test, iddict, graph.type_names[0], graph.type_names[1])
    _check_disjoint(pairs, graph, args.test)
    users = infer_all("user", tg, store, schema, params, cfg)
    items = infer_all("item", tg, store, schema, params, cfg)
    metrics = {m.strip() for m in args.metric.split(",") if m.strip()}
    unknown = metrics - {"auc", "mrr"}
    if unknown:
        raise ConfigError(f"unknown metrics {sorted(unknown)}")
    auc_value = (ranking_auc(pairs, users, items, cfg.neg_per_user, cfg.seed)
                 if "auc" in metrics else None)
    mrr_value = (scaled_mrr(EvalSet(pairs=pairs), users, items)
                 if "mrr" in metrics else None)
    report = eval_report(auc_value, mrr_value, len(pairs), len(users), len(items),
                         cfg.neg_per_user, cfg.seed, fp)
    sys.stdout.write(report)
    if args.report:
        Path(args.report).write_text(report, encoding="utf-8")
    return 0


def cmd_bench(args, cfg) -> int:
    rows = bench_mod.bench_conv(
        m_values=cfg.bench_m, rho=cfg.rho, n_filters=cfg.n_filters,
        q=cfg.q, passes=cfg.bench_passes, seed=cfg.seed)
    table = bench_mod.format_table(rows)
    sys.stdout.write(table)
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8")
    return 0


def _stamped_fingerprint(path: Path) -> str:
    """Fingerprint stamped near the top of a text artifact, or '' if absent."""
    try:
        with open(path, encoding="utf-8") as fh:
            head = [fh.readline().strip() for _ in range(2)]
    except (OSError, UnicodeDecodeError):
        return ""
    for line in head:
        if line.startswith("#fingerprint"):
            parts = line.split()
            return parts[1] if len(parts) == 2 else ""
        if line.startswith("fingerprint:"):
            return line.split(":", 1)[1].strip()
    return ""


def cmd_pipeline(args, cfg) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    fp = fingerprint(cfg)
    translated = outdir / "translated.txt"
    checkpoint = outdir / "checkpoint.bin"
    emb_users = outdir / "user_embeddings.tsv"
    emb_items = outdir / "item_embeddings.tsv"
    report_path = outdir / "eval_report.txt"
    save_config(cfg, outdir / "config.txt")

    graph, iddict, schema, store = _load_dataset(args, cfg)
    save_dictionary(iddict, outdir / "dictionary.tsv")

    def current(path: Path, probe) -> bool:
        return not args.force and path.exists() and probe(path) == fp

    if current(translated, _stamped_fingerprint):
        print("translate: skipped (fingerprint current)")
        tg, _ = load_translated(translated, graph)
    else:
        tg = translate(graph, rho=cfg.rho, hot_threshold=cfg.hot_threshold)
        save_translated(tg, graph, translated, fp)
        print(f"translate: wrote {translated}")

    def checkpoint_fp(path) -> str:
        try:
            return load_checkpoint(path)[1]
        except CheckpointError:
            return ""

    if current(checkpoint, checkpoint_fp):
        print("train: skipped (fingerprint current)")
        params, _, _ = load_checkpoint(checkpoint)
    else:
        params, _ = train(graph, tg, store, schema, cfg, checkpoint_path=checkpoint,
                          fingerprint=fp, progress=print, threads=args.threads)
        print(f"train: wrote {checkpoint}")

    users = items = None
    if current(emb_users, _stamped_fingerprint) and current(emb_items, _stamped_fingerprint):
        print("infer: skipped (fingerprint current)")
    else:
        users = infer_all("user", tg, store, schema, params, cfg)
        items = infer_all("item", tg, store, schema, params, cfg)
        save_embeddings(users, emb_users, iddict.names(graph.type_names[0]), fp)
        save_embeddings(items, emb_items, iddict.names(graph.type_names[1]), fp)
        print(f"infer: wrote {emb_users} {emb_items}")

    if not args.test:
        print("eval: skipped (no --test pairs)")
        return 0
    if current(report_path, _stamped_fingerprint):
        print("eval: skipped (fingerprint current)")
        return 0
    pairs = load_pairs(args.test, iddict, graph.type_names[0], graph.type_names[1])
    _check_disjoint(pairs, graph, args.test)
    if users is None:
        users = infer_all("user", tg, store, schema, params, cfg)
        items = infer_all("item", tg, store, schema, params, cfg)
    auc_value = ranking_auc(pairs, users, items, cfg.neg_per_user, cfg.seed)
    mrr_value = scaled_mrr(EvalSet(pairs=pairs), users, items)
    report = eval_report(auc_value, mrr_value, len(pairs), len(users), len(items),
                         cfg.neg_per_user, cfg.seed, fp)
    report_path.write_text(report, encoding="utf-8")
    sys.stdout.write(report)
    print(f"eval: wrote {report_path}")
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "translate": cmd_translate,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _effective_config(args)
        with threadpool_limits(limits=max(1, args.threads)):
            return _COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (IntentGCError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
