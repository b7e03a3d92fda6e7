"""Command-line entry point.

Settings come from built-in defaults, then ``--config`` (YAML), then flags.
Every command writes into ``--out``; outputs depend only on inputs, config
and seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .alignment import TofgTable, train
from .bench import corpus_growth
from .checkpoint import Checkpoint
from .config import ConfigError, EvalConfig, RunConfig
from .datasets import load_toy, planted_partition
from .embeddings import ProviderDescriptor, make_provider
from .gnn import default_num_layers
from .graph import GraphFormatError, build_ego_graph, load_graph, save_graph
from .graph2text import flat_edge_listing, graph_document, render
from .inference import (
    evaluate,
    few_shot_fit,
    few_shot_split,
    label_embeddings,
    node_embeddings,
    zero_shot,
)
from .walks import walk_corpus

log = logging.getLogger("tagkit")

MODES = ("taga", "taga-rw", "tofg-k", "glo-goft")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


# -- configuration -----------------------------------------------------------------

def resolve_config(args) -> tuple[RunConfig, set]:
    """Merge config file and flags. Also returns the dotted keys set explicitly."""
    raw = {}
    if args.config:
        raw = yaml.safe_load(Path(args.config).read_text(encoding="utf-8")) or {}
    explicit = {f"{sec}.{key}" for sec, body in raw.items() if isinstance(body, dict) for key in body}

    def put(section, key, value):
        if value is None:
            return
        if section is None:
            raw[key] = value
            explicit.add(key)
        else:
            raw.setdefault(section, {})
            raw[section][key] = value
            explicit.add(f"{section}.{key}")

    g = vars(args)
    put("data", "nodes", g.get("nodes"))
    put("data", "edges", g.get("edges"))
    put("data", "labels", g.get("labels"))
    put("data", "toy", g.get("toy"))
    put(None, "out", g.get("out"))
    put(None, "threads", g.get("threads"))
    put(None, "cache", g.get("cache"))
    put("provider", "kind", g.get("provider"))
    put("provider", "dimension", g.get("dimension"))
    put("provider", "model_name", g.get("model"))
    put("provider", "endpoint", g.get("endpoint"))
    put("view", "max_order", g.get("max_order"))
    tofg = g.get("tofg_mode")
    if tofg is not None:
        put("view", "tofg_mode", tofg.replace("-", "_"))
    put("walk", "jump_probability", g.get("walk_p"))
    put("walk", "max_length", g.get("walk_len"))
    put("walk", "num_walks", g.get("walk_num"))
    put("train", "steps", g.get("steps"))
    put("train", "batch_size", g.get("batch_size"))
    put("train", "learning_rate", g.get("lr"))
    put("train", "architecture", g.get("arch"))
    put("train", "negative_normalization", g.get("negatives"))
    put("eval", "mode", g.get("mode"))
    put("eval", "order", g.get("order"))
    put("eval", "label_template", g.get("label_template"))
    put("eval", "seeds", g.get("seeds"))
    if g.get("shots") is not None:
        put("eval", "shots", [int(s) for s in g["shots"].split(",") if s.strip()])
    if g.get("seed") is not None:
        put("train", "seed", g["seed"])
        put("walk", "seed", g["seed"])
    mode = g.get("mode")
    if mode == "taga-rw" and tofg is None:
        put("view", "tofg_mode", "random_walk")
    if mode == "glo-goft":
        put("train", "glo_goft_only", True)
    return RunConfig.from_dict(raw), explicit


def load_dataset(cfg: RunConfig):
    d = cfg.data
    if d.nodes:
        if not d.edges:
            raise ConfigError("a nodes file needs an edges file")
        return load_graph(d.nodes, d.edges, d.labels)
    if d.toy in (None, "", "a"):
        return load_toy()
    if d.toy == "b":
        return planted_partition(seed=11)
    raise ConfigError(f"unknown toy dataset {d.toy!r} (use 'a' or 'b')")


def build_provider(desc: ProviderDescriptor, cfg: RunConfig):
    if desc.kind == "remote":
        headers = {}
        key = os.environ.get("TAGKIT_API_KEY")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        cache = cfg.cache or str(Path(cfg.out) / "embedding_cache.bin")
        return make_provider(desc, cache, headers=headers, parallelism=max(1, cfg.threads))
    return make_provider(desc)


def _with_layer_rule(cfg: RunConfig, explicit: set, graph) -> RunConfig:
    if "view.max_order" in explicit:
        return cfg
    view = dataclasses.replace(cfg.view, max_order=default_num_layers(graph.num_nodes))
    return dataclasses.replace(cfg, view=view)


# -- commands -----------------------------------------------------------------------

def cmd_ingest(args) -> int:
    cfg, _ = resolve_config(args)
    g = load_dataset(cfg)
    stats = {
        "nodes": g.num_nodes,
        "edges": g.num_edges,
        "directed_entries": 2 * g.num_edges,
        "labels": list(g.label_texts),
        "labelled_nodes": sum(y is not None for y in g.labels),
        "average_degree": 2.0 * g.num_edges / g.num_nodes if g.num_nodes else 0.0,
    }
    if args.out:
        out = Path(cfg.out)
        save_graph(g, out)
        _write_json(out / "stats.json", stats)
    print(json.dumps(stats, indent=2))
    return 0


def cmd_pretrain(args) -> int:
    cfg, explicit = resolve_config(args)
    g = load_dataset(cfg)
    cfg = _with_layer_rule(cfg, explicit, g)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    provider = build_provider(cfg.provider, cfg)
    records = []
    ckpt = train(g, cfg.view, cfg.train, provider, TofgTable(g, provider, cfg.view),
                 threads=cfg.threads, callback=records.append)
    ckpt.save(out / "checkpoint.ckpt")
    _write_jsonl(out / "train_log.jsonl", records)
    cfg.save(out / "config.yaml")
    if records:
        last = records[-1]
        log.info("step %d: total %.5f (positive %.5f, negative %.5f)",
                 last["step"], last["total"], last["positive"], last["negative"])
    print(str(out / "checkpoint.ckpt"))
    return 0


def _embeddings_for(ckpt, g, cfg, provider):
    ev = cfg.eval
    return node_embeddings(ckpt, g, provider, ev.mode, ev.order)


def cmd_embed(args) -> int:
    cfg, _ = resolve_config(args)
    ckpt = Checkpoint.load(args.checkpoint)
    g = load_dataset(cfg)
    provider = build_provider(ckpt.provider, cfg)
    emb = _embeddings_for(ckpt, g, cfg, provider)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "embeddings.npy", emb.astype(np.float32))
    _write_json(out / "embeddings.json", {"mode": cfg.eval.mode, "order": cfg.eval.order,
                                          "nodes": g.num_nodes, "dimension": int(emb.shape[1])})
    print(str(out / "embeddings.npy"))
    return 0


def run_eval(ckpt: Checkpoint, g, cfg: RunConfig, provider, out: Path, extra: dict | None = None) -> dict:
    ev: EvalConfig = cfg.eval
    if not g.label_texts:
        raise ConfigError("evaluation needs a labelled dataset with a label vocabulary")
    truth = g.labels
    emb = _embeddings_for(ckpt, g, cfg, provider)
    labels = label_embeddings(g.label_texts, provider, ev.label_template)
    base_seed = cfg.train.seed
    records = []
    for shots in ev.shots:
        for i in range(ev.seeds):
            seed = base_seed + i
            split = few_shot_split(truth, shots, seed)
            if shots == 0:
                preds = zero_shot(emb[list(split.test)], labels, split.test)
            else:
                adapter = few_shot_fit(
                    emb, {v: truth[v] for v in split.support}, labels,
                    epochs=ev.few_shot_epochs, lr=ev.few_shot_lr, seed=seed,
                    validation={v: truth[v] for v in split.validation} or None,
                )
                preds = adapter.predict(emb[list(split.test)], labels, split.test)
            acc = evaluate(preds, truth, split.test)
            rec = {"shots": shots, "seed": seed, "mode": ev.mode, **acc.record(), **split.sizes()}
            if extra:
                rec.update(extra)
            records.append(rec)
    summary = {}
    for shots in ev.shots:
        accs = [r["accuracy"] for r in records if r["shots"] == shots]
        summary[str(shots)] = {"mean": float(np.mean(accs)), "std": float(np.std(accs)), "runs": len(accs)}
    out.mkdir(parents=True, exist_ok=True)
    _write_jsonl(out / "metrics.jsonl", records)
    _write_json(out / "metrics_summary.json", {"mode": ev.mode, "shots": summary, **(extra or {})})
    with open(out / "metrics_summary.tsv", "w", encoding="utf-8") as fh:
        fh.write("shots\tmean\tstd\truns\n")
        for shots, s in summary.items():
            fh.write(f"{shots}\t{s['mean']:.6f}\t{s['std']:.6f}\t{s['runs']}\n")
    zs = zero_shot(emb, labels)
    _write_jsonl(out / "predictions.jsonl", (p.record(g.label_texts) for p in zs))
    return summary


def cmd_eval(args) -> int:
    cfg, _ = resolve_config(args)
    ckpt = Checkpoint.load(args.checkpoint)
    g = load_dataset(cfg)
    provider = build_provider(ckpt.provider, cfg)
    summary = run_eval(ckpt, g, cfg, provider, Path(cfg.out))
    _print_summary(summary)
    return 0


def cmd_transfer_eval(args) -> int:
    """Evaluate a checkpoint on a dataset it was not trained on, without fine-tuning the encoder."""
    cfg, _ = resolve_config(args)
    ckpt = Checkpoint.load(args.checkpoint)
    g = load_dataset(cfg)
    provider = build_provider(ckpt.provider, cfg)
    extra = {"transfer": True, "source_checkpoint": Path(args.checkpoint).name}
    summary = run_eval(ckpt, g, cfg, provider, Path(cfg.out), extra)
    _print_summary(summary)
    return 0


def _print_summary(summary: dict) -> None:
    for shots, s in summary.items():
        print(f"{shots}-shot\t{s['mean']:.4f} +- {s['std']:.4f}\t({s['runs']} runs)")


def cmd_bench_corpus(args) -> int:
    cfg, _ = resolve_config(args)
    if args.tree:
        from .datasets import complete_tree
        g = complete_tree(3, args.k_max, 10)
        roots = [0]
    else:
        g = load_dataset(cfg)
        roots = None
    report = corpus_growth(g, args.k_max, cfg.view.walk, roots=roots, num_roots=args.roots,
                           seed=cfg.train.seed, dimension=cfg.provider.dimension)
    report.write(cfg.out)
    sys.stdout.write(report.to_tsv())
    return 0


def cmd_render_doc(args) -> int:
    cfg, _ = resolve_config(args)
    g = load_dataset(cfg)
    ego = build_ego_graph(g, args.node, args.hops)
    if args.format == "flat":
        text = flat_edge_listing(ego, g).content
    elif args.format == "walks":
        docs = walk_corpus(ego, graph_document(g, ego), cfg.view.walk)
        text = "".join(f"--- walk {i}\n{d.content}" for i, d in enumerate(docs))
    else:
        text = render(graph_document(g, ego)).content
    sys.stdout.write(text)
    return 0


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="seed for training, walks and splits")
    common.add_argument("--threads", type=int, help="worker threads (1 = bit-reproducible)")
    common.add_argument("--provider", choices=("hash", "remote"))
    common.add_argument("--dimension", type=int, help="embedding dimension F")
    common.add_argument("--model", help="remote model name")
    common.add_argument("--endpoint", help="remote embeddings URL")
    common.add_argument("--cache", help="embedding cache file")
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--out", help="output directory")
    common.add_argument("--nodes", help="nodes JSON-lines file")
    common.add_argument("--edges", help="edge list file")
    common.add_argument("--labels", help="label vocabulary file")
    common.add_argument("--toy", choices=("a", "b"), help="bundled toy dataset")
    common.add_argument("--max-order", type=int, help="maximum view order K")
    common.add_argument("--tofg-mode", choices=("full", "random-walk"))
    common.add_argument("--walk-p", type=float, help="cross-edge jump probability")
    common.add_argument("--walk-len", type=int, help="maximum walk length")
    common.add_argument("--walk-num", type=int, help="walks per node")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tagkit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="validate a dataset and report statistics")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("pretrain", parents=[common], help="self-supervised alignment training")
    s.add_argument("--steps", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--negatives", choices=("batch", "pairs"), help="scale of the negative term (default batch)")
    s.add_argument("--arch", choices=("gcn", "sage", "gin"))
    s.set_defaults(func=cmd_pretrain)

    for name, func, helptext in (
        ("embed", cmd_embed, "write node embeddings"),
        ("eval", cmd_eval, "zero-/few-shot evaluation"),
        ("transfer-eval", cmd_transfer_eval, "evaluate a checkpoint on another dataset"),
    ):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--order", type=int, help="document order for tofg-k mode")
        if name != "embed":
            s.add_argument("--shots", help="comma-separated shot counts, e.g. 0,5")
            s.add_argument("--seeds", type=int, help="number of split seeds")
            s.add_argument("--label-template", help="prompt template, e.g. 'a document about {}'")
        s.set_defaults(func=func)

    s = sub.add_parser("bench-corpus", parents=[common], help="corpus growth per hop")
    s.add_argument("--k-max", type=int, default=5)
    s.add_argument("--roots", type=int, default=20, help="number of sampled roots")
    s.add_argument("--tree", action="store_true", help="use a complete 3-ary tree rooted at node 0")
    s.set_defaults(func=cmd_bench_corpus)

    s = sub.add_parser("render-doc", parents=[common], help="print a node's neighbourhood document")
    s.add_argument("--node", type=int, required=True)
    s.add_argument("--hops", type=int, default=2)
    s.add_argument("--format", choices=("hierarchical", "flat", "walks"), default="hierarchical")
    s.set_defaults(func=cmd_render_doc)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, GraphFormatError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"tagkit {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
