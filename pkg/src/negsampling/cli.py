"""Command-line entry point: ``negsampling {train,eval,split,verify-theory,synth}``.

Exit codes: 0 success, 1 data or runtime error, 2 usage error.  JSON goes
to stdout with sorted keys.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import graph as G
from .encoders import CENTRAL, CONTEXT, EmbeddingFormatError, encoder_from_files, export_embeddings, init_lookup, init_sage
from .evaluation import eval_classification, eval_link_prediction, eval_recommendation
from .sampling import SAMPLERS, PositiveSampler, make_negative_sampler
from .theory import verify_theory
from .training import TrainConfig, train_mcns, train_sampled_nce, write_metadata

logger = logging.getLogger("negsampling")

DATA_ERRORS = (OSError, G.GraphFormatError, G.DisconnectedGraphError, EmbeddingFormatError)


class UsageError(Exception):
    pass


def _dump(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, default=_jsonable)


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def _ks(text: str) -> tuple:
    try:
        ks = tuple(int(x) for x in text.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("k values must be positive")
    return ks


def _M(text: str):
    if text.upper() == "ALL":
        return "ALL"
    try:
        m = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"M must be a positive integer or ALL, got {text!r}") from None
    if m < 1:
        raise argparse.ArgumentTypeError("M must be positive")
    return m


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="negsampling", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train embeddings and write emb.txt, loss.csv, meta.json")
    t.add_argument("--config", help="INI file; keys under [train] use flag names, flags override")
    t.add_argument("--edges", required=True)
    t.add_argument("--partition")
    t.add_argument("--directed", action="store_true")
    t.add_argument("--encoder", choices=("lookup", "sage"), default="lookup")
    t.add_argument("--mode", choices=("dual", "unique"), default="dual", help="lookup tables")
    t.add_argument("--loop", choices=("mcns", "nce"), default="mcns",
                   help="mcns: DFS-ordered hinge loop; nce: degree-proportional mini-batches")
    t.add_argument("--loss", choices=("hinge", "nce"))
    t.add_argument("--sampler", default="mcns", help="one of " + ", ".join(SAMPLERS))
    t.add_argument("--positive", choices=("walk_window", "direct_edge"), default="walk_window")
    t.add_argument("--window", type=int, default=5)
    t.add_argument("--beta", type=float, default=0.75)
    t.add_argument("--alpha", type=float, default=0.75)
    t.add_argument("--epsilon", type=float, default=1e-4)
    t.add_argument("--k-local", type=int, default=10)
    t.add_argument("--warmup", type=int, default=20)
    t.add_argument("--steps-per-sample", type=int, default=1)
    t.add_argument("--exclude-neighbors", action="store_true")
    t.add_argument("--dns-candidates", type=int, default=5)
    t.add_argument("--warp-max-tries", type=int, default=100)
    t.add_argument("--dim", type=int, default=256)
    t.add_argument("--gamma", type=float, default=0.1, help="hinge margin")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--negatives", type=int, default=1)
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--fold", type=int, help="hold out block FOLD of 11 (block 10 is validation)")
    t.add_argument("--fold-seed", type=int, default=0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="score embeddings on a downstream task")
    esub = e.add_subparsers(dest="task", required=True)
    for name in ("rec", "lp", "clf"):
        ep = esub.add_parser(name)
        ep.add_argument("--emb", required=True)
        ep.add_argument("--seed", type=int, default=0)
        ep.add_argument("--out", help="directory for metrics.json (default: next to --emb)")
        if name != "clf":
            ep.add_argument("--context-emb", help="context table (default: emb_context.txt beside --emb if present)")
    rec = esub.choices["rec"]
    rec.add_argument("--test", required=True, help="'user item' pairs")
    rec.add_argument("--train-edges", help="training edges; a user's training items are never candidates")
    rec.add_argument("--partition", help="U/I tags; candidates are the I nodes")
    rec.add_argument("--exclude", help="further 'user item' pairs to drop from the candidates")
    rec.add_argument("--M", type=_M, default="ALL")
    rec.add_argument("--k", type=_ks, default=(10, 30))
    esub.choices["lp"].add_argument("--split", required=True)
    clf = esub.choices["clf"]
    clf.add_argument("--labels", required=True)
    clf.add_argument("--train-ratio", type=float, default=0.5)

    s = sub.add_parser("split", help="link-prediction split with a connected residual graph")
    s.add_argument("--edges", required=True)
    s.add_argument("--fraction", type=float, default=0.3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="directory for residual.tsv and split.json")

    v = sub.add_parser("verify-theory", help="numerical checks of the single-node theory")
    v.add_argument("--T", type=int, default=1000)
    v.add_argument("--trials", type=int, default=500)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--alpha", type=float, default=0.75)
    v.add_argument("--out", help="also write the report here")

    y = sub.add_parser("synth", help="write a synthetic graph")
    y.add_argument("kind", choices=("ba", "path", "star", "bipartite"))
    y.add_argument("--n", type=int, default=100, help="nodes (users for bipartite)")
    y.add_argument("--m", type=int, default=2, help="BA attachment count, or items for bipartite")
    y.add_argument("--p", type=float, default=0.1, help="bipartite edge probability")
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--out", required=True)
    y.add_argument("--partition-out", help="U/I tag file (bipartite; default OUT.parts)")
    return p


def _apply_config(parser, argv):
    """Parse ``argv``; values from ``train --config`` become defaults that flags override."""
    argv = sys.argv[1:] if argv is None else list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config is None or "train" not in argv:
        return parser.parse_args(argv)
    cp = configparser.ConfigParser()
    if not cp.read(known.config):
        raise FileNotFoundError(f"config file {known.config} not found")
    section = cp["train"] if cp.has_section("train") else cp["DEFAULT"]
    tparser = parser._subparsers._group_actions[0].choices["train"]
    dests = {a.dest: a for a in tparser._actions}
    overrides = {}
    for key in section:
        dest = key.replace("-", "_")
        if dest not in dests or dest in ("help", "config"):
            raise UsageError(f"unknown config key {key!r}")
        act = dests[dest]
        if isinstance(act, argparse._StoreTrueAction):
            try:
                overrides[dest] = section.getboolean(key)
            except ValueError as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
        else:
            try:
                val = act.type(section[key]) if act.type else section[key]
            except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
            if act.choices is not None and val not in act.choices:
                raise UsageError(f"config key {key!r}: {val!r} not in {sorted(act.choices)}")
            overrides[dest] = val
        act.required = False
    tparser.set_defaults(**overrides)
    return parser.parse_args(argv)


def _fold_graph(graph: G.Graph, fold: int, seed: int):
    """Cut the U->I (or all) edges into 11 seeded blocks; return train graph, test and valid pairs."""
    if not 0 <= fold < 10:
        raise UsageError("--fold must lie in 0..9")
    e = graph.edges()
    if graph.is_bipartite:
        flip = graph.partition[e[:, 0]] == 1
        e[flip] = e[flip][:, ::-1]
    blocks = np.array_split(np.random.default_rng(seed).permutation(len(e)), 11)
    train = np.concatenate([b for i, b in enumerate(blocks[:10]) if i != fold])
    g = G.Graph(graph.num_nodes, e[train], partition=graph.partition, node_ids=graph.node_ids)
    return g, e[blocks[fold]], e[blocks[10]]


def _write_pairs(pairs, ids, path):
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in pairs:
            fh.write(f"{ids[a]}\t{ids[b]}\n")


def cmd_train(args) -> int:
    if args.sampler not in SAMPLERS:
        raise UsageError(f"unknown sampler {args.sampler!r}; choose from {', '.join(SAMPLERS)}")
    for flag in ("dim", "epochs", "negatives", "batch_size", "workers", "window", "warp_max_tries",
                 "dns_candidates", "steps_per_sample"):
        if getattr(args, flag) < 1:
            raise UsageError(f"--{flag.replace('_', '-')} must be at least 1")
    if not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    if args.gamma < 0 or args.lr < 0 or args.epsilon <= 0:
        raise UsageError("--gamma and --lr must be nonnegative, --epsilon positive")
    loss = args.loss or ("hinge" if args.loop == "mcns" else "nce")
    try:
        config = TrainConfig(learning_rate=args.lr, dim=args.dim, margin=args.gamma, batch_size=args.batch_size,
                             negatives=args.negatives, epochs=args.epochs, loss=loss, seed=args.seed,
                             workers=args.workers)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    graph = G.load_edge_list(args.edges, args.directed, args.partition)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extra = {}
    if args.fold is not None:
        graph, test, valid = _fold_graph(graph, args.fold, args.fold_seed)
        _write_pairs(test, graph.node_ids, out / "test.tsv")
        _write_pairs(valid, graph.node_ids, out / "valid.tsv")
        _write_pairs(graph.edges() if not graph.is_bipartite else graph.arcs[graph.partition[graph.arcs[:, 0]] == 0],
                     graph.node_ids, out / "train.tsv")
        extra["fold"] = {"fold": args.fold, "fold_seed": args.fold_seed, "test": len(test), "valid": len(valid)}

    ss = np.random.SeedSequence(args.seed).spawn(3)
    if args.encoder == "lookup":
        enc = init_lookup(graph.num_nodes, args.dim, args.mode, seed=ss[0])
    else:
        enc = init_sage(graph, args.dim, seed=ss[0])
    pos = PositiveSampler(graph, args.positive, window=args.window, seed=ss[1])
    neg = make_negative_sampler(args.sampler, graph, beta=args.beta, alpha=args.alpha, epsilon=args.epsilon,
                                k_local=args.k_local, warmup=args.warmup, dns_candidates=args.dns_candidates,
                                warp_max_tries=args.warp_max_tries, margin=args.gamma, seed=ss[2],
                                exclude_neighbors=args.exclude_neighbors, steps_per_sample=args.steps_per_sample)
    if args.loop == "mcns":
        if args.workers > 1:
            logger.warning("--workers applies to the nce loop only; the DFS loop runs single-threaded")
        result = train_mcns(graph, enc, config, sampler=neg, positive=pos)
    else:
        result = train_sampled_nce(graph, enc, pos, neg, config)

    export_embeddings(enc, graph.node_ids, out / "emb.txt", CENTRAL, seed=args.seed)
    if getattr(enc, "mode", "unique") == "dual":
        export_embeddings(enc, graph.node_ids, out / "emb_context.txt", CONTEXT, seed=args.seed)
    result.write_csv(out / "loss.csv")
    effective = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    write_metadata(out / "meta.json", config, {
        **extra, "effective_args": effective, "sampler": neg.config(), "sampler_stats": neg.stats,
        "train_stats": {k: v for k, v in result.stats.items() if k != "negatives_per_iteration"},
        "encoder": args.encoder, "exported_table": "central", "seed": args.seed,
        "epoch": len(result.loss_trace),
    })
    print(_dump({"out": str(out), "epochs": len(result.loss_trace),
                 "final_loss": result.loss_trace[-1] if result.loss_trace else None}))
    return 0


def _load_encoder(args):
    ctx = getattr(args, "context_emb", None)
    if ctx is None:
        guess = Path(args.emb).with_name("emb_context.txt")
        ctx = str(guess) if guess.exists() and guess != Path(args.emb) else None
    elif not Path(ctx).exists():
        raise FileNotFoundError(f"{ctx} not found")
    ids, enc = encoder_from_files(args.emb, ctx)
    return ids, {x: i for i, x in enumerate(ids)}, enc


def _read_pairs(path, index):
    pairs = []
    for lineno, parts in G._data_lines(path):
        if len(parts) < 2:
            raise G.GraphFormatError(f"{path}:{lineno}: expected 'user item'")
        try:
            pairs.append((index[parts[0]], index[parts[1]]))
        except KeyError as exc:
            raise G.GraphFormatError(f"{path}:{lineno}: node {exc} has no embedding") from None
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def _read_partition(path, index, n):
    part = np.full(n, -1, dtype=np.int8)
    for lineno, parts in G._data_lines(path):
        if len(parts) != 2 or parts[1] not in ("U", "I"):
            raise G.GraphFormatError(f"{path}:{lineno}: expected 'node U|I'")
        if parts[0] in index:
            part[index[parts[0]]] = 0 if parts[1] == "U" else 1
    if np.any(part < 0):
        raise G.GraphFormatError(f"{path}: some embedded nodes have no U/I tag")
    return part


def cmd_eval(args) -> int:
    ids, index, enc = _load_encoder(args)
    n = len(ids)
    if args.task == "rec":
        test = _read_pairs(args.test, index)
        part = _read_partition(args.partition, index, n) if args.partition else None
        graph = G.Graph(n, _read_pairs(args.train_edges, index), partition=part) if args.train_edges else None
        candidates = np.flatnonzero(part == 1) if part is not None else None
        exclude = _read_pairs(args.exclude, index) if args.exclude else None
        report = eval_recommendation(enc, test, args.M, ks=args.k, graph=graph, seed=args.seed,
                                     exclude_pairs=exclude, candidates=candidates)
    elif args.task == "lp":
        pos, negs = G.load_split_pairs(args.split, index)
        split = G.LinkSplit(None, pos, negs, float("nan"), float("nan"))
        report = eval_link_prediction(enc, split, seed=args.seed)
    else:
        if not 0 < args.train_ratio < 1:
            raise UsageError("--train-ratio must lie in (0, 1)")
        labels = G.load_labels(args.labels, index)
        report = eval_classification(enc.table(CENTRAL), labels, args.train_ratio, seed=args.seed)
    report.config.update({"task": args.task, "emb": args.emb})
    out = Path(args.out) if args.out else Path(args.emb).parent
    out.mkdir(parents=True, exist_ok=True)
    text = report.to_json()
    (out / "metrics.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_split(args) -> int:
    if not 0 < args.fraction < 1:
        raise UsageError("--fraction must lie in (0, 1)")
    graph = G.load_edge_list(args.edges)
    split = G.split_link_prediction(graph, args.fraction, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    G.write_edge_list(split.residual, out / "residual.tsv")
    split.to_json(out / "split.json")
    print(_dump({"residual_edges": split.residual.num_edges, "test_pos": len(split.test_pos),
                 "test_neg": len(split.test_neg), "achieved_fraction": split.achieved_fraction}))
    return 0


def cmd_verify_theory(args) -> int:
    if not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    if args.T < 1 or args.trials < 1:
        raise UsageError("--T and --trials must be at least 1")
    report = verify_theory(T=args.T, trials=args.trials, seed=args.seed, alpha=args.alpha)
    text = _dump(report)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0 if report["passed"] else 1


def cmd_synth(args) -> int:
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    try:
        if args.kind == "ba":
            g = G.barabasi_albert(args.n, args.m, args.seed)
        elif args.kind == "path":
            g = G.path_graph(args.n)
        elif args.kind == "star":
            g = G.star_graph(args.n)
        else:
            g = G.random_bipartite(args.n, args.m, args.p, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    parts = args.partition_out or (args.out + ".parts" if args.kind == "bipartite" else None)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    G.write_edge_list(g, args.out, parts)
    print(_dump({"kind": args.kind, "nodes": g.num_nodes, "edges": g.num_edges, "out": args.out,
                 "partition": parts}))
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "split": cmd_split,
            "verify-theory": cmd_verify_theory, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
