"""Command-line entry point: ``graphalign {align,gen,gradcheck,eval}``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .combine import MatchSet
from .errors import AlignmentError
from .graph import load_anchors, load_edges, load_features, load_graph
from .metrics import evaluate
from .pipeline import (
    GRADCHECK_TOL,
    PipelineConfig,
    run_align,
    run_gen,
    run_gradcheck,
)

# flag name -> PipelineConfig field
_ALIGN_FLAGS = {
    "source_edges": "source_edges",
    "source_feats": "source_feats",
    "target_edges": "target_edges",
    "target_feats": "target_feats",
    "anchors": "anchors",
    "gnn": "gnn",
    "dim": "dim",
    "layers": "layers",
    "iters": "iters",
    "ot_iters": "ot_iters",
    "sinkhorn_iters": "sinkhorn_iters",
    "tau_t": "tau_t",
    "tau_beta": "tau_beta",
    "tau_w": "tau_w",
    "marginals": "marginals",
    "top_r": "top_r",
    "ensemble": "ensemble",
    "seed": "seed",
    "out_dir": "out_dir",
}


def _add_align(sub):
    p = sub.add_parser("align", help="align two graphs and write the matching")
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    for name in ("source-edges", "source-feats", "target-edges", "target-feats", "anchors"):
        p.add_argument(f"--{name}")
    p.add_argument("--gnn", choices=("lgcn", "gcn"))
    p.add_argument("--dim", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--ot-iters", type=int)
    p.add_argument("--sinkhorn-iters", type=int)
    p.add_argument("--tau-t", type=float)
    p.add_argument("--tau-beta", type=float)
    p.add_argument("--tau-w", type=float)
    p.add_argument("--marginals", choices=("uniform", "wl", "adaptive"))
    p.add_argument("--top-r", type=int)
    p.add_argument("--ensemble", choices=("product", "average"))
    p.add_argument("--no-combine", action="store_true", default=None,
                   help="predict the row argmax of the learned plan instead of matching")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--dump-matrices", action="store_true", default=None)
    p.add_argument("--trajectory", action="store_true", default=None)
    p.add_argument("--save-config", help="also write the resolved config here")


def _add_gen(sub):
    p = sub.add_parser("gen", help="write a synthetic noisy permuted pair")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--source-edges")
    p.add_argument("--source-feats")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--features", choices=("binary", "onehot", "gaussian"), default="binary")
    p.add_argument("--d-in", type=int, default=16)
    p.add_argument("--avg-degree", type=float, default=4.0)
    p.add_argument("--p-edge", type=float, default=0.0)
    p.add_argument("--p-feat", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)


def _add_gradcheck(sub):
    p = sub.add_parser("gradcheck", help="compare analytic and numerical gradients")
    p.add_argument("--source-edges")
    p.add_argument("--source-feats")
    p.add_argument("--target-edges")
    p.add_argument("--target-feats")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--d-in", type=int, default=3)
    p.add_argument("--gnn", choices=("lgcn", "gcn"), default="gcn")
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)


def _add_eval(sub):
    p = sub.add_parser("eval", help="score a match file or an alignment matrix")
    p.add_argument("--anchors", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--matches", help="'src<TAB>dst' match file")
    src.add_argument("--matrix", help="alignment matrix in the feature-file format")
    p.add_argument("--n1", type=int, help="source count for a match file (default: from anchors)")
    p.add_argument("--n2", type=int, help="target count for a match file (default: from anchors)")
    p.add_argument("--json", action="store_true", help="print the single-line record")


def build_parser():
    parser = argparse.ArgumentParser(prog="graphalign", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_align(sub)
    _add_gen(sub)
    _add_gradcheck(sub)
    _add_eval(sub)
    return parser


def config_from_args(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    updates = {
        field: getattr(args, flag)
        for flag, field in _ALIGN_FLAGS.items()
        if getattr(args, flag) is not None
    }
    if args.no_combine:
        updates["combine"] = False
    if args.dump_matrices:
        updates["dump_matrices"] = True
    if args.trajectory:
        updates["trajectory"] = True
    return replace(cfg, **updates)


def _cmd_align(args):
    cfg = config_from_args(args)
    _, _, _, report = run_align(cfg)
    if args.save_config:
        cfg.save(args.save_config)
    if report is not None:
        print(report.to_text(), end="")
    return 0


def _cmd_gen(args):
    paths = run_gen(
        args.out_dir, n=args.n, features=args.features, d_in=args.d_in,
        avg_degree=args.avg_degree, p_edge=args.p_edge, p_feat=args.p_feat, seed=args.seed,
        source_edges=args.source_edges, source_feats=args.source_feats,
    )
    for p in paths:
        print(p)
    return 0


def _cmd_gradcheck(args):
    files = (args.source_edges, args.source_feats, args.target_edges, args.target_feats)
    graphs = None
    if any(files):
        if not all(files):
            raise ValueError("gradcheck needs all four graph files or none")
        graphs = (load_graph(files[0], files[1]), load_graph(files[2], files[3]))
    report = run_gradcheck(n=args.n, d_in=args.d_in, gnn=args.gnn, dim=args.dim,
                           layers=args.layers, seed=args.seed, graphs=graphs)
    for key, value in report.items():
        print(f"{key} = {value:.3e}")
    if report["max"] > GRADCHECK_TOL:
        print(f"gradient check failed: deviation above {GRADCHECK_TOL:g}", file=sys.stderr)
        return 1
    return 0


def _cmd_eval(args):
    truth = load_anchors(args.anchors)
    if args.matrix:
        report = evaluate(load_features(args.matrix), truth)
    else:
        pairs = load_edges(args.matches)
        n1 = args.n1 or int(max(truth.pairs[:, 0].max(), pairs[:, 0].max(initial=0))) + 1
        n2 = args.n2 or int(max(truth.pairs[:, 1].max(), pairs[:, 1].max(initial=0))) + 1
        indicator = np.zeros((n1, n2))
        indicator[pairs[:, 0], pairs[:, 1]] = 1.0
        try:
            matches = MatchSet(pairs)
        except ValueError:
            # row-argmax predictions may repeat targets; score them as a matrix
            matches = None
        report = evaluate(indicator, truth, matches)
    print(report.to_json() if args.json else report.to_text(), end="\n" if args.json else "")
    return 0


_COMMANDS = {
    "align": _cmd_align,
    "gen": _cmd_gen,
    "gradcheck": _cmd_gradcheck,
    "eval": _cmd_eval,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (AlignmentError, OSError, ValueError, ArithmeticError) as exc:
        print(f"graphalign {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
