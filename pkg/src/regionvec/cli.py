"""Command-line entry point.

Subcommands: synth, pretrain, evaluate, sweep, gradcheck. Exit codes:
0 success, 1 validation/usage error, 2 I/O error. An optional config file
(flat key=value lines, keys matching long flag names) provides defaults;
explicit flags override it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import DataError, MissingFileError, load_dataset, validate
from .downstream import EvalConfig, evaluate, sweep, write_report
from .graph import BUILTIN_VIEWS, GraphConfig, build, message_matrices
from .losses import LossConfig, total_loss
from .model import HyperParams, forward, init_params, jitter_params
from .synth import SynthSpec, generate_city, random_dataset
from .training import TrainConfig, export_embeddings, import_embeddings, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dim", type=int, default=144)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--topk-demo", type=int, default=10)
    p.add_argument("--topk-mobility", type=int, default=20)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> _Parser:
    parser = _Parser(prog="regionvec",
                     description="Multi-view region embeddings: synthesize a "
                                 "city, pretrain embeddings, evaluate them.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic city directory")
    p.add_argument("--grid", type=int, default=6, help="grid side; n = grid^2")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clusters", type=int, default=3)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--poi-categories", type=int, default=6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pretrain", help="train embeddings on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--views", required=True,
                   help="comma-separated: neighbor, poi, mobility, or a "
                        "demographic attribute name")
    _add_train_flags(p)
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("evaluate", help="ridge/k-fold evaluation of an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--ridge-lambda", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-transform", action="store_true",
                   help="apply log1p to the task labels")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="train/evaluate view combinations and rank them")
    p.add_argument("--data", required=True)
    p.add_argument("--combos", required=True,
                   help="combinations like 'mobility+income;neighbor+poi'")
    p.add_argument("--runs", type=int, default=10)
    _add_train_flags(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--ridge-lambda", type=float, default=1.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the full training "
                            "gradient on a random city")
    p.add_argument("--regions", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--step", type=float, default=1e-5)
    p.set_defaults(func=_cmd_gradcheck)

    for sp in sub.choices.values():
        sp.add_argument("--config", help="key=value defaults file; flags override")
    return parser


def _apply_config(argv: list[str]) -> list[str]:
    """Expand --config FILE into flags inserted after the subcommand."""
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        return argv
    path = Path(argv[at + 1])
    extra: list[str] = []
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"bad config line: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() == "true":
            extra.append(flag)
        elif value.lower() != "false":
            extra.extend([flag, value])
    # insert right after the subcommand so explicit flags win
    return argv[:1] + extra + argv[1:]


def _parse_views(text: str, dataset) -> tuple[str, ...]:
    views = tuple(v.strip() for v in text.split(",") if v.strip())
    valid = set(BUILTIN_VIEWS) | set(dataset.demographics)
    for view in views:
        if view not in valid:
            raise DataError(f"unknown view {view!r}; valid views: "
                            f"{', '.join(sorted(valid))}")
    if not views:
        raise DataError("empty view list")
    return views


def _load_checked(path: str):
    dataset = load_dataset(path)
    report = validate(dataset)
    if not report.ok:
        lines = "\n".join(f"  [{f.code}] {f.message} @ {f.location}"
                          for f in report.errors)
        raise DataError(f"dataset failed validation:\n{lines}")
    return dataset


def _cmd_synth(args) -> int:
    spec = SynthSpec(grid_side=args.grid, seed=args.seed, clusters=args.clusters,
                     noise=args.noise, bins=args.bins,
                     poi_categories=args.poi_categories)
    dataset = generate_city(spec, args.out)
    print(f"wrote {args.out}: {dataset.n} regions, "
          f"{len(dataset.demographics)} demographic attributes")
    return 0


def _cmd_pretrain(args) -> int:
    dataset = _load_checked(args.data)
    views = _parse_views(args.views, dataset)
    cfg = TrainConfig(views=views, dim=args.dim, epochs=args.epochs, lr=args.lr,
                      weight_decay=args.weight_decay, margin=args.margin,
                      k_demo=args.topk_demo, k_mobility=args.topk_mobility,
                      seed=args.seed, log_every=args.log_every)
    result = train(dataset, cfg)
    export_embeddings(result.embeddings, args.out)
    print(f"wrote {args.out}: {result.embeddings.shape[0]} regions, "
          f"d={result.embeddings.shape[1]}, final loss "
          f"{result.history[-1].total:.6f} in {result.wall_time:.1f}s")
    return 0


def _cmd_evaluate(args) -> int:
    embeddings = import_embeddings(args.embeddings)
    dataset = _load_checked(args.data)
    if args.task not in dataset.labels:
        raise DataError(f"unknown task {args.task!r}; tasks: "
                        f"{', '.join(sorted(dataset.labels))}")
    if embeddings.shape[0] != dataset.n:
        raise DataError(f"embedding rows {embeddings.shape[0]} != regions {dataset.n}")
    cfg = EvalConfig(folds=args.folds, ridge_lambda=args.ridge_lambda,
                     seed=args.seed,
                     log_tasks=(args.task,) if args.log_transform else ())
    y = dataset.labels[args.task]
    if args.log_transform:
        y = np.log1p(y)
    result = evaluate(embeddings, y, cfg)
    print(json.dumps({
        "task": args.task, "mae": result.mae, "rmse": result.rmse, "r2": result.r2,
        "folds": [{"fold": s.fold, "mae": s.mae, "rmse": s.rmse, "r2": s.r2}
                  for s in result.folds],
    }, indent=2))
    return 0


def _cmd_sweep(args) -> int:
    dataset = _load_checked(args.data)
    combos = []
    for chunk in args.combos.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        combos.append(list(_parse_views(chunk.replace("+", ","), dataset)))
    if not combos:
        raise DataError("no combinations given")
    tcfg = TrainConfig(views=tuple(combos[0]), dim=args.dim, epochs=args.epochs,
                       lr=args.lr, weight_decay=args.weight_decay,
                       margin=args.margin, k_demo=args.topk_demo,
                       k_mobility=args.topk_mobility, seed=args.seed)
    ecfg = EvalConfig(folds=args.folds, ridge_lambda=args.ridge_lambda,
                      seed=args.seed, runs=args.runs)
    results = sweep(dataset, combos, tcfg, ecfg, workers=args.workers)
    write_report(results, args.out)
    best = results[0]
    print(f"wrote {args.out}; best combination: {best.combination} "
          f"(avg R2 {best.avg_r2:.4f})")
    return 0


def _cmd_gradcheck(args) -> int:
    dataset = random_dataset(args.regions, args.seed)
    k = min(10, args.regions - 1)
    views = BUILTIN_VIEWS + tuple(sorted(dataset.demographics))
    graph = build(dataset, GraphConfig(views=views, k_demo=k, k_mobility=k))
    hp = HyperParams(dim=args.dim)
    params = init_params(args.seed, graph.n, graph.relations, hp)
    jitter_params(params, args.seed)
    messages = message_matrices(graph)
    loss_cfg = LossConfig(seed=args.seed)

    def objective(_params):
        output = forward(graph, params, hp, messages)
        total, _ = total_loss(graph, output, loss_cfg)
        return total

    worst = ad.grad_check(objective, params.tensors(), step=args.step)
    print(f"{worst:.6e}")
    return 0


def main(argv: list[str] | None = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    argv = _apply_config(list(argv))
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MissingFileError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (DataError, ValueError, FloatingPointError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
