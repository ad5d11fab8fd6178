"""``batchforge`` command line: generate, solve, route, train, bench.

Exit codes: 0 success, 2 usage error, 3 infeasible or invalid input,
4 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import (ContractError, InfeasibleShapeError, InstanceFormatError,
                     InvalidLocationError, NumericError, ValidationError)
from .warehouse import InstanceParams, Warehouse, generate_instance, load_instance, save_instance

log = logging.getLogger("batchforge")

EXIT_USAGE, EXIT_INVALID, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


def _instances(paths) -> tuple[list, list[str]]:
    files = []
    for p in paths:
        p = Path(p)
        files.extend(sorted(p.glob("*.json")) if p.is_dir() else [p])
    if not files:
        raise UsageError("no instance files found")
    return [load_instance(f) for f in files], [f.stem for f in files]


def _train_config(path, seed=None, exact_small=False):
    from .train import TrainConfig

    d = json.loads(Path(path).read_text()) if path else {}
    if seed is not None:
        d["seed"] = seed
    if exact_small:
        d["exact_small"] = True
    return TrainConfig.from_dict(d)


def cmd_generate(args) -> int:
    w = Warehouse(blocks=args.blocks, aisles=args.aisles, slots=args.slots)
    params = InstanceParams(n_orders=args.orders, K=args.K, c=args.c, min_items=args.min_items,
                            max_items=args.max_items, n_items=args.items, warehouse=w)
    out = Path(args.out)
    if args.count == 1 and out.suffix == ".json":
        save_instance(generate_instance(params, args.seed), out)
        print(out)
        return 0
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        p = out / f"inst_{args.seed + i:04d}.json"
        save_instance(generate_instance(params, args.seed + i), p)
        print(p)
    return 0


def cmd_solve(args) -> int:
    from .report import LEARNED, solve_method
    from .routing import save_solution

    if args.method in LEARNED and not args.checkpoint and not args.config:
        raise UsageError(f"method {args.method} needs --checkpoint (or --config to fit this graph)")
    inst = load_instance(args.instance)
    cfg = _train_config(args.config, args.seed) if args.config else None
    sol = solve_method(inst, args.method, args.seed, args.checkpoint, cfg, exact_small=args.exact_small)
    if args.out:
        save_solution(sol, inst, args.out)
    print(f"d_S {sol.total!r}")
    for k, d in enumerate(sol.batch_distances):
        print(f"d_{k} {float(d)!r}")
    return 0


def cmd_route(args) -> int:
    from .report import plot_routes
    from .routing import load_assignment, solution_distance

    inst = load_instance(args.instance)
    sol = solution_distance(load_assignment(args.solution, inst), inst, args.exact_small)
    from .routing import batch_route
    for k in range(inst.K):
        orders = np.flatnonzero(sol.assignment.labels == k)
        route = batch_route(orders, inst, args.exact_small)
        names = ["depot" if s == 0 else inst.items[s - 1].id for s in route.stops]
        print(f"batch {k}\t{route.length!r}\t{' '.join(names)}")
    if args.out:
        plot_routes(inst, sol, args.out, top=args.top)
    return 0


def cmd_train(args) -> int:
    from .train import metrics_to_csv, train_multi_graph, train_single_graph

    cfg = _train_config(args.config, args.seed, args.exact_small)
    insts, _ = _instances(args.instances)
    if len(insts) == 1:
        res = train_single_graph(insts[0], cfg)
    else:
        n_tr, n_va, n_te = (int(x) for x in args.split.split(","))
        if n_tr + n_va + n_te > len(insts):
            raise UsageError(f"split {args.split} needs {n_tr + n_va + n_te} instances, got {len(insts)}")
        res = train_multi_graph(insts[:n_tr], insts[n_tr:n_tr + n_va],
                                insts[n_tr + n_va:n_tr + n_va + n_te], cfg)
        for k, sol in enumerate(res.test_solutions):
            print(f"test {k} d_S {sol.total!r}")
    tensors, meta = res.checkpoint()
    ad.save_checkpoint(args.out, tensors, meta)
    metrics = Path(args.metrics) if args.metrics else Path(args.out).with_suffix(".metrics.csv")
    metrics.write_text(metrics_to_csv(res.metrics))
    best = [st.best.total for st in res.states if st.best is not None]
    print(f"checkpoint {args.out}")
    print(f"metrics {metrics}")
    if best:
        print(f"best train d_S {float(np.mean(best))!r}")
    return 0


def cmd_bench(args) -> int:
    from .report import run_benchmark, write_report

    insts, names = _instances(args.instances)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    seeds = [int(s) for s in args.seeds.split(",")]
    ckpts = {}
    for spec in args.checkpoint or []:
        if "=" not in spec:
            raise UsageError("--checkpoint for bench takes METHOD=PATH")
        m, p = spec.split("=", 1)
        ckpts[m] = p
    cfg = _train_config(args.config, None) if args.config else None
    report = run_benchmark(insts, methods, seeds, names, ckpts, cfg, args.exact_small)
    written = write_report(report, insts, args.out, names, args.deterministic, seeds[0])
    sys.stdout.write(report.summary_csv(args.deterministic))
    for p in written:
        print(p)
    return 0 if all(r.status == "ok" for r in report.rows) else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="batchforge", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("generate", help="write synthetic instances")
    g.add_argument("--orders", type=int, default=50)
    g.add_argument("--K", type=int, default=5)
    g.add_argument("--c", type=int, default=10)
    g.add_argument("--items", type=int, default=None, help="item pool size (default 2N)")
    g.add_argument("--min-items", type=int, default=1)
    g.add_argument("--max-items", type=int, default=5)
    g.add_argument("--blocks", type=int, default=2)
    g.add_argument("--aisles", type=int, default=10)
    g.add_argument("--slots", type=int, default=20)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="file (count 1, .json) or directory")
    g.set_defaults(fn=cmd_generate)

    s = sub.add_parser("solve", help="batch one instance")
    s.add_argument("--instance", required=True)
    s.add_argument("--method", required=True, choices=["heuristic", "bkm", "random", "btogcn", "supervised"])
    s.add_argument("--checkpoint")
    s.add_argument("--config", help="JSON training config, fits the model to this graph")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--exact-small", action="store_true")
    s.set_defaults(fn=cmd_solve)

    r = sub.add_parser("route", help="print (and draw) the picking routes of a solution")
    r.add_argument("--instance", required=True)
    r.add_argument("--assignment", "--solution", dest="solution", required=True)
    r.add_argument("--out", help="SVG of the longest pick lists")
    r.add_argument("--top", type=int, default=3)
    r.add_argument("--exact-small", action="store_true")
    r.set_defaults(fn=cmd_route)

    t = sub.add_parser("train", help="fit a model on one or several instances")
    t.add_argument("--config")
    t.add_argument("--instances", nargs="+", required=True)
    t.add_argument("--split", default="8,1,2", help="train,val,test counts for several instances")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", required=True, help="checkpoint .npz")
    t.add_argument("--metrics", help="metrics CSV (default next to the checkpoint)")
    t.add_argument("--exact-small", action="store_true")
    t.set_defaults(fn=cmd_train)

    b = sub.add_parser("bench", help="compare methods; writes CSV tables and SVG figures")
    b.add_argument("--instances", nargs="+", required=True)
    b.add_argument("--methods", default="heuristic,bkm,random")
    b.add_argument("--seeds", default="0")
    b.add_argument("--config", help="JSON training config for learned methods")
    b.add_argument("--checkpoint", action="append", metavar="METHOD=PATH")
    b.add_argument("--out", required=True, help="report directory")
    b.add_argument("--deterministic", action="store_true", help="zero the runtime columns")
    b.add_argument("--exact-small", action="store_true")
    b.set_defaults(fn=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"batchforge: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, InstanceFormatError, InfeasibleShapeError, InvalidLocationError,
            FileNotFoundError) as e:
        print(f"batchforge: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except NumericError as e:
        print(f"batchforge: numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ContractError as e:
        print(f"batchforge: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
