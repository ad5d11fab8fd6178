"""Method dispatch, benchmark tables and SVG figures."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .cluster import balanced_kmeans_baseline, raw_order_features
from .errors import BatchforgeError, ContractError
from .heuristics import random_balanced_assignment, seed_savings_batching
from .routing import Solution, batch_route, solution_distance
from .warehouse import BatchingInstance

log = logging.getLogger(__name__)

LEARNED = ("btogcn", "supervised")
METHODS = ("heuristic", "bkm", "random") + LEARNED
MODE_OF = {"btogcn": "task-oriented", "supervised": "supervised-only"}


def solve_method(inst: BatchingInstance, method: str, seed: int = 0, checkpoint=None,
                 train_config=None, labels: Solution | None = None,
                 exact_small: bool = False) -> Solution:
    """Solve ``inst`` with one of :data:`METHODS`.

    Learned methods infer with ``checkpoint`` (a path or a ``(tensors, meta)``
    pair) when given; otherwise a model is fitted to this one graph with
    ``train_config`` and the best routed assignment seen is returned.
    """
    from . import train as tr

    if method == "heuristic":
        return labels if labels is not None else seed_savings_batching(inst)
    if method == "bkm":
        y = balanced_kmeans_baseline(raw_order_features(inst), inst.K, inst.c, seed=seed)
        return solution_distance(y, inst, exact_small)
    if method == "random":
        return solution_distance(random_balanced_assignment(inst, seed), inst, exact_small)
    if method not in LEARNED:
        raise ContractError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if checkpoint is not None:
        tensors, meta = ad.load_checkpoint(checkpoint) if isinstance(checkpoint, (str, Path)) else checkpoint
        model, best = tr.model_from_checkpoint(tensors, meta)
        return tr.evaluate(model, inst, params=best)
    cfg = train_config if train_config is not None else tr.TrainConfig()
    cfg = replace(cfg, mode=MODE_OF[method], seed=seed, exact_small=exact_small)
    return tr.train_single_graph(inst, cfg, labels=labels).best


@dataclass
class BenchRow:
    method: str
    graph: str
    seed: int
    total: float = float("nan")
    avg: float = float("nan")
    max: float = float("nan")
    min: float = float("nan")
    runtime: float = 0.0
    status: str = "ok"


ROW_COLUMNS = ("method", "graph", "seed", "total", "avg", "max", "min", "runtime", "status")
SUMMARY_COLUMNS = ("method", "runs", "failures", "avg_batch", "max_batch", "min_batch",
                   "mean_total", "runtime")


@dataclass
class BenchmarkReport:
    """Per (method, graph, seed) rows; :meth:`summary` averages the per-graph
    mean / max / min batch distances over the successful rows of each method."""

    methods: list
    rows: list = field(default_factory=list)
    solutions: dict = field(default_factory=dict)  # (method, graph, seed) -> Solution

    def summary(self) -> list[dict]:
        out = []
        for m in self.methods:
            rows = [r for r in self.rows if r.method == m]
            ok = [r for r in rows if r.status == "ok"]
            mean = (lambda key: float(np.mean([getattr(r, key) for r in ok]))) if ok else (lambda key: float("nan"))
            out.append({"method": m, "runs": len(rows), "failures": len(rows) - len(ok),
                        "avg_batch": mean("avg"), "max_batch": mean("max"), "min_batch": mean("min"),
                        "mean_total": mean("total"), "runtime": float(sum(r.runtime for r in rows))})
        return out

    def rows_csv(self, deterministic: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_COLUMNS)
        for r in self.rows:
            vals = [getattr(r, c) for c in ROW_COLUMNS]
            if deterministic:
                vals[ROW_COLUMNS.index("runtime")] = 0.0
            w.writerow([repr(v) if isinstance(v, float) else v for v in vals])
        return buf.getvalue()

    def summary_csv(self, deterministic: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in self.summary():
            if deterministic:
                s["runtime"] = 0.0
            w.writerow([repr(s[c]) if isinstance(s[c], float) else s[c] for c in SUMMARY_COLUMNS])
        return buf.getvalue()


def run_benchmark(instances, methods, seeds=(0,), names=None, checkpoints=None,
                  train_config=None, exact_small: bool = False) -> BenchmarkReport:
    """Evaluate every method on every instance and seed.

    Heuristic labels are computed once per instance and shared with the
    learned methods. A method that raises on some instance leaves a failure
    row and the run moves on.
    """
    if not instances or not methods:
        raise ContractError("need at least one instance and one method")
    for m in methods:
        if m not in METHODS:
            raise ContractError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    names = names or [f"g{g}" for g in range(len(instances))]
    checkpoints = checkpoints or {}
    report = BenchmarkReport(list(methods))
    for name, inst in zip(names, instances):
        labels = None
        for seed in seeds:
            for m in methods:
                t0 = time.perf_counter()
                row = BenchRow(m, name, int(seed))
                try:
                    if labels is None and (m == "heuristic" or (m in LEARNED and m not in checkpoints)):
                        labels = seed_savings_batching(inst)
                    sol = solve_method(inst, m, seed, checkpoints.get(m), train_config, labels, exact_small)
                    d = sol.batch_distances
                    row.total, row.avg = float(sol.total), float(np.mean(d))
                    row.max, row.min = float(np.max(d)), float(np.min(d))
                    report.solutions[(m, name, int(seed))] = sol
                except (BatchforgeError, ValueError, KeyError, FloatingPointError) as e:
                    log.warning("%s failed on %s (seed %d): %s", m, name, seed, e)
                    row.status = f"failed: {type(e).__name__}: {e}"
                row.runtime = time.perf_counter() - t0
                report.rows.append(row)
    return report


# figures

def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams.update({"svg.hashsalt": "batchforge", "font.size": 9, "axes.spines.top": False,
                         "axes.spines.right": False})
    return plt


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")


def plot_scores(report: BenchmarkReport, path) -> None:
    """Grouped bars of the averaged mean / max / min batch distances per method."""
    plt = _pyplot()
    summary = report.summary()
    x = np.arange(len(summary))
    fig, ax = plt.subplots(figsize=(1.4 * len(summary) + 2.5, 3.2))
    for off, key, label in ((-0.27, "avg_batch", "avg"), (0.0, "max_batch", "max"), (0.27, "min_batch", "min")):
        ax.bar(x + off, [s[key] for s in summary], width=0.27, label=label)
    ax.set_xticks(x)
    ax.set_xticklabels([s["method"] for s in summary])
    ax.set_ylabel("batch picking distance (m)")
    ax.legend(frameon=False, ncol=3)
    _save(fig, path)
    plt.close(fig)


def _draw_layout(ax, w) -> None:
    for b in range(w.blocks):
        y0, y1 = w.cross_y(b), w.cross_y(b + 1)
        for a in range(w.aisles):
            x = w.aisle_x(a)
            ax.plot([x, x], [y0 + w.cross_aisle_width / 2, y1 - w.cross_aisle_width / 2],
                    color="0.85", lw=3, solid_capstyle="butt", zorder=0)
    for k in range(w.blocks + 1):
        y = w.cross_y(k)
        ax.plot([w.aisle_x(0), w.aisle_x(w.aisles - 1)], [y, y], color="0.93", lw=1, zorder=0)


def route_polyline(inst: BatchingInstance, stops) -> np.ndarray:
    """Drawable waypoints of a closed route given as distance-matrix nodes."""
    w = inst.warehouse
    locs = [w.depot if s == 0 else inst.items[s - 1].slot for s in stops]
    pts = [w.coord(locs[0])]
    for a, b in zip(locs[:-1], locs[1:]):
        pts.extend(w.path(a, b)[1:])
    return np.array(pts)


def plot_routes(inst: BatchingInstance, sol: Solution, path, top: int = 3, title: str | None = None) -> list[int]:
    """Draw the ``top`` longest pick lists of a solution; returns their batch ids."""
    plt = _pyplot()
    w = inst.warehouse
    order = np.argsort(-np.asarray(sol.batch_distances), kind="stable")[:top]
    fig, axes = plt.subplots(1, len(order), figsize=(3.2 * len(order), 3.6), squeeze=False)
    for ax, k in zip(axes[0], order):
        _draw_layout(ax, w)
        route = batch_route(np.flatnonzero(sol.assignment.labels == k), inst)
        pts = route_polyline(inst, route.stops)
        ax.plot(pts[:, 0], pts[:, 1], color="C3", lw=1.2)
        stops = np.array([inst.items[s - 1].coord for s in route.visits]).reshape(-1, 2)
        ax.scatter(stops[:, 0], stops[:, 1], s=10, color="C0", zorder=3)
        ax.scatter(*w.coord(w.depot), marker="s", s=30, color="k", zorder=3)
        ax.set_title(f"batch {int(k)}: {route.length:.0f} m")
        ax.set_aspect("equal")
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title)
    _save(fig, path)
    plt.close(fig)
    return [int(k) for k in order]


def write_report(report: BenchmarkReport, instances, out_dir, names=None,
                 deterministic: bool = False, seed: int | None = None) -> list[Path]:
    """Write rows / summary CSV, the score bar chart and per-method route plots
    of the first graph. Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = names or [f"g{g}" for g in range(len(instances))]
    written = []
    for fname, text in (("rows.csv", report.rows_csv(deterministic)),
                        ("summary.csv", report.summary_csv(deterministic))):
        (out / fname).write_text(text)
        written.append(out / fname)
    plot_scores(report, out / "scores.svg")
    written.append(out / "scores.svg")
    seed = seed if seed is not None else (report.rows[0].seed if report.rows else 0)
    for m in report.methods:
        sol = report.solutions.get((m, names[0], seed))
        if sol is None:
            continue
        p = out / f"routes_{m}.svg"
        plot_routes(instances[0], sol, p, title=f"{m}, {names[0]}: top-3 pick lists")
        written.append(p)
    return written
