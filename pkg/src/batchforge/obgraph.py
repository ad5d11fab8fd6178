"""Heterogeneous order-batching graph: order and item nodes joined by
order-order (oo), order-item (oi) and item-item (ii) edges."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .routing import solve_tsp
from .warehouse import BatchingInstance

OO, OI, II = "oo", "oi", "ii"
RELATIONS = (OO, OI, II)
ORDER, ITEM = "order", "item"


@dataclass(frozen=True)
class SamplingConfig:
    M: int = 10  # nearest oo / ii neighbors kept per node
    P: int = 8  # oi incidences per node, sampled or padded
    seed: int = 0

    def __post_init__(self):
        if self.M < 1 or self.P < 1:
            raise ValueError("M and P must be >= 1")


@dataclass
class HetGraph:
    """Order nodes are ``0..n_orders-1``; item nodes are indexed separately
    ``0..n_items-1`` and map to instance items through ``item_ids``.

    Edge arrays are sorted by (src, dst). The optional neighbor tables hold
    edge ids per node, ``-1`` marking a placeholder slot.
    """

    n_orders: int
    item_ids: np.ndarray
    order_items: list
    oo_edges: np.ndarray
    oo_raw: np.ndarray
    oo_dist: np.ndarray
    oo_routes: list
    ii_edges: np.ndarray
    ii_raw: np.ndarray
    ii_dist: np.ndarray
    oi_edges: np.ndarray
    oo_table: np.ndarray | None = None
    ii_table: np.ndarray | None = None
    oi_order_table: np.ndarray | None = None
    oi_item_table: np.ndarray | None = None

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @property
    def sampled(self) -> bool:
        return self.oo_table is not None

    def node_type(self, v: int) -> str:
        """Type of global node id ``v`` (orders first, then items)."""
        return ORDER if v < self.n_orders else ITEM

    def edge_count(self, rel: str | None = None) -> int:
        counts = {OO: len(self.oo_edges), OI: len(self.oi_edges), II: len(self.ii_edges)}
        return sum(counts.values()) if rel is None else counts[rel]

    def typed_edges(self):
        """All edges as (i, j, r) triples with global node ids."""
        n = self.n_orders
        out = [(int(a), int(b), OO) for a, b in self.oo_edges]
        out += [(int(o), n + int(i), OI) for o, i in self.oi_edges]
        out += [(n + int(a), n + int(b), II) for a, b in self.ii_edges]
        return out

    def neighbor_tables(self):
        """(oo, ii, oi-by-order, oi-by-item) edge-id tables; full neighborhoods
        padded with -1 when the graph has not been sampled."""
        if self.sampled:
            return self.oo_table, self.ii_table, self.oi_order_table, self.oi_item_table
        return (_incidence(self.oo_edges, self.n_orders, both=True),
                _incidence(self.ii_edges, self.n_items, both=True),
                _incidence(self.oi_edges, self.n_orders, col=0),
                _incidence(self.oi_edges, self.n_items, col=1))


def _incidence(edges, n, both=False, col=0):
    lists = [[] for _ in range(n)]
    for e, (a, b) in enumerate(edges):
        if both:
            lists[a].append(e)
            lists[b].append(e)
        else:
            lists[(a, b)[col]].append(e)
    width = max([len(x) for x in lists] + [1])
    table = np.full((n, width), -1, dtype=np.int64)
    for v, x in enumerate(lists):
        table[v, :len(x)] = x
    return table


def _pairs(n):
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    a, b = np.triu_indices(n, k=1)
    return np.stack([a, b], axis=1).astype(np.int64)


def normalize_distances(g: HetGraph) -> HetGraph:
    """Scale each relation's raw distances by that relation's maximum."""
    def scale(raw):
        top = raw.max() if raw.size else 0.0
        return raw / top if top > 0 else np.zeros_like(raw)
    return replace(g, oo_dist=scale(g.oo_raw), ii_dist=scale(g.ii_raw))


def build_graph(inst: BatchingInstance) -> HetGraph:
    """Complete graph over every relation with routed oo attributes."""
    used = sorted({int(i) for items in inst.order_items for i in items})
    item_ids = np.array(used, dtype=np.int64)
    node_of = {i: k for k, i in enumerate(used)}
    order_items = [np.array(sorted(node_of[int(i)] for i in items), dtype=np.int64)
                   for items in inst.order_items]
    dist = inst.node_distances

    oo_edges = _pairs(inst.N)
    oo_raw = np.empty(len(oo_edges))
    oo_routes = []
    cache: dict[frozenset, tuple] = {}
    for e, (a, b) in enumerate(oo_edges):
        key = frozenset(order_items[a].tolist()) | frozenset(order_items[b].tolist())
        hit = cache.get(key)
        if hit is None:
            route = solve_tsp(dist, [int(item_ids[i]) + 1 for i in key])
            hit = (tuple(node_of[s - 1] for s in route.visits), route.length)
            cache[key] = hit
        oo_routes.append(hit[0])
        oo_raw[e] = hit[1]

    ii_edges = _pairs(len(used))
    sub = dist[np.ix_(item_ids + 1, item_ids + 1)]
    ii_raw = sub[ii_edges[:, 0], ii_edges[:, 1]] if len(ii_edges) else np.zeros(0)

    oi_edges = np.array([(j, i) for j, items in enumerate(order_items) for i in items],
                        dtype=np.int64).reshape(-1, 2)
    g = HetGraph(inst.N, item_ids, order_items, oo_edges, oo_raw, oo_raw, oo_routes,
                 ii_edges, ii_raw, ii_raw, oi_edges)
    return normalize_distances(g)


def _nearest_table(edges, dist, n, M):
    """Per node, ids of the M edges with the smallest distance (ties by neighbor index)."""
    k = min(M, max(n - 1, 0))
    table = np.full((n, max(k, 1)), -1, dtype=np.int64)
    if k == 0 or len(edges) == 0:
        return table
    lookup = np.full((n, n), -1, dtype=np.int64)
    lookup[edges[:, 0], edges[:, 1]] = np.arange(len(edges))
    lookup[edges[:, 1], edges[:, 0]] = np.arange(len(edges))
    d = np.full((n, n), np.inf)
    d[edges[:, 0], edges[:, 1]] = dist
    d[edges[:, 1], edges[:, 0]] = dist
    for v in range(n):
        order = np.lexsort((np.arange(n), d[v]))
        nbrs = [u for u in order if u != v and lookup[v, u] >= 0][:k]
        table[v, :len(nbrs)] = lookup[v, nbrs]
    return table


def _sample_incidence(edges, n, col, P, rng):
    table = np.full((n, P), -1, dtype=np.int64)
    lists = [[] for _ in range(n)]
    for e, row in enumerate(edges):
        lists[row[col]].append(e)
    for v, x in enumerate(lists):
        if len(x) > P:
            x = sorted(rng.choice(x, size=P, replace=False).tolist())
        table[v, :len(x)] = x
    return table


def _keep(table, n_edges):
    """Old edge ids referenced by ``table`` and the table rewritten to new ids."""
    used = np.unique(table[table >= 0])
    remap = np.full(n_edges + 1, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return used, np.where(table >= 0, remap[table], -1)


def sample_graph(g: HetGraph, cfg: SamplingConfig) -> HetGraph:
    """Keep the M nearest oo / ii neighbors of every node and exactly P oi
    slots per node (random subset, or placeholder padding)."""
    rng = np.random.default_rng(cfg.seed)
    oo_t = _nearest_table(g.oo_edges, g.oo_dist, g.n_orders, cfg.M)
    ii_t = _nearest_table(g.ii_edges, g.ii_dist, g.n_items, cfg.M)
    oi_o = _sample_incidence(g.oi_edges, g.n_orders, 0, cfg.P, rng)
    oi_i = _sample_incidence(g.oi_edges, g.n_items, 1, cfg.P, rng)

    oo_keep, oo_t = _keep(oo_t, len(g.oo_edges))
    ii_keep, ii_t = _keep(ii_t, len(g.ii_edges))
    oi_keep, _ = _keep(np.concatenate([oi_o.ravel(), oi_i.ravel()]), len(g.oi_edges))
    remap = np.full(len(g.oi_edges) + 1, -1, dtype=np.int64)
    remap[oi_keep] = np.arange(len(oi_keep))
    oi_o = np.where(oi_o >= 0, remap[oi_o], -1)
    oi_i = np.where(oi_i >= 0, remap[oi_i], -1)
    return replace(
        g,
        oo_edges=g.oo_edges[oo_keep], oo_raw=g.oo_raw[oo_keep], oo_dist=g.oo_dist[oo_keep],
        oo_routes=[g.oo_routes[e] for e in oo_keep],
        ii_edges=g.ii_edges[ii_keep], ii_raw=g.ii_raw[ii_keep], ii_dist=g.ii_dist[ii_keep],
        oi_edges=g.oi_edges[oi_keep],
        oo_table=oo_t, ii_table=ii_t, oi_order_table=oi_o, oi_item_table=oi_i,
    )


def graph_to_dict(g: HetGraph, inst: BatchingInstance | None = None) -> dict:
    item_names = ([inst.items[i].id for i in g.item_ids] if inst is not None
                  else [int(i) for i in g.item_ids])
    d = {
        "orders": g.n_orders,
        "items": item_names,
        "oo": [{"src": int(a), "dst": int(b), "route": list(r), "dist": float(x)}
               for (a, b), r, x in zip(g.oo_edges, g.oo_routes, g.oo_dist)],
        "oi": [[int(a), int(b)] for a, b in g.oi_edges],
        "ii": [{"src": int(a), "dst": int(b), "dist": float(x)}
               for (a, b), x in zip(g.ii_edges, g.ii_dist)],
    }
    if g.sampled:
        d["tables"] = {"oo": g.oo_table.tolist(), "ii": g.ii_table.tolist(),
                       "oi_order": g.oi_order_table.tolist(),
                       "oi_item": g.oi_item_table.tolist()}
    return d


def dump_graph(g: HetGraph, path, inst: BatchingInstance | None = None) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(g, inst)) + "\n")
