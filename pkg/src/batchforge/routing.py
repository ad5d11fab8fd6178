"""Picker routing: TSP tours over item locations and batch/solution distances.

All solvers work on a square distance matrix and a list of node indices into
it. A route is a closed tour that starts and ends at the depot node.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import permutations
from pathlib import Path
from typing import Sequence

import numpy as np

from .cluster import HardAssignment
from .errors import ContractError, InstanceFormatError, TooManyLocationsError, ValidationError
from .warehouse import BatchingInstance

EXACT_CAP = 14
EXACT_SMALL = 12
_TOL = 1e-9


@dataclass(frozen=True)
class Route:
    stops: tuple[int, ...]
    length: float

    @property
    def visits(self) -> tuple[int, ...]:
        return self.stops[1:-1]


def route_length(dist: np.ndarray, stops: Sequence[int]) -> float:
    s = np.asarray(stops, dtype=np.int64)
    return float(dist[s[:-1], s[1:]].sum())


def _unique_nodes(nodes, depot):
    return sorted({int(n) for n in nodes} - {int(depot)})


def tsp_nearest_neighbor(dist: np.ndarray, nodes: Sequence[int], depot: int = 0) -> Route:
    """Greedy tour: always walk to the closest unvisited node (lowest index on ties)."""
    todo = _unique_nodes(nodes, depot)
    tour = [depot]
    cur = depot
    while todo:
        d = dist[cur, todo]
        k = int(np.argmin(d))
        cur = todo.pop(k)
        tour.append(cur)
    tour.append(depot)
    return Route(tuple(tour), route_length(dist, tour))


def tsp_two_opt(route: Route, dist: np.ndarray) -> Route:
    """First-improvement 2-opt until no segment reversal shortens the tour."""
    t = np.array(route.stops, dtype=np.int64)
    n = len(t)
    if n < 5:
        return Route(tuple(int(x) for x in t), route_length(dist, t))
    # reversing t[i..j] for 1 <= i < j <= n-2; the scan order is row-major in (i, j)
    upper = np.triu(np.ones((n - 2, n - 2), dtype=bool), k=1)
    while True:
        prev, cur, nxt = t[:n - 2], t[1:n - 1], t[2:]
        edge = dist[prev, cur]  # edge entering position i
        out = dist[cur, nxt]  # edge leaving position j
        delta = (dist[prev[:, None], cur[None, :]] + dist[cur[:, None], nxt[None, :]]
                 - edge[:, None] - out[None, :])
        hit = np.flatnonzero((delta < -_TOL) & upper)
        if not hit.size:
            break
        i, j = divmod(int(hit[0]), n - 2)
        i, j = i + 1, j + 1
        t[i:j + 1] = t[i:j + 1][::-1].copy()
    stops = tuple(int(x) for x in t)
    return Route(stops, route_length(dist, stops))


def tsp_exact(dist: np.ndarray, nodes: Sequence[int], depot: int = 0) -> Route:
    """Held-Karp dynamic program over visited subsets."""
    todo = _unique_nodes(nodes, depot)
    m = len(todo)
    if m > EXACT_CAP:
        raise TooManyLocationsError(f"{m} locations exceed the exact-solver cap of {EXACT_CAP}")
    if m == 0:
        return Route((depot, depot), 0.0)
    idx = np.array(todo)
    D = dist[np.ix_(idx, idx)]
    full = 1 << m
    dp = np.full((full, m), np.inf)
    parent = np.full((full, m), -1, dtype=np.int64)
    for k in range(m):
        dp[1 << k, k] = dist[depot, idx[k]]
    bits = 1 << np.arange(m)
    for mask in range(1, full):
        members = np.flatnonzero(mask & bits)
        if members.size < 2:
            continue
        prev = dp[mask ^ bits[members]]  # row per ending node k: costs ending at j
        cand = prev + D[:, members].T
        best = np.argmin(cand, axis=1)
        dp[mask, members] = cand[np.arange(members.size), best]
        parent[mask, members] = best
    last = dp[full - 1] + dist[idx, depot]
    k = int(np.argmin(last))
    length = float(last[k])
    order = []
    mask = full - 1
    while k >= 0:
        order.append(k)
        pk = int(parent[mask, k])
        mask ^= 1 << k
        k = pk
    stops = (depot,) + tuple(int(idx[k]) for k in reversed(order)) + (depot,)
    return Route(stops, length)


def tsp_brute_force(dist: np.ndarray, nodes: Sequence[int], depot: int = 0) -> Route:
    """Enumerate every visiting order; only for tiny node sets."""
    todo = _unique_nodes(nodes, depot)
    best = None
    for perm in permutations(todo):
        stops = (depot,) + perm + (depot,)
        length = route_length(dist, stops)
        if best is None or length < best.length - _TOL:
            best = Route(stops, length)
    return best


def solve_tsp(dist: np.ndarray, nodes: Sequence[int], depot: int = 0,
              exact_small: bool = False) -> Route:
    """Default picker-route solver: nearest neighbor + 2-opt, or exact for small sets."""
    if exact_small and len(_unique_nodes(nodes, depot)) <= EXACT_SMALL:
        return tsp_exact(dist, nodes, depot)
    return tsp_two_opt(tsp_nearest_neighbor(dist, nodes, depot), dist)


def batch_nodes(orders: Sequence[int], inst: BatchingInstance) -> list[int]:
    """Distance-matrix nodes of the deduplicated item union of a batch."""
    items: set[int] = set()
    for j in orders:
        j = int(j)
        if not 0 <= j < inst.N:
            raise KeyError(f"unknown order index {j}")
        items.update(int(i) for i in inst.order_items[j])
    return sorted(i + 1 for i in items)


def batch_route(orders: Sequence[int], inst: BatchingInstance, exact_small: bool = False) -> Route:
    if len(orders) == 0:
        raise ContractError("batch must contain at least one order")
    return solve_tsp(inst.node_distances, batch_nodes(orders, inst), 0, exact_small)


def batch_distance(orders: Sequence[int], inst: BatchingInstance, exact_small: bool = False) -> float:
    """Picking distance (meters) of one batch given as order indices."""
    return batch_route(orders, inst, exact_small).length


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("BATCHFORGE_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class Solution:
    assignment: HardAssignment
    batch_distances: np.ndarray
    total: float

    @property
    def avg_batch(self) -> float:
        return float(np.mean(self.batch_distances))

    def to_dict(self, inst: BatchingInstance) -> dict:
        return {
            "assignment": {o.id: int(b) for o, b in zip(inst.orders, self.assignment.labels)},
            "batch_distances": [float(d) for d in self.batch_distances],
            "total": float(self.total),
        }


def solution_distance(assignment: HardAssignment, inst: BatchingInstance,
                      exact_small: bool = False) -> Solution:
    """Route every batch and sum the per-batch distances."""
    from .heuristics import validate_solution

    violations = validate_solution(inst, assignment)
    if violations:
        raise ValidationError(violations)
    batches = assignment.batches()
    n = _threads()
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as ex:
            dists = list(ex.map(lambda b: batch_distance(b, inst, exact_small), batches))
    else:
        dists = [batch_distance(b, inst, exact_small) for b in batches]
    d = np.array(dists, dtype=float)
    total = 0.0
    for v in d:  # batch-index order keeps the sum reproducible
        total += float(v)
    return Solution(assignment, d, total)


def save_solution(sol: Solution, inst: BatchingInstance, path) -> None:
    Path(path).write_text(json.dumps(sol.to_dict(inst), indent=1) + "\n")


def load_assignment(path, inst: BatchingInstance) -> HardAssignment:
    """Read the ``assignment`` map of a solution file into a HardAssignment."""
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise InstanceFormatError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    try:
        mapping = d["assignment"]
    except (KeyError, TypeError) as e:
        raise InstanceFormatError(f"{path}: no assignment map") from e
    labels = np.full(inst.N, -1, dtype=np.int64)
    for oid, b in mapping.items():
        if oid not in inst.order_index:
            raise KeyError(f"unknown order id {oid}")
        labels[inst.order_index[oid]] = int(b)
    return HardAssignment(labels, inst.K, inst.c)
