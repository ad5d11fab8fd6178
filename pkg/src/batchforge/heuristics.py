"""Non-learned batching: the feasibility validator, a seed/accompanying
construction heuristic used to label training graphs, and random batching."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .cluster import HardAssignment
from .routing import Solution, batch_nodes, solution_distance, solve_tsp, tsp_nearest_neighbor
from .warehouse import BatchingInstance

ORDER_UNASSIGNED = "order-unassigned"
ORDER_MULTIPLY_ASSIGNED = "order-multiply-assigned"
WRONG_BATCH_COUNT = "wrong-batch-count"
WRONG_BATCH_SIZE = "wrong-batch-size"


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: tuple

    def __str__(self):
        return f"{self.kind}: {', '.join(map(str, self.detail))}"


def _as_batches(inst: BatchingInstance, assignment) -> list[list[int]]:
    if isinstance(assignment, HardAssignment):
        if assignment.N != inst.N:
            raise KeyError(f"assignment covers {assignment.N} orders, instance has {inst.N}")
        groups: dict[int, list[int]] = {}
        for j, k in enumerate(assignment.labels):
            if k >= 0:
                groups.setdefault(int(k), []).append(j)
        return [groups[k] for k in sorted(groups)]
    batches = []
    for b in assignment:
        batch = []
        for o in b:
            if isinstance(o, str):
                batch.append(inst.order_index[o])  # KeyError on unknown ids
            else:
                o = int(o)
                if not 0 <= o < inst.N:
                    raise KeyError(f"unknown order index {o}")
                batch.append(o)
        batches.append(batch)
    return batches


def validate_solution(inst: BatchingInstance, assignment) -> list[Violation]:
    """Check each order sits in exactly one batch and there are K batches of c orders.

    ``assignment`` is a :class:`HardAssignment` or a sequence of batches of
    order indices / ids. An empty list means the assignment is feasible.
    """
    batches = _as_batches(inst, assignment)
    seen = Counter(j for b in batches for j in b)
    out = []
    missing = tuple(inst.orders[j].id for j in range(inst.N) if seen[j] == 0)
    if missing:
        out.append(Violation(ORDER_UNASSIGNED, missing))
    multi = tuple(inst.orders[j].id for j in sorted(seen) if seen[j] > 1)
    if multi:
        out.append(Violation(ORDER_MULTIPLY_ASSIGNED, multi))
    if len(batches) != inst.K:
        out.append(Violation(WRONG_BATCH_COUNT, (len(batches), inst.K)))
    wrong = tuple(k for k, b in enumerate(batches) if len(b) != inst.c)
    if wrong:
        out.append(Violation(WRONG_BATCH_SIZE, wrong))
    return out


def random_balanced_assignment(inst: BatchingInstance, seed: int) -> HardAssignment:
    """Uniformly random feasible partition."""
    rng = np.random.default_rng(seed)
    labels = np.empty(inst.N, dtype=np.int64)
    labels[rng.permutation(inst.N)] = np.arange(inst.N) // inst.c
    return HardAssignment(labels, inst.K, inst.c)


def exchange_improve(inst: BatchingInstance, assignment: HardAssignment,
                     max_passes: int = 10) -> HardAssignment:
    """Swap pairs of orders between batches while a swap shortens the two routes.

    Pairs are scanned in index order and every improving swap is kept
    immediately; the scan repeats until a full pass changes nothing.
    """
    labels = assignment.labels.copy()
    dist = inst.node_distances

    def length(k):
        return solve_tsp(dist, batch_nodes(np.flatnonzero(labels == k), inst)).length

    d = np.array([length(k) for k in range(inst.K)])
    for _ in range(max_passes):
        improved = False
        for a in range(inst.N):
            for b in range(a + 1, inst.N):
                ka, kb = labels[a], labels[b]
                if ka == kb:
                    continue
                labels[a], labels[b] = kb, ka
                na, nb = length(ka), length(kb)
                if na + nb < d[ka] + d[kb] - 1e-9:
                    d[ka], d[kb] = na, nb
                    improved = True
                else:
                    labels[a], labels[b] = ka, kb
        if not improved:
            break
    return HardAssignment(labels, inst.K, inst.c)


def seed_savings_batching(inst: BatchingInstance, shortlist: int = 20,
                          improve_passes: int = 10) -> Solution:
    """Seed/accompanying construction heuristic.

    Seed rule: open a batch with the unbatched order whose farthest item is
    farthest from the depot. Accompanying rule: add the unbatched order that
    lengthens the nearest-neighbor tour of the batch's item union least,
    until the batch holds c orders. Only the ``shortlist`` candidates with the
    smallest attachment cost (sum over new items of the distance to the
    nearest node already in the batch) are routed. The constructed batches
    are then polished by :func:`exchange_improve`.
    """
    dist = inst.node_distances
    nodes_of = [set((inst.order_items[j] + 1).tolist()) for j in range(inst.N)]
    reach = np.array([dist[0, sorted(n)].max() for n in nodes_of])
    free = np.ones(inst.N, dtype=bool)
    labels = np.full(inst.N, -1, dtype=np.int64)
    for k in range(inst.K):
        cand = np.flatnonzero(free)
        seed = int(cand[np.argmax(reach[cand])])
        free[seed] = False
        labels[seed] = k
        members = set(nodes_of[seed])
        for _ in range(inst.c - 1):
            cand = np.flatnonzero(free)
            held = np.array(sorted(members | {0}))
            attach = np.array([
                dist[np.ix_(sorted(nodes_of[j] - members), held)].min(axis=1).sum()
                if nodes_of[j] - members else 0.0
                for j in cand])
            short = cand[np.argsort(attach, kind="stable")[:shortlist]]
            short.sort()
            base = tsp_nearest_neighbor(dist, members).length
            best, best_inc = -1, np.inf
            for j in short:
                inc = tsp_nearest_neighbor(dist, members | nodes_of[j]).length - base
                if inc < best_inc - 1e-9:
                    best, best_inc = int(j), inc
            free[best] = False
            labels[best] = k
            members |= nodes_of[best]
    result = HardAssignment(labels, inst.K, inst.c)
    if improve_passes > 0 and inst.K > 1:
        result = exchange_improve(inst, result, improve_passes)
    return solution_distance(result, inst)
