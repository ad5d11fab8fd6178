import logging
from collections import deque

import numpy as np
import pytest

from batchforge.warehouse import (BatchingInstance, InstanceParams, Item, Order, Slot, Warehouse,
                                  generate_instance)


def make_instance(order_slots, K, c, w=None, seed=None):
    """Instance whose order j holds one distinct item per slot in ``order_slots[j]``;
    equal slots across orders become the same item."""
    w = w or Warehouse(blocks=1, aisles=4, slots=10)
    items, index, orders = [], {}, []
    for j, slots in enumerate(order_slots):
        ids = []
        for s in slots:
            s = Slot(*s)
            if s not in index:
                index[s] = f"I{len(items)}"
                items.append(Item(index[s], s, w.coord(s)))
            ids.append(index[s])
        orders.append(Order(f"O{j}", tuple(ids)))
    return BatchingInstance(w, orders, items, K, c, seed)


def grid_bfs_distance(w: Warehouse, a, b, step=0.5):
    """Shortest walk on a lattice of walkable points (aisle center lines and
    cross-aisle center lines), found by breadth-first search."""
    xs = [w.aisle_x(k) for k in range(w.aisles)]
    y_top = w.cross_y(w.blocks)
    walk = set()
    ny = int(round(y_top / step))
    nx = int(round(xs[-1] / step)) if w.aisles > 1 else 0
    for x in xs:
        gx = int(round(x / step))
        for gy in range(int(round(w.cross_y(0) / step)), ny + 1):
            walk.add((gx, gy))
    for k in range(w.blocks + 1):
        gy = int(round(w.cross_y(k) / step))
        for gx in range(nx + 1):
            walk.add((gx, gy))

    def cell(loc):
        x, y = w.coord(loc)
        return int(round(x / step)), int(round(y / step))

    src, dst = cell(a), cell(b)
    assert src in walk and dst in walk
    seen = {src: 0}
    q = deque([src])
    while q:
        u = q.popleft()
        if u == dst:
            return seen[u] * step
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            v = (u[0] + dx, u[1] + dy)
            if v in walk and v not in seen:
                seen[v] = seen[u] + 1
                q.append(v)
    raise AssertionError("unreachable")


@pytest.fixture(scope="session")
def desk_instance():
    return generate_instance(InstanceParams(), 0)


@pytest.fixture(scope="session")
def small_instance():
    return generate_instance(InstanceParams(n_orders=12, K=3, c=4, warehouse=Warehouse(blocks=2, aisles=5, slots=8)), 3)


@pytest.fixture(autouse=True)
def _quiet_logs():
    logging.getLogger("batchforge").setLevel(logging.ERROR)
    yield


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
