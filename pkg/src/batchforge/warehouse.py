"""Warehouse geometry, picker travel distances and synthetic batching instances.

The layout is a rectangular multi-block grid. Blocks are stacked front to
rear; each block holds ``aisles`` parallel picking aisles of ``slots`` storage
slots. Cross-aisles run across the whole warehouse in front of block 0,
between consecutive blocks and behind the last block. A picker walks inside
aisles and cross-aisles only, so the travel distance between two locations is
the length of the shortest rectilinear path through that network.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import (
    InfeasibleShapeError,
    InstanceFormatError,
    InvalidLocationError,
    SchemaVersionError,
)

SCHEMA_VERSION = 1


class Slot(NamedTuple):
    """A storage slot inside an aisle."""

    block: int
    aisle: int
    slot: int


class CrossPoint(NamedTuple):
    """A point on cross-aisle ``level`` (0 = front), aligned with ``aisle``."""

    level: int
    aisle: int


@dataclass(frozen=True)
class Warehouse:
    blocks: int = 2
    aisles: int = 10
    slots: int = 20
    aisle_pitch: float = 3.0
    slot_pitch: float = 1.0
    cross_aisle_width: float = 2.0
    depot: CrossPoint = CrossPoint(0, 0)

    def __post_init__(self):
        if min(self.blocks, self.aisles, self.slots) < 1:
            raise InfeasibleShapeError("warehouse dimensions must be >= 1")
        if min(self.aisle_pitch, self.slot_pitch, self.cross_aisle_width) <= 0:
            raise InfeasibleShapeError("pitches and cross-aisle width must be > 0")
        object.__setattr__(self, "depot", CrossPoint(*self.depot))
        self.check(self.depot)

    @property
    def block_length(self) -> float:
        return self.slots * self.slot_pitch

    @property
    def n_slots(self) -> int:
        return self.blocks * self.aisles * self.slots

    @property
    def width(self) -> float:
        return (self.aisles - 1) * self.aisle_pitch

    @property
    def depth(self) -> float:
        return self.cross_y(self.blocks) + self.cross_aisle_width / 2

    def cross_y(self, level: int) -> float:
        return level * (self.block_length + self.cross_aisle_width) + self.cross_aisle_width / 2

    def aisle_x(self, aisle: int) -> float:
        return aisle * self.aisle_pitch

    def check(self, loc) -> None:
        if isinstance(loc, Slot) or (isinstance(loc, tuple) and len(loc) == 3):
            b, a, s = loc
            ok = 0 <= b < self.blocks and 0 <= a < self.aisles and 0 <= s < self.slots
        elif isinstance(loc, tuple) and len(loc) == 2:
            k, a = loc
            ok = 0 <= k <= self.blocks and 0 <= a < self.aisles
        else:
            ok = False
        if not ok:
            raise InvalidLocationError(f"location {loc!r} is outside the warehouse")

    def coord(self, loc) -> tuple[float, float]:
        """Planar coordinate in meters of a slot or cross-aisle point."""
        self.check(loc)
        if len(loc) == 3:
            b, a, s = loc
            y = (self.cross_aisle_width + b * (self.block_length + self.cross_aisle_width)
                 + (s + 0.5) * self.slot_pitch)
            return (self.aisle_x(a), y)
        k, a = loc
        return (self.aisle_x(a), self.cross_y(k))

    def all_slots(self) -> list[Slot]:
        return [Slot(b, a, s) for b in range(self.blocks)
                for a in range(self.aisles) for s in range(self.slots)]

    def _arrays(self, locs):
        """x, y, segment id and the two cross-aisle levels bounding each location."""
        n = len(locs)
        x = np.empty(n)
        y = np.empty(n)
        seg = np.empty(n, dtype=np.int64)
        lo = np.empty(n)
        hi = np.empty(n)
        for i, loc in enumerate(locs):
            x[i], y[i] = self.coord(loc)
            if len(loc) == 3:
                seg[i] = loc[0] * self.aisles + loc[1]
                lo[i] = self.cross_y(loc[0])
                hi[i] = self.cross_y(loc[0] + 1)
            else:
                seg[i] = -1 - i  # cross-aisle points share no aisle segment
                lo[i] = hi[i] = y[i]
        return x, y, seg, lo, hi

    def distance_matrix(self, locs: Sequence, others: Sequence | None = None) -> np.ndarray:
        """Pairwise travel distances between ``locs`` and ``others`` (default ``locs``)."""
        xa, ya, sa, loa, hia = self._arrays(locs)
        if others is None:
            xb, yb, sb, lob, hib = xa, ya, sa, loa, hia
        else:
            xb, yb, sb, lob, hib = self._arrays(others)
            sb = np.where(sb < 0, sb - len(locs), sb)
        ya, yb = ya[:, None], yb[None, :]
        best = np.full((len(xa), len(xb)), np.inf)
        for ca in (loa[:, None], hia[:, None]):
            for cb in (lob[None, :], hib[None, :]):
                best = np.minimum(best, np.abs(ya - ca) + np.abs(ca - cb) + np.abs(cb - yb))
        d = best + np.abs(xa[:, None] - xb[None, :])
        same = sa[:, None] == sb[None, :]
        d = np.where(same, np.abs(ya - yb), d)
        if others is None:
            np.fill_diagonal(d, 0.0)
        return d

    def path(self, a, b) -> list[tuple[float, float]]:
        """Waypoints of one shortest walk from ``a`` to ``b`` (for drawing)."""
        xa, ya, sa, loa, hia = self._arrays([a, b])
        (x1, x2), (y1, y2) = xa, ya
        if sa[0] == sa[1]:
            return [(x1, y1), (x2, y2)]
        best = None
        for c1 in {loa[0], hia[0]}:
            for c2 in {loa[1], hia[1]}:
                cost = abs(y1 - c1) + abs(c1 - c2) + abs(c2 - y2)
                if best is None or cost < best[0]:
                    best = (cost, c1, c2)
        _, c1, c2 = best
        return [(x1, y1), (x1, c1), (x1, c2), (x2, c2), (x2, y2)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depot"] = list(self.depot)
        return d


def travel_distance(a, b, w: Warehouse) -> float:
    """Shortest aisle-respecting walking distance between two locations."""
    w.check(a)
    w.check(b)
    if tuple(a) == tuple(b):
        return 0.0
    return float(w.distance_matrix([a], [b])[0, 0])


@dataclass(frozen=True)
class Item:
    id: str
    slot: Slot
    coord: tuple[float, float]


@dataclass(frozen=True)
class Order:
    id: str
    items: tuple[str, ...]


@dataclass
class BatchingInstance:
    warehouse: Warehouse
    orders: list[Order]
    items: list[Item]
    K: int
    c: int
    seed: int | None = None

    def __post_init__(self):
        if self.K < 1 or self.c < 1 or len(self.orders) != self.K * self.c:
            raise InfeasibleShapeError(
                f"N={len(self.orders)} orders cannot form K={self.K} batches of c={self.c}")
        index = self.item_index
        if len(index) != len(self.items):
            raise InstanceFormatError("duplicate item ids")
        if len({o.id for o in self.orders}) != len(self.orders):
            raise InstanceFormatError("duplicate order ids")
        for item in self.items:
            self.warehouse.check(item.slot)
        for o in self.orders:
            if not o.items:
                raise InstanceFormatError(f"order {o.id} has no items")
            if len(set(o.items)) != len(o.items):
                raise InstanceFormatError(f"order {o.id} lists an item twice")
            for i in o.items:
                if i not in index:
                    raise InstanceFormatError(f"order {o.id} references unknown item {i}")

    @property
    def N(self) -> int:
        return len(self.orders)

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {it.id: k for k, it in enumerate(self.items)}

    @cached_property
    def order_index(self) -> dict[str, int]:
        return {o.id: k for k, o in enumerate(self.orders)}

    @cached_property
    def order_items(self) -> list[np.ndarray]:
        """Item positions (into ``items``) of every order."""
        idx = self.item_index
        return [np.array([idx[i] for i in o.items], dtype=np.int64) for o in self.orders]

    @cached_property
    def node_distances(self) -> np.ndarray:
        """Distance matrix over ``[depot] + items``; item ``i`` is node ``i + 1``."""
        locs = [self.warehouse.depot] + [it.slot for it in self.items]
        return self.warehouse.distance_matrix(locs)

    def __eq__(self, other):
        if not isinstance(other, BatchingInstance):
            return NotImplemented
        return (self.warehouse == other.warehouse and self.orders == other.orders
                and self.items == other.items and self.K == other.K
                and self.c == other.c and self.seed == other.seed)


@dataclass
class InstanceParams:
    n_orders: int = 50
    K: int = 5
    c: int = 10
    min_items: int = 1
    max_items: int = 5
    n_items: int | None = None  # item pool size, default 2 * n_orders capped at the slot count
    zone_affinity: float = 0.8
    zone_size: int | None = None  # items near an order's anchor, default pool // 10
    warehouse: Warehouse = field(default_factory=Warehouse)


def generate_instance(params: InstanceParams, seed: int) -> BatchingInstance:
    """Draw a random instance whose orders cluster around storage zones.

    Each order picks an anchor item; every item of the order is taken from
    the anchor's ``zone_size`` nearest pool items with probability
    ``zone_affinity`` and uniformly from the pool otherwise.
    """
    p = params
    if p.n_orders != p.K * p.c:
        raise InfeasibleShapeError(f"N={p.n_orders} != K*c={p.K * p.c}")
    if not 1 <= p.min_items <= p.max_items:
        raise InfeasibleShapeError("need 1 <= min_items <= max_items")
    w = p.warehouse
    n_items = p.n_items if p.n_items is not None else min(2 * p.n_orders, w.n_slots)
    if n_items < p.max_items:
        raise InfeasibleShapeError("item pool smaller than the largest order")
    if n_items > w.n_slots:
        raise InfeasibleShapeError("item pool larger than the number of slots")
    rng = np.random.default_rng(seed)
    slots = w.all_slots()
    chosen = np.sort(rng.choice(len(slots), size=n_items, replace=False))
    items = []
    for k, s in enumerate(chosen):
        slot = slots[s]
        items.append(Item(f"I{k}", slot, w.coord(slot)))
    dist = w.distance_matrix([it.slot for it in items])
    zone = p.zone_size if p.zone_size is not None else max(p.max_items, n_items // 10)
    near = np.argsort(dist, axis=1, kind="stable")[:, :zone]

    orders = []
    for j in range(p.n_orders):
        size = int(rng.integers(p.min_items, p.max_items + 1))
        anchor = int(rng.integers(n_items))
        picked: list[int] = []
        while len(picked) < size:
            if rng.random() < p.zone_affinity:
                cand = [i for i in near[anchor] if i not in picked]
                if cand:
                    picked.append(int(cand[rng.integers(len(cand))]))
                    continue
            i = int(rng.integers(n_items))
            if i not in picked:
                picked.append(i)
        orders.append(Order(f"O{j}", tuple(f"I{i}" for i in sorted(picked))))
    return BatchingInstance(w, orders, items, p.K, p.c, seed)


def instance_to_dict(inst: BatchingInstance) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "warehouse": inst.warehouse.to_dict(),
        "items": [{"id": it.id, "slot": list(it.slot), "coord": list(it.coord)}
                  for it in inst.items],
        "orders": [{"id": o.id, "items": list(o.items)} for o in inst.orders],
        "K": inst.K,
        "c": inst.c,
        "seed": inst.seed,
    }


def instance_from_dict(d: dict) -> BatchingInstance:
    if not isinstance(d, dict) or "schema_version" not in d:
        raise InstanceFormatError("missing schema_version")
    if d["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported schema version {d['schema_version']!r} (expected {SCHEMA_VERSION})")
    try:
        wd = dict(d["warehouse"])
        wd["depot"] = CrossPoint(*wd["depot"])
        w = Warehouse(**wd)
        items = []
        for it in d["items"]:
            slot = Slot(*it["slot"])
            items.append(Item(str(it["id"]), slot, w.coord(slot)))
        orders = [Order(str(o["id"]), tuple(str(i) for i in o["items"])) for o in d["orders"]]
        return BatchingInstance(w, orders, items, int(d["K"]), int(d["c"]), d.get("seed"))
    except (KeyError, TypeError) as e:
        raise InstanceFormatError(f"malformed instance: {e!r}") from e


def save_instance(inst: BatchingInstance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=1) + "\n")


def load_instance(path) -> BatchingInstance:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise InstanceFormatError(
            f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    return instance_from_dict(d)
