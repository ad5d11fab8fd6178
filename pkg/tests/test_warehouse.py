import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from batchforge.errors import (InfeasibleShapeError, InstanceFormatError, InvalidLocationError,
                               SchemaVersionError)
from batchforge.warehouse import (CrossPoint, InstanceParams, Slot, Warehouse, generate_instance,
                                  instance_to_dict, load_instance, save_instance, travel_distance)

from conftest import grid_bfs_distance


def test_identity_distance_is_zero():
    w = Warehouse()
    assert travel_distance(Slot(1, 4, 7), Slot(1, 4, 7), w) == 0.0


def test_same_aisle_slots_3_and_7():
    w = Warehouse(slot_pitch=1.0)
    assert travel_distance(Slot(0, 2, 3), Slot(0, 2, 7), w) == pytest.approx(4.0)


def test_adjacent_aisles_match_grid_bfs():
    w = Warehouse(blocks=2, aisles=4, slots=6)
    rng = np.random.default_rng(1)
    for _ in range(25):
        b1, b2 = rng.integers(2, size=2)
        a1 = int(rng.integers(3))
        s1, s2 = rng.integers(6, size=2)
        a, b = Slot(int(b1), a1, int(s1)), Slot(int(b2), a1 + 1, int(s2))
        assert travel_distance(a, b, w) == pytest.approx(grid_bfs_distance(w, a, b))


@settings(max_examples=60, deadline=None)
@given(st.tuples(st.integers(0, 2), st.integers(0, 3), st.integers(0, 4)),
       st.tuples(st.integers(0, 2), st.integers(0, 3), st.integers(0, 4)))
def test_any_pair_matches_grid_bfs(p, q):
    w = Warehouse(blocks=3, aisles=4, slots=5)
    a, b = Slot(*p), Slot(*q)
    assert travel_distance(a, b, w) == pytest.approx(grid_bfs_distance(w, a, b))


def test_depot_distances_match_grid_bfs():
    w = Warehouse(blocks=2, aisles=5, slots=6, depot=CrossPoint(0, 2))
    for loc in [Slot(0, 0, 0), Slot(1, 4, 5), Slot(1, 2, 3), CrossPoint(2, 4)]:
        assert travel_distance(w.depot, loc, w) == pytest.approx(grid_bfs_distance(w, w.depot, loc))


def test_distance_matrix_symmetric_and_triangle():
    w = Warehouse(blocks=2, aisles=5, slots=8)
    locs = w.all_slots()[::7]
    d = w.distance_matrix(locs)
    assert np.allclose(d, d.T)
    assert np.all(np.diag(d) == 0)
    # metric closure: no pair can be shortened through a third location
    assert np.all(d[:, None, :] <= d[:, :, None] + d[None, :, :].transpose(0, 2, 1) + 1e-9)


def test_slot_coordinates_unique():
    w = Warehouse(blocks=2, aisles=6, slots=9)
    coords = {w.coord(s) for s in w.all_slots()}
    assert len(coords) == w.n_slots


def test_invalid_location_and_shape():
    w = Warehouse(blocks=1, aisles=2, slots=3)
    with pytest.raises(InvalidLocationError):
        w.coord(Slot(0, 2, 0))
    with pytest.raises(InvalidLocationError):
        travel_distance(Slot(0, 0, 3), Slot(0, 0, 0), w)
    with pytest.raises(InfeasibleShapeError):
        Warehouse(aisles=0)
    with pytest.raises(InfeasibleShapeError):
        Warehouse(slot_pitch=0.0)


def test_generate_full_scale():
    inst = generate_instance(InstanceParams(n_orders=500, K=20, c=25), 7)
    assert inst.N == 500 and inst.K == 20 and inst.c == 25


def test_generate_toy_one_item_orders():
    inst = generate_instance(InstanceParams(n_orders=4, K=2, c=2, min_items=1, max_items=1), 0)
    assert inst.N == 4
    assert sum(len(o.items) for o in inst.orders) == 4


def test_generate_rejects_bad_shape():
    with pytest.raises(InfeasibleShapeError):
        generate_instance(InstanceParams(n_orders=7, K=2, c=3), 0)


def test_generate_deterministic(tmp_path):
    p = InstanceParams(n_orders=20, K=4, c=5)
    a, b = generate_instance(p, 5), generate_instance(p, 5)
    save_instance(a, tmp_path / "a.json")
    save_instance(b, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert generate_instance(p, 6) != a


def test_items_resolve_and_sizes_in_range():
    p = InstanceParams(n_orders=30, K=5, c=6, min_items=2, max_items=4)
    inst = generate_instance(p, 2)
    ids = {it.id for it in inst.items}
    for o in inst.orders:
        assert 2 <= len(o.items) <= 4
        assert set(o.items) <= ids


def test_round_trip(tmp_path, small_instance):
    path = tmp_path / "inst.json"
    save_instance(small_instance, path)
    assert load_instance(path) == small_instance


def test_truncated_file(tmp_path, small_instance):
    path = tmp_path / "inst.json"
    save_instance(small_instance, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(InstanceFormatError, match="line"):
        load_instance(path)


def test_unknown_schema_version(tmp_path, small_instance):
    d = instance_to_dict(small_instance)
    d["schema_version"] = 99
    path = tmp_path / "inst.json"
    path.write_text(json.dumps(d))
    with pytest.raises(SchemaVersionError):
        load_instance(path)


def test_unknown_item_reference(tmp_path, small_instance):
    d = instance_to_dict(small_instance)
    d["orders"][0]["items"] = ["nope"]
    path = tmp_path / "inst.json"
    path.write_text(json.dumps(d))
    with pytest.raises(InstanceFormatError):
        load_instance(path)
