from dataclasses import replace
from math import comb

import numpy as np
import pytest

from batchforge.obgraph import (II, OI, OO, ORDER, ITEM, SamplingConfig, _pairs, build_graph,
                                dump_graph, normalize_distances, sample_graph)
from batchforge.routing import solve_tsp
from batchforge.warehouse import BatchingInstance, Warehouse

from conftest import make_instance


@pytest.fixture(scope="module")
def full(small_instance):
    return build_graph(small_instance)


def test_edge_counts(small_instance, full):
    I = full.n_items
    assert full.edge_count(OO) == comb(small_instance.N, 2)
    assert full.edge_count(II) == comb(I, 2)
    assert full.edge_count(OI) == sum(len(o.items) for o in small_instance.orders)


def test_full_scale_pair_count():
    assert len(_pairs(500)) + len(_pairs(1000)) == 624250


def test_two_orders_one_oo_edge():
    inst = make_instance([[(0, 0, 1)], [(0, 2, 5)]], K=1, c=2)
    g = build_graph(inst)
    assert g.edge_count(OO) == 1
    # single ii edge normalizes to exactly one
    assert g.ii_dist.tolist() == [1.0]


def test_endpoint_types_match_relation(full):
    expected = {OO: (ORDER, ORDER), OI: (ORDER, ITEM), II: (ITEM, ITEM)}
    for i, j, r in full.typed_edges():
        assert (full.node_type(i), full.node_type(j)) == expected[r]


def test_normalized_in_unit_interval(full):
    for d in (full.oo_dist, full.ii_dist):
        assert d.min() >= 0 and d.max() == 1.0
    assert full.oo_raw[np.argmax(full.oo_dist)] == full.oo_raw.max()


def test_oi_edges_enumerate_order_items(small_instance, full):
    for j, items in enumerate(small_instance.order_items):
        got = {int(full.item_ids[i]) for o, i in full.oi_edges if o == j}
        assert got == {int(i) for i in items}


def test_oo_attribute_is_routed_union(small_instance, full):
    dist = small_instance.node_distances
    for e in range(0, len(full.oo_edges), 7):
        a, b = full.oo_edges[e]
        union = set(full.order_items[a].tolist()) | set(full.order_items[b].tolist())
        assert set(full.oo_routes[e]) == union
        ref = solve_tsp(dist, [int(full.item_ids[i]) + 1 for i in sorted(union)]).length
        assert full.oo_raw[e] == pytest.approx(ref)
    assert np.all(full.oo_edges[:, 0] < full.oo_edges[:, 1])


def test_all_zero_distances_normalize_to_zero(full):
    g = normalize_distances(replace(full, ii_raw=np.zeros_like(full.ii_raw)))
    assert np.all(g.ii_dist == 0)


def test_scale_invariance():
    order_slots = [[(0, 0, 1), (1, 3, 4)], [(0, 2, 5)], [(1, 1, 0), (0, 3, 9)], [(1, 2, 2)]]
    w1 = Warehouse(blocks=2, aisles=4, slots=10)
    w2 = Warehouse(blocks=2, aisles=4, slots=10, aisle_pitch=6.0, slot_pitch=2.0, cross_aisle_width=4.0)
    g1 = build_graph(make_instance(order_slots, 2, 2, w1))
    g2 = build_graph(make_instance(order_slots, 2, 2, w2))
    assert np.allclose(g1.oo_dist, g2.oo_dist)
    assert np.allclose(g1.ii_dist, g2.ii_dist)
    assert np.allclose(2 * g1.oo_raw, g2.oo_raw)


def test_permutation_equivariance(small_instance, full):
    perm = np.random.default_rng(0).permutation(small_instance.N)
    inst2 = BatchingInstance(small_instance.warehouse, [small_instance.orders[p] for p in perm],
                             small_instance.items, small_instance.K, small_instance.c)
    g2 = build_graph(inst2)
    d1 = {(int(a), int(b)): x for (a, b), x in zip(full.oo_edges, full.oo_raw)}
    for (a, b), x in zip(g2.oo_edges, g2.oo_raw):
        pa, pb = sorted((int(perm[a]), int(perm[b])))
        assert x == pytest.approx(d1[(pa, pb)])


def test_sampling_large_M_keeps_oo(full):
    s = sample_graph(full, SamplingConfig(M=full.n_orders, P=8))
    assert s.edge_count(OO) == full.edge_count(OO)
    assert np.all(s.oo_table >= 0)


def test_sampling_keeps_nearest(full):
    s = sample_graph(full, SamplingConfig(M=3, P=2, seed=1))
    d = {(int(a), int(b)): x for (a, b), x in zip(full.oo_edges, full.oo_dist)}
    for v in range(full.n_orders):
        kept = {int(u) for e in s.oo_table[v] if e >= 0 for u in s.oo_edges[e] if u != v}
        dropped = set(range(full.n_orders)) - kept - {v}
        near = max(d[tuple(sorted((v, u)))] for u in kept)
        assert all(d[tuple(sorted((v, u)))] >= near for u in dropped)
    # subgraph: every kept edge exists in the full graph with the same attributes
    full_oo = {tuple(e): r for e, r in zip(full.oo_edges.tolist(), full.oo_routes)}
    for e, r in zip(s.oo_edges.tolist(), s.oo_routes):
        assert full_oo[tuple(e)] == r


def test_sampling_pads_placeholders():
    inst = make_instance([[(0, 0, 1), (0, 1, 1)], [(0, 2, 5)]], K=1, c=2)
    s = sample_graph(build_graph(inst), SamplingConfig(M=2, P=4))
    assert s.oi_order_table.shape == (2, 4)
    assert (s.oi_order_table[0] >= 0).sum() == 2
    assert np.all(s.oi_order_table[0, 2:] == -1)


def test_sampling_subsamples_to_P(full):
    s = sample_graph(full, SamplingConfig(M=2, P=1, seed=3))
    assert np.all((s.oi_order_table >= 0).sum(axis=1) == 1)


def test_sampling_deterministic(full, tmp_path):
    cfg = SamplingConfig(M=3, P=2, seed=5)
    dump_graph(sample_graph(full, cfg), tmp_path / "a.json")
    dump_graph(sample_graph(full, cfg), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_sampling_config_contract():
    with pytest.raises(ValueError):
        SamplingConfig(M=0)
    with pytest.raises(ValueError):
        SamplingConfig(P=0)
