from itertools import permutations, product

import numpy as np
import pytest

from batchforge import autodiff as ad
from batchforge.cluster import (HardAssignment, align_labels, balanced_kmeans_baseline,
                                farthest_point_init, global_size_loss, greedy_assign,
                                min_cost_matching, soft_kmeans)
from batchforge.errors import ContractError


def test_soft_kmeans_rows_sum_to_one():
    z = np.random.default_rng(0).normal(size=(20, 4))
    y = soft_kmeans(z, 4, iters=5, tau=0.5).y.data
    assert y.shape == (20, 4)
    assert np.allclose(y.sum(axis=1), 1.0)


def test_soft_kmeans_n_equals_k_gives_permutation():
    z = np.random.default_rng(1).normal(size=(5, 3)) * 3
    y = soft_kmeans(z, 5, iters=20, tau=0.01, seed=4).y.data
    assert np.all(y.max(axis=1) > 0.99)
    assert sorted(y.argmax(axis=1)) == list(range(5))


def test_soft_kmeans_separated_pairs():
    z = np.array([[0.0, 0.0], [0.1, 0.0], [5.0, 5.0], [5.0, 5.1]])
    y = soft_kmeans(z, 2, iters=10, tau=0.1).y.data
    lab = y.argmax(axis=1)
    assert lab[0] == lab[1] != lab[2] == lab[3]


def test_soft_kmeans_identical_points_uniform():
    y = soft_kmeans(np.ones((6, 3)), 3, iters=4).y.data
    assert np.allclose(y, 1 / 3)


def test_soft_kmeans_restarts_pick_lowest_objective():
    rng = np.random.default_rng(2)
    centers = np.array([[0, 0], [6, 0], [0, 6], [6, 6]], dtype=float)
    z = np.concatenate([c + rng.normal(scale=0.3, size=(5, 2)) for c in centers])
    y = soft_kmeans(z, 4, iters=10, tau=0.1, seed=0, restarts=8).y.data
    lab = y.argmax(axis=1)
    for g in range(4):
        assert len(set(lab[5 * g:5 * g + 5])) == 1
    assert len(set(lab)) == 4


def test_soft_kmeans_contract():
    with pytest.raises(ContractError):
        soft_kmeans(np.zeros((3, 2)), 4)
    with pytest.raises(ContractError):
        soft_kmeans(np.zeros((3, 2)), 2, iters=0)


def test_soft_kmeans_gradient():
    z0 = np.random.default_rng(3).normal(size=(6, 3))
    w = np.random.default_rng(4).normal(size=(6, 2))

    def f(z):
        return ad.sum_(soft_kmeans(z, 2, iters=10, tau=0.5, seed=1).y * w)

    assert ad.grad_check(f, [z0]) < 1e-3


def test_farthest_point_init_deterministic():
    x = np.random.default_rng(5).normal(size=(30, 2))
    assert np.array_equal(farthest_point_init(x, 4, 7), farthest_point_init(x, 4, 7))
    assert len(set(farthest_point_init(x, 4, 7))) == 4


def test_global_size_loss_values():
    assert global_size_loss(np.full((6, 3), 1 / 3)).item() == pytest.approx(0.0, abs=1e-30)
    y = np.zeros((4, 2))
    y[:, 0] = 1
    assert global_size_loss(y).item() == pytest.approx(0.5)
    balanced = HardAssignment(np.array([0, 1, 2, 2, 1, 0]), 3, 2).one_hot()
    assert global_size_loss(balanced).item() == 0.0


def test_greedy_keeps_balanced_one_hot():
    lab = np.array([2, 0, 1, 1, 0, 2])
    y = HardAssignment(lab, 3, 2).one_hot()
    assert np.array_equal(greedy_assign(y, 2).labels, lab)


def brute_greedy_reference(y, c):
    """Feasible partition maximizing sum y, ties by lexicographic label vector."""
    N, K = y.shape
    best, best_val = None, -np.inf
    for labels in product(range(K), repeat=N):
        if all(labels.count(k) == c for k in range(K)):
            v = sum(y[j, k] for j, k in enumerate(labels))
            if v > best_val + 1e-12:
                best, best_val = labels, v
    return np.array(best)


def test_greedy_displaces_lowest_ranked():
    y = np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3], [0.4, 0.6]])
    out = greedy_assign(y, 2).labels
    assert np.array_equal(out, [0, 0, 1, 1])
    assert np.array_equal(out, brute_greedy_reference(y, 2))


def test_greedy_ties_by_order_then_cluster():
    y = np.full((4, 2), 0.5)
    assert np.array_equal(greedy_assign(y, 2).labels, [0, 0, 1, 1])


def test_greedy_always_balanced():
    rng = np.random.default_rng(6)
    for _ in range(50):
        K, c = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        y = rng.dirichlet(np.ones(K), size=K * c)
        lab = greedy_assign(y, c).labels
        assert np.all(np.bincount(lab, minlength=K) == c)


def test_min_cost_matching_identity_and_invariance():
    cost = np.ones((5, 5)) - np.eye(5)
    assert np.array_equal(min_cost_matching(cost), np.arange(5))
    rng = np.random.default_rng(7)
    c = rng.random((5, 5))
    p = min_cost_matching(c)
    c2 = c.copy()
    c2[2] += 10
    assert np.array_equal(min_cost_matching(c2), p)


def test_min_cost_matching_brute_force_6x6():
    rng = np.random.default_rng(8)
    for _ in range(20):
        c = rng.random((6, 6))
        p = min_cost_matching(c)
        best = min(sum(c[i, q[i]] for i in range(6)) for q in permutations(range(6)))
        assert c[np.arange(6), p].sum() == pytest.approx(best)


def test_min_cost_matching_contract():
    with pytest.raises(ContractError):
        min_cost_matching(np.zeros((2, 3)))
    with pytest.raises(ContractError):
        min_cost_matching(np.array([[0.0, np.nan], [1.0, 0.0]]))


def test_align_labels_cases():
    lab = np.array([0, 0, 1, 1, 2, 2])
    y = HardAssignment(lab, 3, 2).one_hot()
    assert np.array_equal(align_labels(y, y), y)
    swapped = y[:, [1, 0, 2]]
    assert np.array_equal(align_labels(swapped, y), y)
    rng = np.random.default_rng(9)
    for _ in range(10):
        perm = rng.permutation(3)
        aligned = align_labels(y[:, perm], y)
        assert (aligned * y).sum() == 6


def test_bkm_square_corners():
    pts = np.array([[0, 0], [0, 1], [4, 0], [4, 1]], dtype=float)
    y = balanced_kmeans_baseline(pts, 2, 2, seed=0)
    assert y.canonical() == ((0, 1), (2, 3))


def test_bkm_single_cluster_and_balance():
    x = np.random.default_rng(10).normal(size=(12, 3))
    assert np.all(balanced_kmeans_baseline(x, 1, 12).labels == 0)
    hist = []
    y = balanced_kmeans_baseline(x, 3, 4, seed=1, history=hist)
    assert np.all(np.bincount(y.labels) == 4)
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_bkm_matching_step_is_optimal():
    rng = np.random.default_rng(11)
    K, c = 2, 4
    x = rng.normal(size=(K * c, 2))
    centers = rng.normal(size=(K, 2))
    d2 = ((x[:, None] - centers[None]) ** 2).sum(-1)
    slot = np.repeat(np.arange(K), c)
    p = min_cost_matching(d2[:, slot])
    got = d2[np.arange(K * c), slot[p]].sum()
    best = min(d2[np.arange(K * c), slot[list(q)]].sum() for q in permutations(range(K * c)))
    assert got == pytest.approx(best)
