"""Balanced clustering: differentiable soft k-means, size penalty, greedy rounding,
label alignment and the balanced k-means baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError


@dataclass(eq=False)
class HardAssignment:
    """Cluster index per order (``-1`` marks an unassigned order)."""

    labels: np.ndarray
    K: int
    c: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)

    def __eq__(self, other):
        return (isinstance(other, HardAssignment) and self.K == other.K and self.c == other.c
                and np.array_equal(self.labels, other.labels))

    @property
    def N(self) -> int:
        return len(self.labels)

    def batches(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == k) for k in range(self.K)]

    def one_hot(self) -> np.ndarray:
        y = np.zeros((self.N, self.K))
        ok = self.labels >= 0
        y[np.flatnonzero(ok), self.labels[ok]] = 1.0
        return y

    @classmethod
    def from_batches(cls, batches, N: int, c: int) -> HardAssignment:
        labels = np.full(N, -1, dtype=np.int64)
        for k, b in enumerate(batches):
            labels[np.asarray(b, dtype=np.int64)] = k
        return cls(labels, len(batches), c)

    def canonical(self) -> tuple:
        """Partition as a sorted tuple of sorted batches (cluster ids erased)."""
        return tuple(sorted(tuple(int(j) for j in b) for b in self.batches()))


@dataclass
class SoftAssignment:
    y: Tensor  # N x K, rows sum to one
    centers: Tensor  # K x d


def one_hot_labels(assignment: HardAssignment) -> np.ndarray:
    return assignment.one_hot()


def farthest_point_init(x: np.ndarray, K: int, seed: int, first: int | None = None) -> np.ndarray:
    """Indices of K seed points: one drawn at random (or ``first``), then repeatedly the farthest."""
    if first is None:
        first = int(np.random.default_rng(seed).integers(len(x)))
    chosen = [int(first)]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        nxt = int(np.argmax(d2))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((x - x[nxt]) ** 2).sum(axis=1))
    return np.array(chosen)


def _soft_lloyd(x: np.ndarray, mu: np.ndarray, iters: int, tau: float):
    """Plain-numpy soft k-means; returns final centers and the soft objective."""
    for _ in range(iters + 1):
        d2 = ((x[:, None, :] - mu[None, :, :]) ** 2).sum(axis=2)
        logits = -d2 / tau
        y = np.exp(logits - logits.max(axis=1, keepdims=True))
        y /= y.sum(axis=1, keepdims=True)
        mu = (y.T @ x) / np.maximum(y.sum(axis=0)[:, None], 1e-12)
    return mu, float((y * d2).sum())


def seed_centers(x: np.ndarray, K: int, iters: int, tau: float, seed: int, restarts: int = 1) -> np.ndarray:
    """Farthest-point seeds; with ``restarts`` > 1 several seeded first points
    are tried and the start whose soft k-means run ends with the lowest
    objective wins. The choice is discrete and carries no gradient."""
    if restarts <= 1:
        return farthest_point_init(x, K, seed)
    rng = np.random.default_rng(seed)
    firsts = rng.choice(len(x), size=min(restarts, len(x)), replace=False)
    best, best_cost = None, np.inf
    for f in firsts:
        idx = farthest_point_init(x, K, seed, first=int(f))
        _, cost = _soft_lloyd(x, x[idx], iters, tau)
        if cost < best_cost - 1e-12:
            best, best_cost = idx, cost
    return best


def soft_kmeans(z, K: int, iters: int = 10, tau: float = 0.1, seed: int = 0,
                restarts: int = 1) -> SoftAssignment:
    """Unrolled soft k-means; every step is differentiable with respect to ``z``."""
    z = ad.as_tensor(z)
    N, d = z.shape
    if K > N:
        raise ContractError(f"K={K} clusters exceed N={N} points")
    if iters < 1:
        raise ContractError("iters must be >= 1")
    mu = ad.take(z, seed_centers(z.data, K, iters, tau, seed, restarts))
    zz = ad.reshape(z, (N, 1, d))

    def assign(mu):
        diff = zz - ad.reshape(mu, (1, K, d))
        d2 = ad.sum_(ad.square(diff), axis=2)
        return ad.softmax(d2 * (-1.0 / tau), axis=1)

    for _ in range(iters):
        y = assign(mu)
        mass = ad.reshape(ad.sum_(y, axis=0), (K, 1))
        mu = ad.matmul(ad.transpose(y), z) / mass
    return SoftAssignment(assign(mu), mu)


def global_size_loss(y) -> Tensor:
    """Squared deviation of every cluster's soft mass share from 1/K."""
    y = ad.as_tensor(y)
    N, K = y.shape
    share = ad.sum_(y, axis=0) * (1.0 / N)
    return ad.sum_(ad.square(share - 1.0 / K))


def greedy_assign(y: np.ndarray, c: int) -> HardAssignment:
    """Round soft assignments: visit cells by descending probability and fill
    clusters up to capacity ``c``. Ties go to the lower order, then lower cluster."""
    y = np.asarray(y.data if isinstance(y, Tensor) else y)
    N, K = y.shape
    if N != K * c:
        raise ContractError(f"N={N} != K*c={K * c}")
    jj, kk = np.indices((N, K))
    order = np.lexsort((kk.ravel(), jj.ravel(), -y.ravel()))
    labels = np.full(N, -1, dtype=np.int64)
    fill = np.zeros(K, dtype=np.int64)
    left = N
    for cell in order:
        j, k = divmod(int(cell), K)
        if labels[j] < 0 and fill[k] < c:
            labels[j] = k
            fill[k] += 1
            left -= 1
            if left == 0:
                break
    return HardAssignment(labels, K, c)


def min_cost_matching(cost: np.ndarray) -> np.ndarray:
    """Permutation ``p`` minimizing ``sum_i cost[i, p[i]]``."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ContractError(f"cost matrix must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ContractError("cost matrix has non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(rows), dtype=np.int64)
    perm[rows] = cols
    return perm


def align_labels(y: np.ndarray, y_soft, c: int | None = None) -> np.ndarray:
    """Permute label columns to best overlap the greedy rounding of ``y_soft``."""
    y = np.asarray(y, dtype=float)
    ys = np.asarray(y_soft.data if isinstance(y_soft, Tensor) else y_soft)
    N, K = y.shape
    c = c if c is not None else N // K
    hard = greedy_assign(ys, c).one_hot()
    overlap = y.T @ hard
    perm = min_cost_matching(-overlap)
    out = np.zeros_like(y)
    out[:, perm] = y
    return out


def balanced_kmeans_baseline(features: np.ndarray, K: int, c: int, iters: int = 50,
                             seed: int = 0, history: list | None = None) -> HardAssignment:
    """Lloyd iterations whose assignment step is an exact min-cost matching of
    points to K*c replicated center slots, so every cluster holds exactly c."""
    x = np.asarray(features, dtype=float)
    N = len(x)
    if N != K * c:
        raise ContractError(f"N={N} != K*c={K * c}")
    centers = x[farthest_point_init(x, K, seed)].copy()
    labels = None
    slot_cluster = np.repeat(np.arange(K), c)
    for _ in range(max(1, iters)):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        perm = min_cost_matching(d2[:, slot_cluster])
        new = slot_cluster[perm]
        centers = np.stack([x[new == k].mean(axis=0) for k in range(K)])
        if history is not None:
            history.append(float(((x - centers[new]) ** 2).sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
    return HardAssignment(labels, K, c)


def raw_order_features(inst) -> np.ndarray:
    """Per-order raw feature vector: normalized item centroid followed by the
    share of the order's items stored in each (block, aisle)."""
    w = inst.warehouse
    coords = np.array([it.coord for it in inst.items])
    scale = np.array([max(w.width, 1e-9), w.depth])
    cells = np.array([it.slot.block * w.aisles + it.slot.aisle for it in inst.items])
    feats = np.zeros((inst.N, 2 + w.blocks * w.aisles))
    for j, idx in enumerate(inst.order_items):
        feats[j, :2] = coords[idx].mean(axis=0) / scale
        np.add.at(feats[j], 2 + cells[idx], 1.0 / len(idx))
    return feats
