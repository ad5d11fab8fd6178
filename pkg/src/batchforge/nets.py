"""Type-aware heterogeneous GNN, bidirectional LSTM route encoder and the
task-oriented estimator, all built on :mod:`batchforge.autodiff`.

Graph data is first packed into dense neighbor tables (:class:`GraphTensors`)
so that every layer is a handful of batched array ops. Placeholder slots in a
table carry ``mask == False``: their embeddings are zeroed and their attention
logits are excluded from the softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .errors import ContractError, ShapeError
from .obgraph import HetGraph
from .warehouse import BatchingInstance


@dataclass(frozen=True)
class NetConfig:
    hidden: int = 128
    layers: int = 2
    lstm_layers: int = 2
    est_widths: tuple = (128, 128, 128)


@dataclass
class GraphTensors:
    n_orders: int
    n_items: int
    item_feat: np.ndarray
    order_feat: np.ndarray
    oo_src: np.ndarray
    oo_dst: np.ndarray
    seq: np.ndarray  # oo route item sequences, padded
    seq_len: np.ndarray
    oo_nbr: np.ndarray  # neighbor order per slot
    oo_edge: np.ndarray  # oo edge id per slot
    oo_scale: np.ndarray  # normalized route distance per slot
    oo_mask: np.ndarray
    ii_nbr: np.ndarray
    ii_mask: np.ndarray
    oi_order_nbr: np.ndarray  # items of each order
    oi_order_mask: np.ndarray
    oi_item_nbr: np.ndarray  # orders holding each item
    oi_item_mask: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.oo_src)


def item_features(inst: BatchingInstance, g: HetGraph) -> np.ndarray:
    """Normalized planar coordinates plus block and aisle one-hots."""
    w = inst.warehouse
    feats = np.zeros((g.n_items, 2 + w.blocks + w.aisles))
    for k, i in enumerate(g.item_ids):
        it = inst.items[int(i)]
        feats[k, 0] = it.coord[0] / max(w.width, 1e-9)
        feats[k, 1] = it.coord[1] / w.depth
        feats[k, 2 + it.slot.block] = 1.0
        feats[k, 2 + w.blocks + it.slot.aisle] = 1.0
    return feats


def order_features(inst: BatchingInstance, g: HetGraph) -> np.ndarray:
    """Item count, item-coordinate centroid and bounding span per order."""
    w = inst.warehouse
    scale = np.array([max(w.width, 1e-9), w.depth])
    coords = np.array([inst.items[int(i)].coord for i in g.item_ids]) / scale
    biggest = max(len(x) for x in g.order_items)
    feats = np.zeros((g.n_orders, 5))
    for j, items in enumerate(g.order_items):
        c = coords[items]
        feats[j, 0] = len(items) / biggest
        feats[j, 1:3] = c.mean(axis=0)
        feats[j, 3:5] = c.max(axis=0) - c.min(axis=0)
    return feats


def _gather_table(table, endpoint_of, self_index=None):
    """Turn an edge-id table into (neighbor node, edge id, mask) tables."""
    mask = table >= 0
    edge = np.where(mask, table, 0)
    if self_index is None:
        nbr = endpoint_of[edge]
    else:
        a, b = endpoint_of[:, 0][edge], endpoint_of[:, 1][edge]
        nbr = np.where(a == self_index[:, None], b, a)
    return np.where(mask, nbr, 0), edge, mask


def pack_graph(inst: BatchingInstance, g: HetGraph) -> GraphTensors:
    oo_t, ii_t, oio_t, oii_t = g.neighbor_tables()
    N, I = g.n_orders, g.n_items
    E = len(g.oo_edges)
    if E:
        oo_nbr, oo_edge, oo_mask = _gather_table(oo_t, g.oo_edges, np.arange(N))
        oo_scale = np.where(oo_mask, g.oo_dist[oo_edge], 0.0)
    else:
        oo_nbr = oo_edge = np.zeros((N, 1), dtype=np.int64)
        oo_mask = np.zeros((N, 1), dtype=bool)
        oo_scale = np.zeros((N, 1))
    if len(g.ii_edges):
        ii_nbr, _, ii_mask = _gather_table(ii_t, g.ii_edges, np.arange(I))
    else:
        ii_nbr = np.zeros((I, 1), dtype=np.int64)
        ii_mask = np.zeros((I, 1), dtype=bool)
    oio_nbr, _, oio_mask = _gather_table(oio_t, g.oi_edges[:, 1])
    oii_nbr, _, oii_mask = _gather_table(oii_t, g.oi_edges[:, 0])
    # edge updates read endpoints ordered by order id, so relabeling orders
    # leaves each edge's (first, second) pair unchanged
    src = g.oo_edges[:, 0].copy() if E else np.zeros(0, dtype=np.int64)
    dst = g.oo_edges[:, 1].copy() if E else np.zeros(0, dtype=np.int64)
    if E:
        ids = np.array([o.id for o in inst.orders], dtype=object)
        flip = ids[src] > ids[dst]
        src[flip], dst[flip] = dst[flip], src[flip]
    lens = np.array([len(r) for r in g.oo_routes], dtype=np.int64)
    T = int(lens.max()) if E else 1
    seq = np.zeros((E, T), dtype=np.int64)
    for e, r in enumerate(g.oo_routes):
        seq[e, :len(r)] = r
    return GraphTensors(
        N, I, item_features(inst, g), order_features(inst, g),
        src, dst, seq, lens, oo_nbr, oo_edge, oo_scale, oo_mask, ii_nbr, ii_mask,
        oio_nbr, oio_mask, oii_nbr, oii_mask)


def linear(x, W, b=None):
    y = ad.matmul(x, W)
    return y if b is None else y + b


# route encoder

def lstm_params(store: ParamStore, prefix: str, n_in: int, hidden: int):
    fan = n_in + hidden
    store.uniform(f"{prefix}/Wx", (n_in, 4 * hidden), fan)
    store.uniform(f"{prefix}/Wh", (hidden, 4 * hidden), fan)
    store.uniform(f"{prefix}/b", (4 * hidden,), fan)


def lstm_run(store, prefix, xs, lens):
    """Run one LSTM direction over per-step inputs; returns step outputs and
    the final hidden state. Steps at or past a sequence's length leave its
    state untouched."""
    Wx, Wh, b = store[f"{prefix}/Wx"], store[f"{prefix}/Wh"], store[f"{prefix}/b"]
    H = Wh.shape[0]
    E = xs[0].shape[0]
    h = ad.Tensor(np.zeros((E, H)))
    c = ad.Tensor(np.zeros((E, H)))
    outs = []
    for t, x in enumerate(xs):
        gates = ad.matmul(x, Wx) + ad.matmul(h, Wh) + b
        i = ad.sigmoid(gates[:, :H])
        f = ad.sigmoid(gates[:, H:2 * H])
        g = ad.tanh(gates[:, 2 * H:3 * H])
        o = ad.sigmoid(gates[:, 3 * H:])
        c_new = f * c + i * g
        h_new = o * ad.tanh(c_new)
        m = (t < lens).astype(float)[:, None]
        c = c_new * m + c * (1.0 - m)
        h = h_new * m + h * (1.0 - m)
        outs.append(h)
    return outs, h


def _reverse_index(lens, T):
    t = np.arange(T)[None, :]
    return np.where(t < lens[:, None], lens[:, None] - 1 - t, 0)


def _restep(steps, rev):
    """Reorder per-step tensors so step t of sequence e reads step rev[e, t]."""
    stacked = ad.stack(steps, axis=0)
    rows = np.arange(rev.shape[0])
    return [ad.take(stacked, (rev[:, t], rows)) for t in range(rev.shape[1])]


class RouteEncoder:
    """Stacked bidirectional LSTM over picking-route item embeddings."""

    def __init__(self, store: ParamStore, prefix: str, hidden: int, layers: int = 2):
        self.store, self.prefix, self.hidden, self.layers = store, prefix, hidden, layers
        n_in = hidden
        for layer in range(layers):
            lstm_params(store, f"{prefix}/l{layer}/fwd", n_in, hidden)
            lstm_params(store, f"{prefix}/l{layer}/bwd", n_in, hidden)
            n_in = 2 * hidden
        store.uniform(f"{prefix}/proj/W", (2 * hidden, hidden))
        store.uniform(f"{prefix}/proj/b", (hidden,), 2 * hidden)

    def __call__(self, item_emb: Tensor, seq: np.ndarray, lens: np.ndarray) -> Tensor:
        if seq.ndim != 2 or len(seq) == 0 or np.any(lens < 1):
            raise ContractError("route_encode needs non-empty item sequences")
        T = seq.shape[1]
        rev = _reverse_index(lens, T)
        xs = [ad.take(item_emb, seq[:, t]) for t in range(T)]
        for layer in range(self.layers):
            fwd, hf = lstm_run(self.store, f"{self.prefix}/l{layer}/fwd", xs, lens)
            bwd, hb = lstm_run(self.store, f"{self.prefix}/l{layer}/bwd", _restep(xs, rev), lens)
            if layer + 1 < self.layers:
                bwd_aligned = _restep(bwd, rev)
                xs = [ad.concat([a, b], axis=1) for a, b in zip(fwd, bwd_aligned)]
        s = self.store
        return linear(ad.concat([hf, hb], axis=1), s[f"{self.prefix}/proj/W"], s[f"{self.prefix}/proj/b"])


def route_encode(encoder: RouteEncoder, item_emb, seq, lens) -> Tensor:
    return encoder(item_emb, np.asarray(seq), np.asarray(lens))


# graph layer pieces

def edge_update(h_e, h_o, src, dst, W) -> Tensor:
    """New oo edge state from the edge and both endpoint orders, in canonical order."""
    src, dst = np.asarray(src), np.asarray(dst)
    if np.any(src == dst):
        raise ContractError("edge_update applies to oo edges between two distinct orders")
    return ad.relu(ad.matmul(ad.concat([h_e, ad.take(h_o, src), ad.take(h_o, dst)], axis=1), W))


def aggregate_typed(h_target, nbr_states, W, mask, scale=None):
    """Attention pooling of one relation's neighbors.

    Returns the aggregate (n, H), the attention weights (n, S) and a flag per
    node that is true when it has no unmasked neighbor.
    """
    mask = np.asarray(mask, dtype=bool)
    proj = ad.matmul(nbr_states, W) * mask[..., None].astype(float)
    logits = ad.relu(ad.sum_(proj * ad.reshape(h_target, (h_target.shape[0], 1, -1)), axis=2))
    if scale is not None:
        logits = logits * np.asarray(scale, dtype=float)
    alpha = ad.masked_softmax(logits, mask, axis=1)
    agg = ad.relu(ad.sum_(ad.reshape(alpha, alpha.shape + (1,)) * proj, axis=1))
    return agg, alpha, ~mask.any(axis=1)


def combine_attention(h_self, candidates, cand_mask, Wq, Wk, Wv):
    """Dot-product attention of the node's previous state over its relation
    aggregates and itself. Returns the new state and the weights."""
    H = Wq.shape[1]
    stacked = ad.stack(list(candidates) + [h_self], axis=1)
    mask = np.concatenate([np.asarray(cand_mask, dtype=bool),
                           np.ones((h_self.shape[0], 1), dtype=bool)], axis=1)
    q = ad.reshape(ad.matmul(h_self, Wq), (h_self.shape[0], 1, H))
    k = ad.matmul(stacked, Wk)
    v = ad.matmul(stacked, Wv)
    w = ad.masked_softmax(ad.sum_(k * q, axis=2) * (1.0 / np.sqrt(H)), mask, axis=1)
    out = ad.sum_(ad.reshape(w, w.shape + (1,)) * v, axis=1)
    return out, w


class HetGNN:
    """Feature projections, route encoder and L type-aware layers."""

    def __init__(self, store: ParamStore, prefix: str, cfg: NetConfig, n_item_feat: int,
                 n_order_feat: int = 5, route_encoder: RouteEncoder | None = None):
        self.store, self.prefix, self.cfg = store, prefix, cfg
        H = cfg.hidden
        p = prefix
        store.uniform(f"{p}/in_item/W", (n_item_feat, H))
        store.uniform(f"{p}/in_item/b", (H,), n_item_feat)
        store.uniform(f"{p}/in_order/W", (n_order_feat, H))
        store.uniform(f"{p}/in_order/b", (H,), n_order_feat)
        self.route = route_encoder or RouteEncoder(store, f"{p}/route", H, cfg.lstm_layers)
        for l in range(cfg.layers):
            store.uniform(f"{p}/l{l}/edge/W", (3 * H, H))
            store.uniform(f"{p}/l{l}/order/oo/W", (2 * H, H))
            store.uniform(f"{p}/l{l}/order/oi/W", (H, H))
            store.uniform(f"{p}/l{l}/item/ii/W", (H, H))
            store.uniform(f"{p}/l{l}/item/oi/W", (H, H))
            for t in ("order", "item"):
                for n in ("Wq", "Wk", "Wv"):
                    store.uniform(f"{p}/l{l}/{t}/attn/{n}", (H, H))

    def p(self, name) -> Tensor:
        return self.store[f"{self.prefix}/{name}"]

    def init_states(self, gt: GraphTensors):
        h_i = linear(ad.Tensor(gt.item_feat), self.p("in_item/W"), self.p("in_item/b"))
        h_o = linear(ad.Tensor(gt.order_feat), self.p("in_order/W"), self.p("in_order/b"))
        h_e = self.route(h_i, gt.seq, gt.seq_len) if gt.n_edges else None
        return h_o, h_i, h_e

    def layer(self, l, gt: GraphTensors, h_o, h_i, h_e):
        P = lambda n: self.p(f"l{l}/{n}")
        new_e = edge_update(h_e, h_o, gt.oo_src, gt.oo_dst, P("edge/W")) if h_e is not None else None

        cands, masks = [], []
        agg, _, empty = aggregate_typed(h_o, ad.take(h_i, gt.oi_order_nbr), P("order/oi/W"),
                                        gt.oi_order_mask)
        cands.append(agg)
        masks.append(~empty)
        if h_e is not None:
            nbr = ad.concat([ad.take(h_o, gt.oo_nbr), ad.take(h_e, gt.oo_edge)], axis=2)
            agg, _, empty = aggregate_typed(h_o, nbr, P("order/oo/W"), gt.oo_mask, gt.oo_scale)
            cands.append(agg)
            masks.append(~empty)
        o_new, _ = combine_attention(h_o, cands, np.stack(masks, axis=1),
                                     P("order/attn/Wq"), P("order/attn/Wk"), P("order/attn/Wv"))

        agg_ii, _, empty_ii = aggregate_typed(h_i, ad.take(h_i, gt.ii_nbr), P("item/ii/W"), gt.ii_mask)
        agg_oi, _, empty_oi = aggregate_typed(h_i, ad.take(h_o, gt.oi_item_nbr), P("item/oi/W"),
                                              gt.oi_item_mask)
        i_new, _ = combine_attention(h_i, [agg_ii, agg_oi], np.stack([~empty_ii, ~empty_oi], axis=1),
                                     P("item/attn/Wq"), P("item/attn/Wk"), P("item/attn/Wv"))
        return o_new, i_new, new_e

    def __call__(self, gt: GraphTensors) -> Tensor:
        h_o, h_i, h_e = self.init_states(gt)
        for l in range(self.cfg.layers):
            h_o, h_i, h_e = self.layer(l, gt, h_o, h_i, h_e)
        return h_o


def hetgnn_forward(net: HetGNN, gt: GraphTensors) -> Tensor:
    return net(gt)


class Estimator:
    """Scores T[j, k]: the share of batch k's picking distance attributed to order j.

    Each (order, cluster) pair is scored by one MLP that reads the order's
    embedding, the soft-mass-weighted mean embedding of cluster k, the
    order's rows of the soft assignment and of the labels, and a one-hot of k.
    """

    def __init__(self, store: ParamStore, prefix: str, hidden: int, K: int, widths=(128, 128, 128)):
        self.store, self.prefix, self.K = store, prefix, K
        n_in = 2 * hidden + 3 * K
        self.n_layers = len(widths) + 1
        for l, width in enumerate(list(widths) + [1]):
            store.uniform(f"{prefix}/fc{l}/W", (n_in, width))
            store.uniform(f"{prefix}/fc{l}/b", (width,), n_in)
            n_in = width

    def __call__(self, z: Tensor, y_soft: Tensor, y: np.ndarray, scale: float = 1.0) -> Tensor:
        z, y_soft = ad.as_tensor(z), ad.as_tensor(y_soft)
        N, K = y_soft.shape
        if K != self.K or z.shape[0] != N or np.shape(y) != (N, K):
            raise ShapeError(f"estimator inputs z{z.shape}, y_soft{y_soft.shape}, "
                             f"y{np.shape(y)} inconsistent with K={self.K}")
        mass = ad.reshape(ad.sum_(y_soft, axis=0), (K, 1))
        ctx = ad.matmul(ad.transpose(y_soft), z) / mass
        J, Kk = np.indices((N, K))
        x = ad.concat([ad.take(z, J), ad.take(ctx, Kk), ad.take(y_soft, J),
                       ad.Tensor(np.asarray(y, dtype=float)[J]), ad.Tensor(np.eye(K)[Kk])], axis=2)
        for l in range(self.n_layers):
            x = linear(x, self.store[f"{self.prefix}/fc{l}/W"], self.store[f"{self.prefix}/fc{l}/b"])
            if l + 1 < self.n_layers:
                x = ad.relu(x)
        # unit baseline: an untrained estimator predicts ``scale`` per order
        return (ad.reshape(x, (N, K)) + 1.0) * scale


def estimator_forward(est: Estimator, z, y_soft, y, scale: float = 1.0) -> Tensor:
    return est(z, y_soft, y, scale)


def estimated_batch_distances(T, y_soft) -> Tensor:
    """Per-cluster estimate sum_j T[j, k] * y_soft[j, k]."""
    return ad.sum_(ad.as_tensor(T) * ad.as_tensor(y_soft), axis=0)
