"""Losses and the training loop of the task-oriented graph clustering network.

One training iteration on a graph:

1. soft-cluster the E1 order embeddings and round them greedily to ``y'``;
2. route ``y'`` to get the real picking distances;
3. replace the current labels with ``y'`` when it is shorter and a one-sided
   paired t-test finds the improvement significant;
4. update E1 on the clustering loss, which is the cross-entropy to the labels
   during warm-up and the estimated total distance once the estimator's error
   fell below the switch threshold;
5. update E2 and the estimator on the squared error of the estimated
   per-batch distances.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy import stats

from . import autodiff as ad
from .autodiff import Adam, ParamStore, Tensor
from .cluster import HardAssignment, align_labels, global_size_loss, greedy_assign, soft_kmeans
from .errors import ContractError, NumericError
from .heuristics import seed_savings_batching
from .nets import Estimator, GraphTensors, HetGNN, NetConfig, estimated_batch_distances, pack_graph
from .obgraph import SamplingConfig, build_graph, sample_graph
from .routing import Solution, solution_distance
from .warehouse import BatchingInstance

log = logging.getLogger(__name__)

SUPERVISED = "supervised-only"
TASK = "task-oriented"
CLAMP = 1e-12
clamp_events = 0

METRIC_COLUMNS = ("epoch", "graph", "L_s", "L_e", "L_c", "L_t", "label_score", "gamma", "beta",
                  "label_updates", "p_value", "eps")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    decay: float = 0.96
    epochs: int = 200
    steps_per_epoch: int = 1  # training iterations sharing one learning rate
    eps: float | None = None  # absolute switch threshold on L_e
    eps_factor: float = 0.05  # else eps = eps_factor * var(label batch distances)
    alpha_t: float = 0.05
    kmeans_iters: int = 10
    tau: float = 0.1
    kmeans_restarts: int = 8
    lambda_g: float = 1.0
    seed: int = 0
    mode: str = TASK
    hidden: int = 128
    layers: int = 2
    lstm_layers: int = 2
    est_widths: tuple | None = None  # default: three layers of ``hidden`` units
    M: int = 10
    P: int = 8
    share_route_encoder: bool = False
    exact_small: bool = False

    def __post_init__(self):
        if self.mode not in (SUPERVISED, TASK):
            raise ContractError(f"unknown training mode {self.mode!r}")
        if self.eps is not None and self.eps <= 0:
            raise ContractError("eps must be > 0")
        if self.eps_factor <= 0:
            raise ContractError("eps_factor must be > 0")
        if self.epochs < 0 or self.steps_per_epoch < 1:
            raise ContractError("epochs must be >= 0 and steps_per_epoch >= 1")
        if not 0 < self.alpha_t < 1:
            raise ContractError("alpha_t must lie in (0, 1)")
        if self.est_widths is not None:
            self.est_widths = tuple(self.est_widths)

    @property
    def net(self) -> NetConfig:
        widths = self.est_widths or (self.hidden,) * 3
        return NetConfig(self.hidden, self.layers, self.lstm_layers, widths)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay ** epoch

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["est_widths"] is not None:
            d["est_widths"] = list(d["est_widths"])
        return d


# losses

def task_loss(assignment: HardAssignment, inst: BatchingInstance, exact_small: bool = False) -> float:
    """Total picking distance of a feasible assignment."""
    return solution_distance(assignment, inst, exact_small).total


def estimation_error(T, y_soft, d) -> Tensor:
    """Mean squared gap between real and estimated per-batch distances."""
    T, y_soft = ad.as_tensor(T), ad.as_tensor(y_soft)
    d = np.asarray(d, dtype=float)
    if T.shape != y_soft.shape or d.shape != (T.shape[1],):
        raise ContractError(f"shapes T{T.shape}, y_soft{y_soft.shape}, d{d.shape} disagree")
    return ad.mean(ad.square(ad.Tensor(d) - estimated_batch_distances(T, y_soft)))


def surrogate_loss(y_soft, y_aligned) -> Tensor:
    """Cross-entropy of the soft assignment against aligned one-hot labels."""
    global clamp_events
    y_soft = ad.as_tensor(y_soft)
    y = np.asarray(y_aligned, dtype=float)
    if y_soft.shape != y.shape:
        raise ContractError(f"shapes {y_soft.shape} and {y.shape} disagree")
    hit = (y_soft.data < CLAMP) & (y > 0)
    if hit.any():
        clamp_events += int(hit.sum())
        log.warning("surrogate loss clamped %d label cells at %g", int(hit.sum()), CLAMP)
    N = y.shape[0]
    return ad.sum_(ad.log(ad.clip_min(y_soft, CLAMP)) * y) * (-1.0 / N)


def clustering_loss(L_s, est_total, gamma: int, beta: int, lambda_g: float, L_G) -> Tensor:
    if gamma + beta != 1 or gamma not in (0, 1):
        raise ContractError("exactly one of gamma, beta must be 1")
    main = L_s if gamma else est_total
    return ad.as_tensor(main) + ad.as_tensor(L_G) * lambda_g


def switch_weights(prev_L_e: float | None, eps: float, mode: str = TASK) -> tuple[int, int]:
    """(gamma, beta): estimator-guided only after an iteration with L_e < eps."""
    if mode == TASK and prev_L_e is not None and prev_L_e < eps:
        return 0, 1
    return 1, 0


def paired_t_test_one_sided(old, new) -> float:
    """p-value of H1: mean(old - new) > 0 with K - 1 degrees of freedom.

    Both inputs are paired rank by rank after sorting. Zero-variance
    differences give p = 0 for a positive mean difference and p = 1 otherwise.
    """
    old = np.sort(np.asarray(old, dtype=float))
    new = np.sort(np.asarray(new, dtype=float))
    if old.shape != new.shape or old.ndim != 1 or len(old) < 2:
        raise ContractError("paired t-test needs two equal-length samples of size >= 2")
    diff = old - new
    mean, sd = diff.mean(), diff.std(ddof=1)
    if sd == 0 or not np.isfinite(sd):
        return 0.0 if mean > 0 else 1.0
    t = mean / (sd / np.sqrt(len(diff)))
    return float(stats.t.sf(t, len(diff) - 1))


# model

class BTOGCN:
    """E1 + differentiable k-means (the clustering network) and E2 + estimator."""

    def __init__(self, cfg: TrainConfig, n_item_feat: int, K: int):
        self.cfg = cfg
        self.K = K
        self.n_item_feat = n_item_feat
        self.store = ParamStore(cfg.seed)
        net = cfg.net
        self.e1 = HetGNN(self.store, "e1", net, n_item_feat)
        shared = self.e1.route if cfg.share_route_encoder else None
        self.e2 = HetGNN(self.store, "e2", net, n_item_feat, route_encoder=shared)
        self.est = Estimator(self.store, "est", net.hidden, K, net.est_widths)

    def cluster_params(self) -> list[Tensor]:
        return self.store.tensors("e1/")

    def estimator_params(self) -> list[Tensor]:
        return self.store.tensors("e2/") + self.store.tensors("est/")

    def soft_assign(self, gt: GraphTensors):
        z = self.e1(gt)
        # the component shared by all orders carries no clustering signal
        z = ad.l2_normalize(z - ad.mean(z, axis=0, keepdims=True))
        return soft_kmeans(z, self.K, self.cfg.kmeans_iters, self.cfg.tau, self.cfg.seed,
                           self.cfg.kmeans_restarts)

    def infer(self, gt: GraphTensors, c: int) -> HardAssignment:
        with ad.no_grad():
            soft = self.soft_assign(gt)
        return greedy_assign(soft.y.data, c)

    def meta(self) -> dict:
        return {"config": self.cfg.to_dict(), "n_item_feat": self.n_item_feat, "K": self.K}


def prepare_graph(inst: BatchingInstance, cfg: TrainConfig) -> GraphTensors:
    g = sample_graph(build_graph(inst), SamplingConfig(cfg.M, cfg.P, cfg.seed))
    return pack_graph(inst, g)


@dataclass
class GraphState:
    """Per-graph training state: the evolving labels and switch history."""

    inst: BatchingInstance
    gt: GraphTensors
    labels: HardAssignment
    label_sol: Solution
    scale: float
    eps: float
    prev_L_e: float | None = None
    label_updates: int = 0
    best: Solution | None = None
    best_epoch: int = -1
    best_params: dict | None = None
    history: list = field(default_factory=list)

    @property
    def label_score(self) -> float:
        return self.label_sol.total


def _eps_for(sol: Solution, cfg: TrainConfig) -> float:
    if cfg.eps is not None:
        return cfg.eps
    v = float(np.var(sol.batch_distances))
    return cfg.eps_factor * v if v > 0 else cfg.eps_factor


def make_state(inst: BatchingInstance, cfg: TrainConfig, labels: Solution | None = None) -> GraphState:
    sol = labels if labels is not None else seed_savings_batching(inst)
    if sol.assignment.K != inst.K:
        raise ContractError("label assignment has the wrong number of batches")
    gt = prepare_graph(inst, cfg)
    scale = max(sol.avg_batch / inst.c, 1e-9)
    return GraphState(inst, gt, sol.assignment, sol, scale, _eps_for(sol, cfg))


def train_step(model: BTOGCN, st: GraphState, opt_c: Adam, opt_e: Adam, epoch: int,
               graph_index: int = 0) -> dict:
    """One iteration of the training procedure on one graph; returns its metrics row."""
    cfg = model.cfg
    inst = st.inst
    model.store.zero_grad()
    snapshot = {n: model.store[n].data.copy() for n in model.store.names("e1/")}

    soft = model.soft_assign(st.gt)
    y_soft = soft.y
    y_new = greedy_assign(y_soft.data, inst.c)
    sol = solution_distance(y_new, inst, cfg.exact_small)
    if st.best is None or sol.total < st.best.total:
        st.best, st.best_epoch, st.best_params = sol, epoch, snapshot

    p = paired_t_test_one_sided(st.label_sol.batch_distances, sol.batch_distances)
    updated = 0
    # the supervised-only ablation keeps the heuristic labels fixed
    if cfg.mode == TASK and st.label_score > sol.total and p < cfg.alpha_t:
        st.labels, st.label_sol = y_new, sol
        st.eps = _eps_for(sol, cfg)
        st.label_updates += 1
        updated = 1

    gamma, beta = switch_weights(st.prev_L_e, st.eps, cfg.mode)
    y_al = align_labels(st.labels.one_hot(), y_soft.data, inst.c)
    L_s = surrogate_loss(y_soft, y_al)
    L_G = global_size_loss(y_soft)

    z2 = model.e2(st.gt)
    if beta:
        T_c = model.est(z2.detach(), y_soft, y_al, st.scale)
        est_total = ad.sum_(estimated_batch_distances(T_c, y_soft))
    else:
        est_total = Tensor(0.0)
    L_c = clustering_loss(L_s, est_total, gamma, beta, cfg.lambda_g, L_G)
    ad.backward(L_c)
    opt_c.lr = cfg.lr_at(epoch)
    opt_c.step()
    model.store.zero_grad()

    T_e = model.est(z2, y_soft.detach(), y_al, st.scale)
    L_e = estimation_error(T_e, y_soft.detach(), sol.batch_distances)
    ad.backward(L_e)
    opt_e.lr = cfg.lr_at(epoch)
    opt_e.step()
    model.store.zero_grad()

    st.prev_L_e = L_e.item()
    row = {"epoch": epoch, "graph": graph_index, "L_s": L_s.item(), "L_e": L_e.item(),
           "L_c": L_c.item(), "L_t": sol.total, "label_score": st.label_score,
           "gamma": gamma, "beta": beta, "label_updates": updated, "p_value": p, "eps": st.eps}
    for k in ("L_s", "L_e", "L_c"):
        if not np.isfinite(row[k]):
            raise NumericError(f"epoch {epoch}: {k} is not finite")
    st.history.append(row)
    return row


@dataclass
class TrainResult:
    model: BTOGCN
    metrics: list
    states: list
    best_params: dict | None = None

    @property
    def best(self) -> Solution:
        return self.states[0].best

    def metrics_csv(self) -> str:
        return metrics_to_csv(self.metrics)

    def checkpoint(self) -> tuple[dict, dict]:
        tensors = self.model.store.state_dict()
        if self.best_params:
            tensors.update({f"best/{n}": a for n, a in self.best_params.items()})
        meta = self.model.meta()
        meta["label_scores"] = [st.label_score for st in self.states]
        meta["best_totals"] = [st.best.total if st.best else None for st in self.states]
        return tensors, meta


def metrics_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in METRIC_COLUMNS])
    return buf.getvalue()


def _build(cfg: TrainConfig, insts) -> BTOGCN:
    w = insts[0].warehouse
    K = insts[0].K
    for inst in insts[1:]:
        if inst.warehouse != w or inst.K != K:
            raise ContractError("all training graphs need the same warehouse layout and K")
    return BTOGCN(cfg, 2 + w.blocks + w.aisles, K)


def train_single_graph(inst: BatchingInstance, cfg: TrainConfig,
                       labels: Solution | None = None, progress=None) -> TrainResult:
    """Fit the model to one graph; the best routed ``y'`` seen is kept."""
    model = _build(cfg, [inst])
    st = make_state(inst, cfg, labels)
    opt_c = Adam(model.cluster_params(), cfg.lr)
    opt_e = Adam(model.estimator_params(), cfg.lr)
    rows = []
    for epoch in range(cfg.epochs):
        for _ in range(cfg.steps_per_epoch):
            rows.append(train_step(model, st, opt_c, opt_e, epoch))
            if progress:
                progress(rows[-1])
    return TrainResult(model, rows, [st], st.best_params)


def evaluate(model: BTOGCN, inst: BatchingInstance, gt: GraphTensors | None = None,
             params: dict | None = None) -> Solution:
    """Inference only: embed, cluster, round greedily and route."""
    gt = gt if gt is not None else prepare_graph(inst, model.cfg)
    if params:
        saved = {n: model.store[n].data for n in params}
        for n, a in params.items():
            model.store[n].data = a
        try:
            y = model.infer(gt, inst.c)
        finally:
            for n, a in saved.items():
                model.store[n].data = a
    else:
        y = model.infer(gt, inst.c)
    return solution_distance(y, inst, model.cfg.exact_small)


@dataclass
class MultiGraphResult(TrainResult):
    val_totals: list = field(default_factory=list)
    test_solutions: list = field(default_factory=list)


def train_multi_graph(train, val, test, cfg: TrainConfig, labels=None, progress=None) -> MultiGraphResult:
    """Share one model across training graphs; keep the E1 weights with the
    lowest mean validation distance and report inference on the test graphs."""
    ids = [id(x) for x in list(train) + list(val) + list(test)]
    if len(set(ids)) != len(ids):
        raise ContractError("train, validation and test splits overlap")
    if not train:
        raise ContractError("need at least one training graph")
    model = _build(cfg, list(train) + list(val) + list(test))
    states = [make_state(inst, cfg, None if labels is None else labels[k])
              for k, inst in enumerate(train)]
    val_gts = [prepare_graph(inst, cfg) for inst in val]
    test_gts = [prepare_graph(inst, cfg) for inst in test]
    opt_c = Adam(model.cluster_params(), cfg.lr)
    opt_e = Adam(model.estimator_params(), cfg.lr)
    rows, val_totals = [], []
    best_val, best_params = np.inf, None
    for epoch in range(cfg.epochs):
        for _ in range(cfg.steps_per_epoch):
            for k, st in enumerate(states):
                rows.append(train_step(model, st, opt_c, opt_e, epoch, k))
                if progress:
                    progress(rows[-1])
        if val:
            v = float(np.mean([evaluate(model, inst, gt).total for inst, gt in zip(val, val_gts)]))
            val_totals.append(v)
            if v < best_val:
                best_val = v
                best_params = {n: model.store[n].data.copy() for n in model.store.names("e1/")}
    if best_params is None:
        best_params = {n: model.store[n].data.copy() for n in model.store.names("e1/")}
    tests = [evaluate(model, inst, gt, best_params) for inst, gt in zip(test, test_gts)]
    return MultiGraphResult(model, rows, states, best_params, val_totals, tests)


def model_from_checkpoint(tensors: dict, meta: dict) -> tuple[BTOGCN, dict | None]:
    """Rebuild a model; also returns the best-epoch E1 weights when stored."""
    cfg = TrainConfig.from_dict(meta["config"])
    model = BTOGCN(cfg, meta["n_item_feat"], meta["K"])
    model.store.load_state_dict({n: a for n, a in tensors.items() if not n.startswith("best/")})
    best = {n[5:]: a for n, a in tensors.items() if n.startswith("best/")} or None
    return model, best
