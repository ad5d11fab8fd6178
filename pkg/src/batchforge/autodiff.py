"""A small reverse-mode differentiation engine over float64 numpy arrays.

Each op computes its forward value eagerly and, when any input requires a
gradient, records a closure mapping the output gradient to input gradients.
``backward`` walks the recorded graph in reverse topological order and
accumulates gradients into leaf tensors.
"""

from __future__ import annotations

import contextlib
import json
from pathlib import Path

import numpy as np

from .errors import ContractError, InstanceFormatError, NumericError, ShapeError

CHECKPOINT_VERSION = 1
_recording = True


@contextlib.contextmanager
def no_grad():
    global _recording
    old, _recording = _recording, False
    try:
        yield
    finally:
        _recording = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, op={self.op})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __rtruediv__ = lambda a, b: div(b, a)
    __neg__ = lambda a: neg(a)
    __matmul__ = lambda a, b: matmul(a, b)
    __getitem__ = lambda a, idx: take(a, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn, op) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by op '{op}'")
    out = Tensor(data)
    out.op = op
    if _recording and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / b.data ** 2, b.shape)), "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data ** 2, (a,), lambda g: (2.0 * a.data * g,), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g / (2.0 * out),), "sqrt")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def clip_min(a, lo: float) -> Tensor:
    """max(a, lo); no gradient reaches clipped entries."""
    a = as_tensor(a)
    keep = a.data >= lo
    return _make(np.where(keep, a.data, lo), (a,), lambda g: (g * keep,), "clip_min")


# activations

def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out ** 2),), "tanh")


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (a,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),), "softmax")


def masked_softmax(a, mask, axis=-1) -> Tensor:
    """Softmax over entries where ``mask`` is true; fully masked rows give zeros."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    filled = np.where(mask, a.data, -np.inf)
    top = filled.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(mask, np.exp(np.where(mask, a.data, 0.0) - top), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    out = e / np.where(s > 0, s, 1.0)
    return _make(out, (a,),
                 lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),),
                 "masked_softmax")


# reductions and shape ops

def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def take(a, idx) -> Tensor:
    """Numpy indexing (slices or integer arrays); gradients scatter-add back."""
    a = as_tensor(a)
    out = a.data[idx]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)
    return _make(np.array(out, dtype=np.float64), (a,), bw, "take")


def embedding(table, ids) -> Tensor:
    """Rows of ``table`` selected by an integer array of any shape."""
    return take(table, np.asarray(ids, dtype=np.int64))


def concat(tensors, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        other = [s for i, s in enumerate(t.shape) if i != ax]
        first = [s for i, s in enumerate(ts[0].shape) if i != ax]
        if t.ndim != ts[0].ndim or other != first:
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape}")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _make(np.concatenate([t.data for t in ts], axis=ax), tuple(ts),
                 lambda g: tuple(np.split(g, sizes, axis=ax)), "concat")


def stack(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError(f"stack: incompatible shapes {ts[0].shape} and {t.shape}")
    return _make(np.stack([t.data for t in ts], axis=axis), tuple(ts),
                 lambda g: tuple(np.moveaxis(g, axis, 0)), "stack")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape),
                            _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)),
                 "matmul")


def l2_normalize(a, axis=-1, eps=1e-12) -> Tensor:
    return a / sqrt(sum_(square(a), axis=axis, keepdims=True) + eps)


# backward pass

def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = node.grad + g if node.grad is not None else g.copy()
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if not p.requires_grad:
                continue
            key = id(p)
            grads[key] = grads[key] + gp if key in grads else gp


# parameters, optimizer, checkpoints

class ParamStore:
    """Named trainable tensors with seeded initialization."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        self.meta: dict[str, dict] = {}

    def _register(self, name, data, init):
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice")
        t = Tensor(data, requires_grad=True, name=name)
        self.params[name] = t
        self.meta[name] = init
        return t

    def uniform(self, name: str, shape, fan_in: int | None = None) -> Tensor:
        fan_in = fan_in if fan_in is not None else shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        return self._register(name, self.rng.uniform(-bound, bound, size=shape),
                              {"init": "uniform", "bound": bound})

    def zeros(self, name: str, shape) -> Tensor:
        return self._register(name, np.zeros(shape), {"init": "zeros"})

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __len__(self):
        return len(self.params)

    def names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    def tensors(self, prefix: str = "") -> list[Tensor]:
        return [self.params[n] for n in self.names(prefix)]

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        for n, t in self.params.items():
            if n not in state:
                raise ContractError(f"checkpoint lacks parameter {n!r}")
            if state[n].shape != t.shape:
                raise ShapeError(f"{n}: checkpoint shape {state[n].shape} != {t.shape}")
            t.data = np.array(state[n], dtype=np.float64)


def adam_step(param: np.ndarray, grad: np.ndarray, state: dict, lr: float,
              beta1=0.9, beta2=0.999, eps=1e-8) -> np.ndarray:
    """One bias-corrected Adam update; ``state`` holds m, v and the step count t."""
    t = state.get("t", 0) + 1
    m = beta1 * state.get("m", 0.0) + (1 - beta1) * grad
    v = beta2 * state.get("v", 0.0) + (1 - beta2) * grad ** 2
    state.update(t=t, m=m, v=v)
    mhat = m / (1 - beta1 ** t)
    vhat = v / (1 - beta2 ** t)
    return param - lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    def __init__(self, params: list[Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = [dict() for _ in self.params]

    def step(self):
        for p, st in zip(self.params, self.state):
            p.data = adam_step(p.data, p.grad, st, self.lr, *self.betas, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float64 tensors plus JSON metadata to an ``.npz`` container."""
    blob = json.dumps({"version": CHECKPOINT_VERSION, "meta": meta or {},
                       "shapes": {n: list(a.shape) for n, a in tensors.items()}})
    arrays = {f"t/{n}": np.asarray(a, dtype=np.float64) for n, a in tensors.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(blob.encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        if "__header__" not in z.files:
            raise InstanceFormatError(f"{path}: not a checkpoint")
        header = json.loads(z["__header__"].tobytes().decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise InstanceFormatError(f"{path}: unsupported checkpoint version {header.get('version')}")
        tensors = {k[2:]: z[k].copy() for k in z.files if k.startswith("t/")}
    for n, shape in header["shapes"].items():
        if list(tensors[n].shape) != shape:
            raise InstanceFormatError(f"{path}: tensor {n} has the wrong shape")
    return tensors, header["meta"]


def grad_check(fn, inputs, eps: float = 1e-4, floor: float = 1e-6) -> float:
    """Max elementwise relative error between reverse-mode and central-difference gradients.

    ``fn`` maps Tensors to a scalar Tensor. Gradients below ``floor`` in
    magnitude are compared absolutely.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    backward(fn(*ts))
    worst = 0.0
    for k, a in enumerate(arrays):
        analytic = ts[k].grad
        numeric = np.zeros_like(a)
        flat = a.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            with no_grad():
                hi = fn(*[Tensor(x) for x in arrays]).item()
            flat[i] = old - eps
            with no_grad():
                lo = fn(*[Tensor(x) for x in arrays]).item()
            flat[i] = old
            numeric.reshape(-1)[i] = (hi - lo) / (2 * eps)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        if a.size:
            worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst
