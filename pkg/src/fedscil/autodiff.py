"""Dense float64 tensors with reverse-mode automatic differentiation.

The networks simulated in this package are small fully connected stacks, so
the engine favors clarity and determinism over throughput: every value is a
float64 numpy array, every differentiable operation records a backward
closure over its parents, and gradients are resolved by one topological walk
from a scalar loss. The op set is deliberately small; anything not listed
here does not exist.

Numerical conventions, all of which tests rely on:
- ``log`` clamps its argument to >= 1e-12 and passes zero gradient below the
  clamp point.
- softmax is row-wise and max-stabilized.
- batch normalization is built from primitive ops so the reported batch mean
  and variance are themselves graph nodes (losses differentiate through
  them); the running statistics are plain arrays updated by EMA with
  ``running = (1 - momentum) * running + momentum * batch``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateBatchError

Array = np.ndarray

LOG_CLAMP = 1e-12

# Parameter group tags. bn_stats labels running statistics in checkpoints and
# aggregation; no trainable parameter carries it.
PARAM_GROUPS = ("backbone", "head_old", "head_new", "bn_stats")


def _as_f64(values) -> Array:
    return np.asarray(values, dtype=np.float64)


class Tensor:
    """A float64 array plus the bookkeeping needed for backprop."""

    __slots__ = ("data", "requires_grad", "_parents", "_bw")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple["Tensor", ...] = (),
                 bw: Callable[[Array], tuple] | None = None):
        self.data = _as_f64(data)
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._bw = bw

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return _add(self, _wrap(other))

    def __radd__(self, other):
        return _add(_wrap(other), self)

    def __sub__(self, other):
        return _add(self, _neg(_wrap(other)))

    def __rsub__(self, other):
        return _add(_wrap(other), _neg(self))

    def __neg__(self):
        return _neg(self)

    def __mul__(self, other):
        return _mul(self, _wrap(other))

    def __rmul__(self, other):
        return _mul(_wrap(other), self)

    def __truediv__(self, other):
        return _div(self, _wrap(other))

    def __rtruediv__(self, other):
        return _div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- unary / reductions -------------------------------------------------

    def relu(self) -> "Tensor":
        mask = self.data > 0.0
        return _node(self.data * mask, (self,), lambda g: (g * mask,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return _node(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        # the 1e-150 floor keeps the zero case finite; 0 * finite == 0
        safe = np.maximum(out, 1e-150)
        return _node(out, (self,), lambda g: (g * 0.5 / safe,))

    def log(self) -> "Tensor":
        """Natural log with the argument clamped to >= LOG_CLAMP.

        Below the clamp the forward value is constant, so the gradient there
        is exactly zero.
        """
        clamped = np.maximum(self.data, LOG_CLAMP)
        above = self.data > LOG_CLAMP
        return _node(np.log(clamped), (self,), lambda g: (g * above / clamped,))

    def sum(self, axis: int | None = None) -> "Tensor":
        shape = self.data.shape
        out = self.data.sum(axis=axis)

        def bw(g: Array):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

        return _node(out, (self,), bw)

    def mean(self, axis: int | None = None) -> "Tensor":
        shape = self.data.shape
        count = self.data.size if axis is None else shape[axis]
        out = self.data.mean(axis=axis)

        def bw(g: Array):
            if axis is None:
                return (np.broadcast_to(g / count, shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g / count, axis), shape).copy(),)

        return _node(out, (self,), bw)

    def softmax(self) -> "Tensor":
        """Row-wise softmax of a (b, c) tensor."""
        if self.ndim != 2:
            raise ContractError("softmax expects a 2-d (batch, classes) tensor")
        shifted = self.data - self.data.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=1, keepdims=True)

        def bw(g: Array):
            inner = (g * p).sum(axis=1, keepdims=True)
            return (p * (g - inner),)

        return _node(p, (self,), bw)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: Array, parents: tuple[Tensor, ...], bw) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, parents=parents if needs else (),
                  bw=bw if needs else None)


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a gradient back down to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _add(a: Tensor, b: Tensor) -> Tensor:
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def _neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def _mul(a: Tensor, b: Tensor) -> Tensor:
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def _div(a: Tensor, b: Tensor) -> Tensor:
    return _node(a.data / b.data, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError("matmul expects 2-d operands")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g: Array):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return (ga, gb)

    return _node(a.data @ b.data, (a, b), bw)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of an empty sequence")
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g: Array):
        return tuple(np.split(g, offsets, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), bw)


def col_slice(t: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a 2-d tensor."""
    if t.ndim != 2:
        raise ContractError("col_slice expects a 2-d tensor")
    if not (0 <= start <= stop <= t.shape[1]):
        raise ContractError(f"column range [{start}, {stop}) outside width {t.shape[1]}")

    def bw(g: Array):
        full = np.zeros_like(t.data)
        full[:, start:stop] = g
        return (full,)

    return _node(t.data[:, start:stop].copy(), (t,), bw)


def row_slice(t: Tensor, start: int, stop: int) -> Tensor:
    """Rows [start, stop) of a 2-d tensor."""
    if t.ndim != 2:
        raise ContractError("row_slice expects a 2-d tensor")
    if not (0 <= start <= stop <= t.shape[0]):
        raise ContractError(f"row range [{start}, {stop}) outside height {t.shape[0]}")

    def bw(g: Array):
        full = np.zeros_like(t.data)
        full[start:stop] = g
        return (full,)

    return _node(t.data[start:stop].copy(), (t,), bw)


def gather_rows(t: Tensor, index: Array) -> Tensor:
    """Picks t[i, index[i]] for each row i; the one-hot lookup primitive."""
    if t.ndim != 2:
        raise ContractError("gather_rows expects a 2-d tensor")
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1 or idx.shape[0] != t.shape[0]:
        raise ContractError("index must be 1-d with one entry per row")
    if idx.size and (idx.min() < 0 or idx.max() >= t.shape[1]):
        raise ContractError("gather index out of range")
    rows = np.arange(t.shape[0])

    def bw(g: Array):
        full = np.zeros_like(t.data)
        np.add.at(full, (rows, idx), g)
        return (full,)

    return _node(t.data[rows, idx], (t,), bw)


def one_hot(labels: Array, classes: int) -> Tensor:
    """Constant one-hot encoding of integer labels, shape (b, classes)."""
    idx = np.asarray(labels, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= classes):
        raise ContractError(f"label outside [0, {classes})")
    out = np.zeros((idx.shape[0], classes))
    out[np.arange(idx.shape[0]), idx] = 1.0
    return Tensor(out)


def l2_norm(t: Tensor) -> Tensor:
    """Euclidean norm over all entries; zero input gives zero gradient."""
    return (t * t).sum().sqrt()


# -- backward pass -----------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _compute_grads(loss: Tensor) -> dict[int, Array]:
    if loss.size != 1:
        raise ContractError("backward requires a scalar loss")
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        if node._bw is None:
            continue
        g = grads[id(node)]
        for parent, pg in zip(node._parents, node._bw(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return grads


@dataclass
class Parameter:
    """A named trainable tensor tagged with its aggregation group."""

    name: str
    value: Tensor
    group: str
    grad: Array | None = None

    def __post_init__(self):
        if self.group not in PARAM_GROUPS:
            raise ContractError(f"unknown parameter group {self.group!r}")
        self.value.requires_grad = True


def grad(loss: Tensor, params: Sequence[Parameter]) -> dict[str, Array]:
    """d loss / d p for every parameter; zeros where the graph never saw p.

    Parameter values are left untouched.
    """
    grads = _compute_grads(loss)
    out: dict[str, Array] = {}
    for p in params:
        g = grads.get(id(p.value))
        out[p.name] = np.zeros_like(p.value.data) if g is None else g
    return out


def backprop(loss: Tensor, params: Sequence[Parameter]) -> None:
    """Convenience wrapper: compute gradients and store them on the params."""
    grads = grad(loss, params)
    for p in params:
        p.grad = grads[p.name]


# -- batch normalization ------------------------------------------------------


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer."""

    running_mean: Array
    running_var: Array
    momentum: float = 0.1
    epsilon: float = 1e-5


def batchnorm_forward(x: Tensor, gamma: Tensor, beta: Tensor,
                      state: BatchNormState, mode: str,
                      update_running: bool = True) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (y, batch_mean, batch_var).

    Train mode normalizes by batch statistics and EMA-updates the running
    ones; eval mode normalizes by running statistics. The batch statistics
    are graph nodes in both modes: generator training differentiates a
    statistics-matching loss through them while the teacher itself stays
    frozen (its running stats are only mutated in train mode with
    update_running=True).
    """
    if mode not in ("train", "eval"):
        raise ContractError(f"unknown batchnorm mode {mode!r}")
    if x.ndim != 2:
        raise ContractError("batchnorm expects a 2-d (batch, channels) tensor")
    if x.shape[1] != state.running_mean.shape[0]:
        raise ContractError("channel count does not match running statistics")

    mu = x.mean(axis=0)
    centered = x - mu
    var = (centered * centered).mean(axis=0)  # biased, matches normalization

    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatchError("batch statistics need at least 2 samples")
        normed = centered / (var + state.epsilon).sqrt()
        if update_running:
            m = state.momentum
            state.running_mean = (1.0 - m) * state.running_mean + m * mu.data
            state.running_var = (1.0 - m) * state.running_var + m * var.data
    else:
        inv = 1.0 / np.sqrt(state.running_var + state.epsilon)
        normed = (x - Tensor(state.running_mean)) * Tensor(inv)
    y = gamma * normed + beta
    return y, mu, var


# -- optimizers ---------------------------------------------------------------


@dataclass
class OptimizerConfig:
    """Per-group learning rates plus the update rule's own constants."""

    kind: str = "sgd_momentum"  # sgd_momentum | adam
    rates: dict[str, float] = field(default_factory=dict)
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd_momentum", "adam"):
            raise ContractError(f"unknown optimizer kind {self.kind!r}")
        for group, rate in self.rates.items():
            if rate < 0 or not np.isfinite(rate):
                raise ContractError(f"negative or non-finite rate for group {group!r}")


class Optimizer:
    """Stateful SGD-with-momentum or Adam over named parameters.

    Groups with rate exactly 0 are skipped entirely, so their parameters are
    bit-identical after any number of steps.
    """

    def __init__(self, params: Sequence[Parameter], cfg: OptimizerConfig):
        self.params = list(params)
        self.cfg = cfg
        for p in self.params:
            if p.group not in cfg.rates:
                raise ContractError(f"no learning rate for group {p.group!r}")
        self._vel: dict[str, Array] = {}
        self._m: dict[str, Array] = {}
        self._v: dict[str, Array] = {}
        self._t = 0

    def set_rate(self, group: str, rate: float) -> None:
        self.cfg.rates[group] = float(rate)

    def step(self) -> None:
        cfg = self.cfg
        self._t += 1
        for p in self.params:
            rate = cfg.rates[p.group]
            if rate == 0.0:
                continue
            if p.grad is None:
                raise ContractError(f"parameter {p.name} has no gradient")
            g = p.grad
            if cfg.kind == "sgd_momentum":
                v = self._vel.get(p.name)
                v = g if v is None else cfg.momentum * v + g
                self._vel[p.name] = v
                p.value.data = p.value.data - rate * v
            else:
                m = self._m.get(p.name, 0.0) * cfg.beta1 + (1 - cfg.beta1) * g
                v = self._v.get(p.name, 0.0) * cfg.beta2 + (1 - cfg.beta2) * g * g
                self._m[p.name] = m
                self._v[p.name] = v
                m_hat = m / (1 - cfg.beta1 ** self._t)
                v_hat = v / (1 - cfg.beta2 ** self._t)
                p.value.data = p.value.data - rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
