"""A small reverse-mode autodiff engine over float64 numpy arrays.

Every forward op records its parents and a closure that pushes the output
gradient back to them. ``Tensor.backward`` walks the recorded graph in
reverse topological order and then drops it, so each forward pass owns its
own tape.
"""

from __future__ import annotations

import contextlib
import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, EmptySequenceError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    # -- construction helpers -------------------------------------------
    @classmethod
    def _make(cls, data, parents, backward):
        out = cls(data)
        if _GRAD_ENABLED:
            live = tuple(p for p in parents if p.requires_grad)
            if live:
                out.requires_grad = True
                out._parents = live
                out._backward = backward
        return out

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    # -- basic properties -----------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        other = _lift(other)
        a, b = self, other

        def backward(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(g, b.shape))

        return Tensor._make(a.data + b.data, (a, b), backward)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor._make(-a.data, (a,), lambda g: a._accum(-g))

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def __mul__(self, other):
        other = _lift(other)
        a, b = self, other

        def backward(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor._make(a.data * b.data, (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other.reciprocal()
        return self * (1.0 / other)

    def reciprocal(self):
        a = self
        out = 1.0 / a.data
        return Tensor._make(out, (a,), lambda g: a._accum(-g * out * out))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        a = self

        basic = _is_basic_index(idx)

        def backward(g):
            full = np.zeros_like(a.data)
            if basic:
                full[idx] += g
            else:
                np.add.at(full, idx, g)
            a._accum(full)

        return Tensor._make(a.data[idx], (a,), backward)

    # -- shape ops --------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.shape)))

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        a = self
        return Tensor._make(a.data.transpose(axes), (a,), lambda g: a._accum(g.transpose(inv)))

    def swap_last(self):
        """Transpose the two trailing axes."""
        a = self
        return Tensor._make(np.swapaxes(a.data, -1, -2), (a,),
                            lambda g: a._accum(np.swapaxes(g, -1, -2)))

    def sum(self, axis=None, keepdims=False):
        a = self

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape))

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- backprop ---------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.size != 1:
                raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # the tape is freed once gradients have been pushed to the leaves
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node.grad = None if node is not self else node.grad


def _is_basic_index(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(data, requires_grad=False, name=None):
    return Tensor(data, requires_grad=requires_grad, name=name)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product with numpy batching rules; gradient flows to both sides."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            b._accum(gb)

    return Tensor._make(out, (a, b), backward)


def softmax_last(x, mask=None):
    """Softmax over the trailing axis.

    ``mask`` is a boolean array broadcastable to ``x``; False entries get zero
    weight. Every slice must keep at least one entry.
    """
    x = _lift(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"softmax_last: trailing axis must be non-empty, got {x.shape}")
    z = x.data
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        x._accum(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return Tensor._make(y, (x,), backward)


LN_EPS = 1e-5


def layer_norm(x, gamma, beta, eps=LN_EPS):
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError("layer_norm: trailing dimension is zero")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: input trailing dim {d} vs gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accum(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxh = g * gamma.data
            x._accum(inv * (dxh - dxh.mean(axis=-1, keepdims=True)
                            - xhat * (dxh * xhat).mean(axis=-1, keepdims=True)))

    return Tensor._make(out, (x, gamma, beta), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu_value(x):
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x * x * x)))


def gelu_derivative(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x * x * x))
    return _gelu_derivative_from_tanh(x, t)


def _gelu_derivative_from_tanh(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


_DEFAULT_GELU_DERIVATIVE = gelu_derivative


def gelu(x):
    """GELU, tanh approximation."""
    x = _lift(x)
    xd = x.data
    t = np.tanh(_GELU_C * (xd + 0.044715 * xd * xd * xd))
    # looked up at call time so a test can swap in a broken derivative
    deriv = globals()["gelu_derivative"]

    def backward(g):
        if deriv is _DEFAULT_GELU_DERIVATIVE:
            x._accum(g * _gelu_derivative_from_tanh(xd, t))
        else:
            x._accum(g * deriv(xd))

    return Tensor._make(0.5 * xd * (1.0 + t), (x,), backward)


def sigmoid(x):
    x = _lift(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor._make(y, (x,), lambda g: x._accum(g * y * (1.0 - y)))


def tanh(x):
    x = _lift(x)
    y = np.tanh(x.data)
    return Tensor._make(y, (x,), lambda g: x._accum(g * (1.0 - y * y)))


def relu(x):
    x = _lift(x)
    pos = x.data > 0
    return Tensor._make(np.where(pos, x.data, 0.0), (x,), lambda g: x._accum(g * pos))


def mean_pool_time(x, mask=None):
    """Average over the temporal axis (second to last).

    ``x`` is ``[L, d]`` or batched ``[..., L, d]``. With ``mask`` (``[..., L]``
    booleans) only the kept rows are averaged.
    """
    x = _lift(x)
    if x.ndim < 2:
        raise DimensionError(f"mean_pool_time expects [L, d], got {x.shape}")
    if x.shape[-2] == 0:
        raise EmptySequenceError("mean_pool_time: sequence has no rows")
    if mask is None:
        return x.mean(axis=-2)
    w = np.asarray(mask, dtype=np.float64)
    counts = w.sum(axis=-1, keepdims=True)
    if np.any(counts == 0):
        raise EmptySequenceError("mean_pool_time: a masked sequence has no rows")
    w = (w / counts)[..., None]
    return (x * w).sum(axis=-2)


def concat(tensors, axis=-1):
    tensors = [_lift(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            t._accum(part)

    return Tensor._make(out, tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            t._accum(np.take(g, i, axis=axis))

    return Tensor._make(out, tuple(tensors), backward)


def embedding(table, ids):
    """Row lookup ``table[ids]``; gradient scatters back with accumulation."""
    ids = np.asarray(ids, dtype=np.int64)
    table = _lift(table)

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        table._accum(full)

    return Tensor._make(table.data[ids], (table,), backward)


def cross_entropy(logits, targets):
    """Mean softmax cross-entropy over the leading axis."""
    logits = _lift(logits)
    targets = np.asarray(targets, dtype=np.int64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = logits.shape[0]
    rows = np.arange(n)
    loss = -logp[rows, targets].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, targets] -= 1.0
        logits._accum(g * p / n)

    return Tensor._make(loss, (logits,), backward)


def mse(pred, target):
    pred = _lift(pred)
    diff = pred - np.asarray(target, dtype=np.float64)
    return (diff * diff).mean()


# ---------------------------------------------------------------------------
# parameters and optimisation
# ---------------------------------------------------------------------------


class ParamStore:
    """Ordered name -> trainable Tensor map."""

    def __init__(self):
        self._entries = OrderedDict()

    def add(self, name, data):
        if name in self._entries:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self._entries[name] = t
        return t

    def bind(self, name, tensor):
        """Insert or replace an entry with an existing Tensor (used by gradient checks)."""
        self._entries[name] = tensor
        return tensor

    def __getitem__(self, name):
        return self._entries[name]

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def names(self):
        return list(self._entries)

    def items(self):
        return self._entries.items()

    def values(self):
        return self._entries.values()

    def count(self, prefix=""):
        return int(sum(t.size for n, t in self._entries.items() if n.startswith(prefix)))

    def zero_grad(self):
        for t in self._entries.values():
            t.grad = None

    def state_dict(self):
        return OrderedDict((n, t.data.copy()) for n, t in self._entries.items())

    def load_state_dict(self, state):
        for n, t in self._entries.items():
            t.data = np.array(state[n], dtype=np.float64)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state):
    """One bias-corrected Adam update over every parameter, then zero the grads."""
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"adam_step: parameter {name!r} has no gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = np.zeros_like(p.data)
    return params, state
