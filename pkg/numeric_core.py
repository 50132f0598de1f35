# numeric_core.py
"""Tensors with reverse-mode gradients over numpy arrays.

Each op returns a new Tensor that keeps references to its inputs and a closure
pushing the output gradient back into them (the micrograd layout, vectorized).
The graph is recorded implicitly by those references; ``backward`` orders it
topologically and runs every closure exactly once, last op first.

Elementwise ops broadcast only over leading batch dimensions: the shorter shape
must be a suffix of the longer one.
"""
from __future__ import annotations

import logging
import math
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from errors import DimensionError, NumericError

logger = logging.getLogger(__name__)

LAYER_NORM_EPS = 1e-5
DEFAULT_DTYPE = np.float64

# relu masks of the loss being evaluated, collected only inside grad_check
_relu_masks: Optional[List[np.ndarray]] = None


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype.kind != 'f':
        arr = arr.astype(DEFAULT_DTYPE)
    return arr


def _check_broadcast(a_shape, b_shape, op):
    if a_shape == b_shape:
        return
    short, long_ = (a_shape, b_shape) if len(a_shape) < len(b_shape) else (b_shape, a_shape)
    if len(short) < len(long_) and tuple(long_[len(long_) - len(short):]) == tuple(short):
        return
    raise DimensionError(f"{op}: incompatible shapes {a_shape} and {b_shape}")


def _unbroadcast(grad, shape):
    if grad.shape == tuple(shape):
        return grad
    return grad.reshape((-1,) + tuple(shape)).sum(axis=0)


class Tensor:
    """A value in the computation graph."""

    __slots__ = ('data', 'grad', 'requires_grad', 'name', '_parents', '_backward')
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name='', _parents=(), _backward=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    def __repr__(self):
        label = f"{self.name}: " if self.name else ""
        return f"Tensor({label}shape={self.shape})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad += grad

    # --- graph traversal ---

    def _topological_order(self):
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = self._topological_order()
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # intermediate gradients are not needed once propagated
        for node in order:
            if node._backward is not None:
                node.grad = None

    # --- operators ---

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return add(self, neg(_lift(other, self)))

    def __rsub__(self, other):
        return add(_lift(other, self), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_lift(other, self), self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by constants")
        return mul(self, 1.0 / np.asarray(other, dtype=self.data.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def relu(self):
        return relu(self)

    def tanh(self):
        return tanh(self)

    def sqrt(self):
        return sqrt(self)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class Param(Tensor):
    """A learnable tensor; its ``grad`` always exists and has the same shape."""

    __slots__ = ()

    def __init__(self, data, name=''):
        super().__init__(data, requires_grad=True, name=name)
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Param({self.name}, shape={self.shape})"

    def zero_grad(self):
        self.grad[...] = 0.0

    def _accumulate(self, grad):
        self.grad += grad


def _lift(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else None
    return Tensor(_as_array(value, dtype))


def as_tensor(value, like=None):
    """Wrap arrays and scalars as constant tensors; tensors pass through unchanged."""
    return _lift(value, like)


def _result(data, parents, backward):
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


# --- elementwise ---

def add(a, b):
    a = _lift(a)
    b = _lift(b, a)
    _check_broadcast(a.shape, b.shape, 'add')

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward)


def neg(a):
    a = _lift(a)
    def backward(g):
        a._accumulate(-g)

    return _result(-a.data, (a,), backward)


def mul(a, b):
    a = _lift(a)
    b = _lift(b, a)
    _check_broadcast(a.shape, b.shape, 'mul')

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward)


def relu(a):
    a = _lift(a)
    mask = a.data > 0
    if _relu_masks is not None:
        _relu_masks.append(mask)

    def backward(g):
        a._accumulate(g * mask)

    return _result(np.where(mask, a.data, 0.0).astype(a.data.dtype), (a,), backward)


def tanh(a):
    a = _lift(a)
    out = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out * out))

    return _result(out, (a,), backward)


def sqrt(a):
    a = _lift(a)
    out = np.sqrt(a.data)

    def backward(g):
        a._accumulate(g * 0.5 / out)

    return _result(out, (a,), backward)


# --- reductions and shape ---

def reduce_sum(a, axis=None, keepdims=False):
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _result(out, (a,), backward)


def reduce_mean(a, axis=None, keepdims=False):
    a = _lift(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(reduce_sum(a, axis, keepdims), 1.0 / count)


def reshape(a, shape):
    a = _lift(a)
    original = a.shape

    def backward(g):
        a._accumulate(g.reshape(original))

    return _result(a.data.reshape(shape), (a,), backward)


def transpose(a, axes):
    a = _lift(a)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accumulate(g.transpose(inverse))

    return _result(a.data.transpose(axes), (a,), backward)


def take(a, index):
    """Basic or advanced indexing; repeated indices accumulate."""
    a = _lift(a)
    out = np.array(a.data[index])

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        a._accumulate(full)

    return _result(out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis=0):
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, bounds, axis=axis)):
            if t.requires_grad:
                t._accumulate(part)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


# --- linear algebra ---

def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dimensions differ in {a.shape} and {b.shape}")
    if a.ndim == 2 and b.ndim > 2:
        raise DimensionError(f"matmul: batch dimensions differ in {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _result(a.data @ b.data, (a, b), backward)


def lift(x, embedding):
    """Scale per-feature embedding rows by feature values: out[..., j, :] = x[..., j] * embedding[j]."""
    x, embedding = _lift(x), _lift(embedding)
    if embedding.ndim != 2 or x.shape[-1] != embedding.shape[0]:
        raise DimensionError(f"lift: incompatible shapes {x.shape} and {embedding.shape}")
    out = x.data[..., None] * embedding.data
    d, width = embedding.shape

    def backward(g):
        if x.requires_grad:
            x._accumulate((g * embedding.data).sum(axis=-1))
        if embedding.requires_grad:
            embedding._accumulate((g * x.data[..., None]).reshape(-1, d, width).sum(axis=0))

    return _result(out, (x, embedding), backward)


def dense(x, weight, bias):
    """xW + b."""
    if weight.ndim != 2 or bias.shape != (weight.shape[1],):
        raise DimensionError(f"dense: weight {weight.shape} and bias {bias.shape} do not conform")
    return add(matmul(x, weight), bias)


def dense_stack(x, params: Dict[str, Param], prefix, return_pre_activations=False):
    """Dense layers ``{prefix}.l{i}.w/.b`` with relu between them, linear output."""
    pre_activations = []
    i = 0
    h = x
    while f"{prefix}.l{i}.w" in params:
        if i > 0:
            pre_activations.append(h)
            h = relu(h)
        h = dense(h, params[f"{prefix}.l{i}.w"], params[f"{prefix}.l{i}.b"])
        i += 1
    if i == 0:
        raise DimensionError(f"dense_stack: no layers under prefix '{prefix}'")
    if return_pre_activations:
        return h, pre_activations
    return h


# --- normalizations ---

def softmax_rows(z):
    """Softmax over the last axis with max subtraction."""
    z = _lift(z)
    shifted = z.data - z.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        z._accumulate(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _result(s, (z,), backward)


def layer_norm(x, gain, shift, eps=LAYER_NORM_EPS):
    """Normalize the last axis to mean 0 and variance 1, then apply gain and shift."""
    x = _lift(x)
    d = x.shape[-1]
    if d < 1 or gain.shape != (d,) or shift.shape != (d,):
        raise DimensionError(f"layer_norm: input {x.shape} with gain {gain.shape} and shift {shift.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + shift.data

    def backward(g):
        if x.requires_grad:
            gx = g * gain.data
            x._accumulate(inv_std * (gx - gx.mean(axis=-1, keepdims=True)
                                     - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if shift.requires_grad:
            shift._accumulate(g.reshape(-1, d).sum(axis=0))

    return _result(out, (x, gain, shift), backward)


# --- parameters ---

def glorot_uniform(rng, fan_in, fan_out, shape=None, dtype=DEFAULT_DTYPE):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out)).astype(dtype)


def init_dense_stack(rng, prefix, sizes: Sequence[int], dtype=DEFAULT_DTYPE) -> Dict[str, Param]:
    """Glorot weights and zero biases for ``sizes[0] -> ... -> sizes[-1]``."""
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"{prefix}.l{i}.w"] = Param(glorot_uniform(rng, fan_in, fan_out, dtype=dtype), f"{prefix}.l{i}.w")
        params[f"{prefix}.l{i}.b"] = Param(np.zeros(fan_out, dtype=dtype), f"{prefix}.l{i}.b")
    return params


def zero_grad(params: Iterable[Param]):
    for p in params:
        p.zero_grad()


def parameter_count(params: Dict[str, Param]) -> int:
    return int(sum(p.data.size for p in params.values()))


def snapshot(params: Dict[str, Param]) -> Dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.items()}


def restore(params: Dict[str, Param], values: Dict[str, np.ndarray]):
    for name, p in params.items():
        p.data[...] = values[name]


def _evaluate_with_masks(f):
    global _relu_masks
    _relu_masks = []
    try:
        value = float(f().data)
        return value, _relu_masks
    finally:
        _relu_masks = None


def _same_masks(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(f: Callable[[], Tensor], params: Sequence[Param], h=1e-5, activity=1e-8) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds the scalar loss from the current parameter values. An entry is
    skipped when its numeric derivative is at most ``activity`` in magnitude (dead
    units), or when perturbing it by +h or -h flips any relu mask relative to the
    unperturbed loss: the central difference then straddles a kink and does not
    estimate the derivative at the point. Relative error is
    |analytic - numeric| / max(1, |numeric|).
    """
    params = list(params)
    zero_grad(params)
    loss = f()
    if not np.all(np.isfinite(loss.data)):
        raise NumericError("grad_check: loss is not finite at the evaluation point")
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    _, base_masks = _evaluate_with_masks(f)

    worst = 0.0
    kinks = 0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        a_flat = a.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up, up_masks = _evaluate_with_masks(f)
            flat[i] = original - h
            down, down_masks = _evaluate_with_masks(f)
            flat[i] = original
            if not (math.isfinite(up) and math.isfinite(down)):
                raise NumericError(f"grad_check: loss not finite while perturbing {p.name}[{i}]")
            if not (_same_masks(base_masks, up_masks) and _same_masks(base_masks, down_masks)):
                kinks += 1
                continue
            numeric = (up - down) / (2.0 * h)
            if abs(numeric) <= activity:
                continue
            worst = max(worst, abs(a_flat[i] - numeric) / max(1.0, abs(numeric)))
    zero_grad(params)
    logger.debug(f"grad_check over {sum(p.data.size for p in params)} entries ({kinks} at relu kinks): "
                 f"max relative error {worst:.3e}")
    return float(worst)
