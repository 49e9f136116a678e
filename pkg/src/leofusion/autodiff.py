"""Dense float64 tensors with tape-based reverse-mode differentiation.

Usage::

    with Tape() as tape:
        w = Tensor(np.ones((3, 2)), requires_grad=True)
        loss = (x @ w).sum()
    grads = tape.backward(loss)       # {w: dloss/dw}

Operations record onto the innermost active tape whenever one of their inputs
requires a gradient. ``backward`` walks the records in exact reverse order and
can be called once per tape.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import AllMaskedRow, NonScalarLoss, ShapeMismatch, TapeConsumed

_TAPES: list["Tape"] = []


class Tape:
    def __init__(self):
        self.records: list[tuple] = []
        self.consumed = False

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: "Tensor") -> dict["Tensor", np.ndarray]:
        """Gradients of a scalar ``loss`` for every leaf that requires them.

        Leaf ``.grad`` attributes are set as a side effect.
        """
        if self.consumed:
            raise TapeConsumed("backward() already ran on this tape; record a new one")
        if loss.value.size != 1:
            raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        leaves: dict[int, Tensor] = {}
        if loss._leaf():
            leaves[id(loss)] = loss
        for out, inputs, pullback in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = pullback(g)
            for t, gi in zip(inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if t._leaf():
                    leaves[key] = t
        self.records.clear()
        result = {}
        for key, t in leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(t.value)
            t.grad = g
            result[t] = g
        return result


def _active_tape():
    return _TAPES[-1] if _TAPES else None


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "_is_output", "name", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._is_output = False
        self.name = name

    def _leaf(self):
        return self.requires_grad and not self._is_output

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def numpy(self):
        return self.value

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, o):
        return matmul(self, o)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def custom_op(value, inputs, pullback) -> Tensor:
    """Wrap a forward ``value`` computed from ``inputs`` with a hand-written pullback.

    ``pullback(grad_out)`` returns one gradient (or None) per input.
    """
    out = Tensor(value)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._is_output = True
        tape.records.append((out, tuple(inputs), pullback))
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")
    sa, sb = a.shape, b.shape
    return custom_op(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")
    sa, sb = a.shape, b.shape
    return custom_op(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")
    av, bv = a.value, b.value
    return custom_op(
        av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "div")
    av, bv = a.value, b.value
    out = av / bv
    return custom_op(
        out, (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatch(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    av, bv = a.value, b.value

    def pullback(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return custom_op(av @ bv, (a, b), pullback)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def pullback(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return custom_op(a.value.sum(axis=axis, keepdims=keepdims), (a,), pullback)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def max_(a, axis) -> Tensor:
    """Maximum along one axis; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    idx = np.argmax(a.value, axis=axis)
    out = np.take_along_axis(a.value, np.expand_dims(idx, axis), axis).squeeze(axis)

    def pullback(g):
        ga = np.zeros_like(a.value)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (ga,)

    return custom_op(out, (a,), pullback)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            i != ax and s != r for i, (s, r) in enumerate(zip(t.shape, ref))
        ):
            raise ShapeMismatch(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def pullback(g):
        return tuple(np.split(g, splits, axis=ax))

    return custom_op(np.concatenate([t.value for t in tensors], axis=ax), tensors, pullback)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    old = a.shape
    return custom_op(out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return custom_op(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def swapaxes(a, i, j) -> Tensor:
    axes = list(range(as_tensor(a).ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def pullback(g):
        ga = np.zeros_like(a.value)
        np.add.at(ga, idx, g)
        return (ga,)

    return custom_op(a.value[idx], (a,), pullback)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return custom_op(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return custom_op(np.log(av), (a,), lambda g: (g / av,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return custom_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.value)
    return custom_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    out = np.log1p(np.exp(-np.abs(av))) + np.maximum(av, 0.0)
    return custom_op(out, (a,), lambda g: (g * _sigmoid(av),))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    av = a.value
    pos = av > 0
    return custom_op(np.where(pos, av, slope * av), (a,), lambda g: (np.where(pos, g, slope * g),))


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    av = a.value
    pos = av > 0
    neg_part = alpha * np.expm1(np.minimum(av, 0.0))
    out = np.where(pos, av, neg_part)
    return custom_op(out, (a,), lambda g: (np.where(pos, g, g * (neg_part + alpha)),))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return custom_op(np.abs(av), (a,), lambda g: (g * np.sign(av),))


def smooth_l1(a, beta: float = 1.0) -> Tensor:
    """Elementwise 0.5 d^2 / beta for |d| < beta, |d| - 0.5 beta otherwise."""
    a = as_tensor(a)
    d = a.value
    small = np.abs(d) < beta
    out = np.where(small, 0.5 * d * d / beta, np.abs(d) - 0.5 * beta)
    return custom_op(out, (a,), lambda g: (g * np.where(small, d / beta, np.sign(d)),))


def softmax_masked(a, mask=None, axis: int = -1) -> Tensor:
    """Softmax over ``axis`` restricted to entries where ``mask`` is True.

    Masked entries come out as exactly 0 and receive no gradient.
    """
    a = as_tensor(a)
    x = a.value
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not np.all(mask.any(axis=axis)):
        raise AllMaskedRow("softmax row with no valid entry")
    shifted = np.where(mask, x, -np.inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    out = e / e.sum(axis=axis, keepdims=True)

    def pullback(g):
        return (out * (g - (out * g).sum(axis=axis, keepdims=True)),)

    return custom_op(out, (a,), pullback)


def dropout_mask(shape, rate: float, seed: int, layer: int, step: int) -> np.ndarray:
    """Inverted-dropout scale mask from a counter-based (Philox) stream."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, ((layer & 0xFFFFFFFF) << 32) | (step & 0xFFFFFFFF)],
                   dtype=np.uint64)
    gen = np.random.Generator(np.random.Philox(key=key))
    keep = gen.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(a, rate: float, *, training: bool, seed: int = 0, layer: int = 0, step: int = 0) -> Tensor:
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    m = dropout_mask(a.shape, rate, seed, layer, step)
    return custom_op(a.value * m, (a,), lambda g: (g * m,))


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    x = a.value
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    gv = gamma.value

    def pullback(g):
        gx_hat = g * gv
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return custom_op(xhat * gv + beta.value, (a, gamma, beta), pullback)


def glorot(rng, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape or (fan_in, fan_out))


def numerical_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        fp = f(x)
        x[i] = orig - eps
        fm = f(x)
        x[i] = orig
        g[i] = (fp - fm) / (2 * eps)
    return g
