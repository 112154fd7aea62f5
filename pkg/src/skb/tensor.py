"""Dense tensors with reverse-mode automatic differentiation.

Every forward operation records parent links and a vector-Jacobian callback;
``Tensor.backward`` replays that tape in reverse topological order and
accumulates gradients into leaf tensors. Arrays are float32 by default.
Finite-difference gradient checking needs float64 inputs, single precision
is too noisy for it.
"""

from __future__ import annotations

import contextlib
import math
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "ShapeError",
    "no_grad",
    "zero_grads",
    "matmul",
    "softmax",
    "log_softmax",
    "layer_norm",
    "gelu",
    "relu",
    "concat",
    "dropout",
    "l1_loss",
    "cross_entropy",
]

_FLOAT_DTYPES = (np.float32, np.float64)
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715

_grad_enabled = True


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation, data prep)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def _as_float_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in _FLOAT_DTYPES:
        return arr.astype(np.float32)
    return arr


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.requires_grad = bool(requires_grad) and _grad_enabled
        self.grad = None
        self._parents = ()
        self._vjp = None

    # -- construction helpers -------------------------------------------

    @staticmethod
    def _make(data, parents, vjp):
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        # Constants adopt this tensor's dtype so python floats cannot
        # silently upcast a float32 graph to float64.
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    # -- basic properties -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self):
        return self.transpose()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self.data, other.data
        return Tensor._make(
            a + b,
            (self, other),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        a, b = self.data, other.data
        return Tensor._make(
            a - b,
            (self, other),
            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        )

    def __rsub__(self, other):
        return self._coerce(other).__sub__(self)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self.data, other.data
        return Tensor._make(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self.data, other.data
        return Tensor._make(
            a / b,
            (self, other),
            lambda g: (
                _unbroadcast(g / b, a.shape),
                _unbroadcast(-g * a / (b * b), b.shape),
            ),
        )

    def __rtruediv__(self, other):
        return self._coerce(other).__truediv__(self)

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        x = self.data
        if exponent == 2:
            return Tensor._make(x * x, (self,), lambda g: (g * 2.0 * x,))
        return Tensor._make(
            x**exponent,
            (self,),
            lambda g: (g * exponent * x ** (exponent - 1),),
        )

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(
                f"matmul requires 2-D (or batched) operands, got shapes {a.shape} and {b.shape}"
            )
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(
                f"matmul inner dimensions disagree: {a.shape} @ {b.shape}"
            )
        if b.ndim == 2 and a.ndim > 2:
            # Fold batch dims into one GEMM instead of many small ones.
            a2 = a.reshape(-1, a.shape[-1])
            out = (a2 @ b).reshape(*a.shape[:-1], b.shape[-1])

            def vjp_folded(g):
                g2 = g.reshape(-1, g.shape[-1])
                return (g2 @ b.T).reshape(a.shape), a2.T @ g2

            return Tensor._make(out, (self, other), vjp_folded)

        def vjp(g):
            ga = _unbroadcast(g @ b.swapaxes(-1, -2), a.shape)
            gb = _unbroadcast(a.swapaxes(-1, -2) @ g, b.shape)
            return ga, gb

        return Tensor._make(a @ b, (self, other), vjp)

    # -- reductions / shaping ----------------------------------------------

    def sum(self, axis=None, keepdims=False):
        x = self.data

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, x.shape),)
            gg = g
            if not keepdims:
                ax = axis if isinstance(axis, tuple) else (axis,)
                for a in sorted(a % x.ndim for a in ax):
                    gg = np.expand_dims(gg, a)
            return (np.broadcast_to(gg, x.shape),)

        return Tensor._make(x.sum(axis=axis, keepdims=keepdims), (self,), vjp)

    def mean(self, axis=None, keepdims=False):
        x = self.data
        if axis is None:
            count = x.size
        else:
            ax = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([x.shape[a] for a in ax]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        x = self.data
        return Tensor._make(
            x.reshape(shape), (self,), lambda g: (g.reshape(x.shape),)
        )

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        ax = axes if axes else None
        out = self.data.transpose(ax)
        if ax is None:
            vjp = lambda g: (g.transpose(),)
        else:
            inv = tuple(np.argsort(ax))
            vjp = lambda g: (g.transpose(inv),)
        return Tensor._make(out, (self,), vjp)

    def __getitem__(self, idx):
        x = self.data

        def vjp(g):
            out = np.zeros_like(x)
            if _is_fancy_index(idx):
                np.add.at(out, idx, g)
            else:
                out[idx] += g
            return (out,)

        return Tensor._make(x[idx], (self,), vjp)

    # -- elementwise functions ----------------------------------------------

    def exp(self):
        y = np.exp(self.data)
        return Tensor._make(y, (self,), lambda g: (g * y,))

    def log(self):
        x = self.data
        return Tensor._make(np.log(x), (self,), lambda g: (g / x,))

    def tanh(self):
        y = np.tanh(self.data)
        return Tensor._make(y, (self,), lambda g: (g * (1.0 - y * y),))

    def sqrt(self):
        y = np.sqrt(self.data)
        return Tensor._make(y, (self,), lambda g: (g * 0.5 / y,))

    def abs(self):
        x = self.data
        return Tensor._make(np.abs(x), (self,), lambda g: (g * np.sign(x),))

    # -- backward ------------------------------------------------------------

    def backward(self):
        """Populate ``grad`` of every reachable leaf that requires grad.

        Interior gradients are recomputed fresh on every call, so repeated
        calls without zeroing accumulate exactly additive leaf gradients.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg


def _is_fancy_index(idx):
    if isinstance(idx, tuple):
        return any(isinstance(e, (np.ndarray, list)) for e in idx)
    return isinstance(idx, (np.ndarray, list))


class Parameter(Tensor):
    """A named leaf tensor whose gradient buffer is always allocated."""

    __slots__ = ("name",)

    def __init__(self, data, name, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def zero_grads(params: Iterable[Parameter]):
    for p in params:
        p.grad = np.zeros_like(p.data)


# -- module-level operations ---------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(a, Tensor):
        a = Tensor(a)
    return a @ b


def softmax(x: Tensor, axis=-1) -> Tensor:
    """Numerically stabilized softmax along ``axis``."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._make(s, (x,), vjp)


def log_softmax(x: Tensor, axis=-1) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def vjp(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return Tensor._make(y, (x,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize the last axis (biased variance), then gain and bias."""
    if x.shape[-1] < 2:
        raise ShapeError(f"layer_norm needs a last-axis extent >= 2, got {x.shape}")
    if not isinstance(x, Tensor):
        x = Tensor(x)
    d = x.data
    mu = d.mean(axis=-1, keepdims=True)
    centered = d - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_sigma
    gdata, bdata = gain.data, bias.data

    def vjp(g):
        dxhat = g * gdata
        dx = inv_sigma * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, _unbroadcast(g * xhat, gdata.shape), _unbroadcast(g, bdata.shape)

    return Tensor._make(xhat * gdata + bdata, (x, gain, bias), vjp)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation.

    0.5 x (1 + tanh(c (x + a x^3))) with c = sqrt(2/pi), a = 0.044715.
    Written with in-place temporaries; this runs on the widest activations.
    """
    if not isinstance(x, Tensor):
        x = Tensor(x)
    d = x.data
    u = d * d
    u *= d
    u *= _GELU_A
    u += d
    u *= _GELU_C
    t = np.tanh(u)

    def vjp(g):
        du = d * d
        du *= 3.0 * _GELU_A
        du += 1.0
        du *= _GELU_C          # d/dx of c (x + a x^3)
        sech2 = t * t
        np.subtract(1.0, sech2, out=sech2)
        sech2 *= du
        sech2 *= d
        sech2 += 1.0 + t
        sech2 *= 0.5
        sech2 *= g
        return (sech2,)

    out = 1.0 + t
    out *= d
    out *= 0.5
    return Tensor._make(out, (x,), vjp)


def relu(x: Tensor) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    d = x.data
    return Tensor._make(np.maximum(d, 0.0), (x,), lambda g: (g * (d > 0),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp
    )


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. Identity when ``p <= 0`` or no generator is given."""
    if p <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return x * Tensor(keep)


def l1_loss(pred: Tensor, target, mask) -> Tensor:
    """Mean absolute error over entries where ``mask == 1``; 0 if none."""
    target_arr = target.data if isinstance(target, Tensor) else np.asarray(target)
    mask_arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if pred.shape != target_arr.shape or pred.shape != mask_arr.shape:
        raise ShapeError(
            f"l1_loss shapes disagree: pred {pred.shape}, target {target_arr.shape}, mask {mask_arr.shape}"
        )
    count = float(mask_arr.sum())
    if count == 0:
        return Tensor(np.zeros((), dtype=pred.dtype))
    mask_arr = mask_arr.astype(pred.dtype, copy=False)
    diff = (pred - Tensor(target_arr.astype(pred.dtype, copy=False))).abs()
    return (diff * Tensor(mask_arr)).sum() * (1.0 / count)


def cross_entropy(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean negative log-softmax probability of the true class over masked rows."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [n, classes] logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        bad = labels[(labels < 0) | (labels >= c)][0]
        raise IndexError(f"label {bad} out of range for {c} classes")
    if mask is None:
        mask_arr = np.ones(n, dtype=logits.dtype)
    else:
        mask_arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
        if mask_arr.shape != (n,):
            raise ShapeError(f"mask shape {mask_arr.shape} does not match {n} rows")
        mask_arr = mask_arr.astype(logits.dtype, copy=False)
    count = float(mask_arr.sum())
    if count == 0:
        return Tensor(np.zeros((), dtype=logits.dtype))
    picked = log_softmax(logits, axis=-1)[np.arange(n), labels]
    return -(picked * Tensor(mask_arr)).sum() * (1.0 / count)
