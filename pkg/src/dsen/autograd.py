"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation records its parents and a backward closure on the produced
node; calling ``backward()`` on a scalar replays the implicit tape in reverse
topological order, summing gradient contributions from all consumers.
Values are immutable once produced; gradients accumulate in ``.grad``.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError, DimensionError

__all__ = [
    "Tensor",
    "tensor",
    "concat",
    "stack",
    "grad_check",
    "no_grad",
]

_grad_enabled = True


class no_grad:
    """Context manager disabling tape recording (inference-only forwards)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense row-major array of float64 values, optionally tracked for autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = (requires_grad or any(p.requires_grad for p in _parents)) \
            and _grad_enabled
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    # -- construction helpers ------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other)
        out = Tensor(self.data + other.data, _parents=(self, other))
        if out.requires_grad:
            def _back(g):
                return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))
            out._backward = _back
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: (-g,)
        return out

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)
        out = Tensor(self.data * other.data, _parents=(self, other))
        if out.requires_grad:
            a, b = self.data, other.data
            def _back(g):
                return (_unbroadcast(g * b, self.shape), _unbroadcast(g * a, other.shape))
            out._backward = _back
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        out = Tensor(self.data / other.data, _parents=(self, other))
        if out.requires_grad:
            a, b = self.data, other.data
            def _back(g):
                return (_unbroadcast(g / b, self.shape),
                        _unbroadcast(-g * a / (b * b), other.shape))
            out._backward = _back
        return out

    def __matmul__(self, other):
        other = Tensor._lift(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise DimensionError(f"matmul requires ndim >= 2 operands, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
        out = Tensor(np.matmul(a, b), _parents=(self, other))
        if out.requires_grad:
            def _back(g):
                ga = _unbroadcast(np.matmul(g, b.swapaxes(-1, -2)), a.shape)
                gb = _unbroadcast(np.matmul(a.swapaxes(-1, -2), g), b.shape)
                return (ga, gb)
            out._backward = _back
        return out

    # -- shape manipulation -----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor(self.data.reshape(shape), _parents=(self,))
        if out.requires_grad:
            orig = self.shape
            out._backward = lambda g: (g.reshape(orig),)
        return out

    def swapaxes(self, a: int, b: int):
        out = Tensor(self.data.swapaxes(a, b), _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: (g.swapaxes(a, b),)
        return out

    def __getitem__(self, idx):
        out = Tensor(self.data[idx], _parents=(self,))
        if out.requires_grad:
            shape = self.shape
            def _back(g):
                full = np.zeros(shape)
                np.add.at(full, idx, g)
                return (full,)
            out._backward = _back
        return out

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,))
        if out.requires_grad:
            shape = self.shape
            def _back(g):
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                return (np.broadcast_to(g, shape).copy(),)
            out._backward = _back
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise nonlinearities ---------------------------------------------

    def sigmoid(self):
        x = self.data
        # sign-split form: never exponentiates a large positive argument
        pos = x >= 0
        s = np.empty_like(x)
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        # keep the open (0, 1) range even when exp underflows/saturates
        np.clip(s, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0), out=s)
        out = Tensor(s, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: (g * s * (1.0 - s),)
        return out

    def tanh(self):
        t = np.asarray(np.tanh(self.data))
        np.clip(t, np.nextafter(-1.0, 0.0), np.nextafter(1.0, 0.0), out=t)
        out = Tensor(t, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: (g * (1.0 - t * t),)
        return out

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), _parents=(self,))
        if out.requires_grad:
            mask = self.data > 0
            out._backward = lambda g: (g * mask,)
        return out

    def softmax(self, axis: int = -1):
        x = self.data
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=axis, keepdims=True)
        out = Tensor(s, _parents=(self,))
        if out.requires_grad:
            def _back(g):
                dot = (g * s).sum(axis=axis, keepdims=True)
                return (s * (g - dot),)
            out._backward = _back
        return out

    def log(self):
        # out-of-domain values become nan/-inf and are caught by callers
        with np.errstate(invalid="ignore", divide="ignore"):
            out = Tensor(np.log(self.data), _parents=(self,))
        if out.requires_grad:
            x = self.data
            out._backward = lambda g: (g / x,)
        return out

    def exp(self):
        e = np.exp(self.data)
        out = Tensor(e, _parents=(self,))
        if out.requires_grad:
            out._backward = lambda g: (g * e,)
        return out

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient passes only where unclamped."""
        out = Tensor(np.clip(self.data, lo, hi), _parents=(self,))
        if out.requires_grad:
            mask = (self.data > lo) & (self.data < hi)
            out._backward = lambda g: (g * mask,)
        return out

    # -- backward pass ------------------------------------------------------------

    def backward(self):
        if self.size != 1:
            raise ContractError(f"backward seed must be scalar, got shape {self.shape}")
        order = []
        seen = set()
        stack_ = [(self, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack_.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad = parent.grad + g

    def zero_grad(self):
        self.grad = None


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [Tensor._lift(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 _parents=tuple(tensors))
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        out._backward = lambda g: tuple(np.split(g, splits, axis=axis))
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        t = Tensor._lift(t)
        new_shape = list(t.shape)
        new_shape.insert(axis if axis >= 0 else len(new_shape) + 1 + axis, 1)
        expanded.append(t.reshape(new_shape))
    return concat(expanded, axis=axis)


def grad_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` is a zero-argument callable returning a scalar Tensor built from the
    `params` list of Tensors (each with requires_grad=True).
    """
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise ContractError("function value is not finite at the given parameters")
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(f().data)
            flat[i] = orig - eps
            lo = float(f().data)
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise ContractError("function not evaluable at perturbed parameters")
            numeric = (hi - lo) / (2.0 * eps)
            ai = a.reshape(-1)[i]
            err = abs(ai - numeric) / max(abs(ai), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
