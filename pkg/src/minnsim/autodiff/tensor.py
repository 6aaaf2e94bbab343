"""Reverse-mode automatic differentiation over real numpy arrays.

Every value in the computation graph is a real tensor; complex quantities
are composed from (re, im) pairs one level up (see complex_ops). Gradients
are plain real gradients of a real scalar loss, so every rule here is
checkable against central finite differences.
"""

import numpy as np

from ..errors import GraphError, ShapeError

_DEFAULT_DTYPE = np.float64


def set_default_dtype(dtype):
    """Set the dtype used for newly created leaf/constant tensors."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise TypeError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


class Tensor:
    """A node of the reverse-mode graph: values, grad, and a backward rule.

    Graph discipline: exactly one backward() per graph, and leaf gradients
    must be cleared (zero_grad) before the next backward. Stale gradients
    raise instead of silently accumulating.
    """

    __slots__ = ("values", "grad", "requires_grad", "parents", "_backward")

    def __init__(self, values, requires_grad=False, parents=(), backward=None):
        if isinstance(values, Tensor):
            raise TypeError("Tensor values must be array-like, not Tensor")
        arr = np.asarray(values)
        if np.iscomplexobj(arr):
            raise TypeError("complex values are not allowed; use ComplexMatrix")
        if not parents:
            # leaf or constant: normalize to the configured float dtype
            arr = np.asarray(arr, dtype=_DEFAULT_DTYPE)
        self.values = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(p for p in parents if p.requires_grad)
        self._backward = backward

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate grad = d(self)/d(node) for every reachable node.

        self must be scalar. Raises GraphError if any reachable node still
        carries a gradient from a previous backward pass.
        """
        if self.values.size != 1:
            raise GraphError(
                f"backward() requires a scalar loss, got shape {self.values.shape}"
            )
        order = self._toposort()
        stale = [n for n in order if n.grad is not None]
        if stale:
            raise GraphError(
                "gradients from a previous backward() are still present; "
                "call zero_grad() on the parameters first"
            )
        for node in order:
            node.grad = np.zeros_like(node.values)
        self.grad = np.ones_like(self.values)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    def _toposort(self):
        order, visited, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in visited:
                    stack.append((p, False))
        return order

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _lift(x, like=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(values, parents, backward):
    rg = any(p.requires_grad for p in parents)
    return Tensor(values, requires_grad=rg, parents=parents, backward=backward if rg else None)


# -- elementwise arithmetic (numpy broadcasting supported) -------------------


def add(a, b):
    a, b = _lift(a), _lift(b)
    out = _make(a.values + b.values, (a, b), None)

    def backward():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad, a.values.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(out.grad, b.values.shape)

    out._backward = backward
    return out


def sub(a, b):
    a, b = _lift(a), _lift(b)
    out = _make(a.values - b.values, (a, b), None)

    def backward():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad, a.values.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(out.grad, b.values.shape)

    out._backward = backward
    return out


def mul(a, b):
    a, b = _lift(a), _lift(b)
    out = _make(a.values * b.values, (a, b), None)

    def backward():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad * b.values, a.values.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(out.grad * a.values, b.values.shape)

    out._backward = backward
    return out


def div(a, b):
    a, b = _lift(a), _lift(b)
    out = _make(a.values / b.values, (a, b), None)

    def backward():
        if a.requires_grad:
            a.grad += _unbroadcast(out.grad / b.values, a.values.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(-out.grad * a.values / (b.values * b.values), b.values.shape)

    out._backward = backward
    return out


def neg(a):
    a = _lift(a)
    out = _make(-a.values, (a,), None)

    def backward():
        if a.requires_grad:
            a.grad -= out.grad

    out._backward = backward
    return out


# -- elementwise functions ----------------------------------------------------


def _unary(a, fwd, dfwd):
    a = _lift(a)
    y = fwd(a.values)
    out = _make(y, (a,), None)

    def backward():
        if a.requires_grad:
            a.grad += out.grad * dfwd(a.values, y)

    out._backward = backward
    return out


def exp(a):
    return _unary(a, np.exp, lambda x, y: y)


def log(a):
    return _unary(a, np.log, lambda x, y: 1.0 / x)


def sqrt(a):
    return _unary(a, np.sqrt, lambda x, y: 0.5 / y)


def cos(a):
    return _unary(a, np.cos, lambda x, y: -np.sin(x))


def sin(a):
    return _unary(a, np.sin, lambda x, y: np.cos(x))


def arctan(a):
    return _unary(a, np.arctan, lambda x, y: 1.0 / (1.0 + x * x))


def sigmoid(a):
    def fwd(x):
        # split by sign so exp never overflows
        p = np.empty_like(x)
        pos = x >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        p[~pos] = ex / (1.0 + ex)
        return p

    return _unary(a, fwd, lambda x, y: y * (1.0 - y))


def relu(a):
    """Elementwise max(0, x); gradient flows only where x > 0."""
    return _unary(a, lambda x: np.maximum(0.0, x), lambda x, y: (x > 0).astype(x.dtype))


def maximum_with(a, floor):
    """Elementwise max(a, floor) against a constant; used to clamp log inputs."""
    a = _lift(a)
    out = _make(np.maximum(a.values, floor), (a,), None)

    def backward():
        if a.requires_grad:
            a.grad += out.grad * (a.values > floor)

    out._backward = backward
    return out


# -- shape manipulation -------------------------------------------------------


def reshape(a, shape):
    a = _lift(a)
    out = _make(a.values.reshape(shape), (a,), None)

    def backward():
        if a.requires_grad:
            a.grad += out.grad.reshape(a.values.shape)

    out._backward = backward
    return out


def transpose(a):
    """Swap the last two axes."""
    a = _lift(a)
    out = _make(np.swapaxes(a.values, -1, -2), (a,), None)

    def backward():
        if a.requires_grad:
            a.grad += np.swapaxes(out.grad, -1, -2)

    out._backward = backward
    return out


def concat(parts, axis):
    parts = [_lift(p) for p in parts]
    out = _make(np.concatenate([p.values for p in parts], axis=axis), tuple(parts), None)
    sizes = [p.values.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward():
        pieces = np.split(out.grad, splits, axis=axis)
        for p, g in zip(parts, pieces):
            if p.requires_grad:
                p.grad += g

    out._backward = backward
    return out


def getitem(a, key):
    """Basic (non-repeating) indexing/slicing."""
    a = _lift(a)
    out = _make(a.values[key], (a,), None)

    def backward():
        if a.requires_grad:
            a.grad[key] += out.grad

    out._backward = backward
    return out


def diag_embed(v):
    """Place a length-n vector on the diagonal of an n-by-n matrix."""
    v = _lift(v)
    if v.values.ndim != 1:
        raise ShapeError(f"diag_embed expects a vector, got shape {v.values.shape}")
    out = _make(np.diag(v.values), (v,), None)

    def backward():
        if v.requires_grad:
            v.grad += np.diagonal(out.grad)

    out._backward = backward
    return out


# -- reductions ---------------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = _lift(a)
    out = _make(a.values.sum(axis=axis, keepdims=keepdims), (a,), None)

    def backward():
        if a.requires_grad:
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.grad += np.broadcast_to(g, a.values.shape)

    out._backward = backward
    return out


def mean(a):
    a = _lift(a)
    n = a.values.size
    return mul(tsum(a), 1.0 / n)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b):
    """Matrix product with numpy stacking rules (operands must be >= 2-D)."""
    a, b = _lift(a), _lift(b)
    if a.values.ndim < 2 or b.values.ndim < 2:
        raise ShapeError(
            f"matmul needs >=2-D operands, got {a.values.shape} and {b.values.shape}"
        )
    if a.values.shape[-1] != b.values.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.values.shape} @ {b.values.shape}"
        )
    out = _make(a.values @ b.values, (a, b), None)

    def backward():
        g = out.grad
        if a.requires_grad:
            ga = g @ np.swapaxes(b.values, -1, -2)
            a.grad += _unbroadcast(ga, a.values.shape)
        if b.requires_grad:
            gb = np.swapaxes(a.values, -1, -2) @ g
            b.grad += _unbroadcast(gb, b.values.shape)

    out._backward = backward
    return out


def linear(x, W, b):
    """Affine map W.x + b for a single vector or a batch of row vectors."""
    x = _lift(x)
    single = x.values.ndim == 1
    if single:
        x = reshape(x, (1, -1))
    y = add(matmul(x, transpose(W)), b)
    return reshape(y, (-1,)) if single else y


# -- neural-network specific ops ---------------------------------------------


def softmax(a):
    """Softmax over the last axis, computed with max subtraction."""
    a = _lift(a)
    shifted = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = _make(y, (a,), None)

    def backward():
        if a.requires_grad:
            g = out.grad
            dot = (g * y).sum(axis=-1, keepdims=True)
            a.grad += y * (g - dot)

    out._backward = backward
    return out


LOG_FLOOR = 1e-12


def cross_entropy(pred, target):
    """-sum(t * log(max(pred, floor))); mean over rows for batched input.

    target is a constant one-hot array (no gradient). The floor keeps the
    loss finite when a probability underflows to zero.
    """
    pred = _lift(pred)
    t = np.asarray(target, dtype=pred.values.dtype)
    if t.shape != pred.values.shape:
        raise ShapeError(f"target shape {t.shape} != prediction shape {pred.values.shape}")
    per = neg(tsum(mul(log(maximum_with(pred, LOG_FLOOR)), t)))
    if pred.values.ndim == 2:
        return mul(per, 1.0 / pred.values.shape[0])
    return per


def conv2d(x, w, stride=1, padding=0):
    """2-D cross-correlation.

    x: (B, C, H, W), w: (F, C, kh, kw). Output spatial size is
    floor((in + 2*pad - k)/stride) + 1.
    """
    x, w = _lift(x), _lift(w)
    B, C, H, W = x.values.shape
    F, Cw, kh, kw = w.values.shape
    if Cw != C:
        raise ShapeError(f"kernel expects {Cw} input channels, image has {C}")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if kh > Hp or kw > Wp:
        raise ShapeError(
            f"kernel {kh}x{kw} larger than padded input {Hp}x{Wp}"
        )
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1

    xp = x.values
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sB, sC, sH, sW = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(B, C, Ho, Wo, kh, kw),
        strides=(sB, sC, sH * stride, sW * stride, sH, sW),
        writeable=False,
    )
    # (B*Ho*Wo, C*kh*kw) so the contraction is one big GEMM
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    wf = w.values.reshape(F, C * kh * kw)
    y = (cols @ wf.T).reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2)
    out = _make(np.ascontiguousarray(y), (x, w), None)

    def backward():
        g = out.grad.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, F)
        if w.requires_grad:
            w.grad += (g.T @ cols).reshape(F, C, kh, kw)
        if x.requires_grad:
            gcols = (g @ wf).reshape(B, Ho, Wo, C, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            gxp = np.zeros((B, C, Hp, Wp), dtype=out.grad.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += gcols[
                        :, :, :, :, i, j
                    ]
            if padding:
                gxp = gxp[:, :, padding:-padding, padding:-padding]
            x.grad += gxp

    out._backward = backward
    return out


def maxpool2(x):
    """2x2 max pooling with stride 2; trailing odd row/column is dropped."""
    x = _lift(x)
    B, C, H, W = x.values.shape
    Ho, Wo = H // 2, W // 2
    v = x.values[:, :, : 2 * Ho, : 2 * Wo].reshape(B, C, Ho, 2, Wo, 2)
    v = v.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, 4)
    idx = v.argmax(axis=-1)
    out = _make(np.take_along_axis(v, idx[..., None], axis=-1)[..., 0], (x,), None)

    def backward():
        if x.requires_grad:
            gwin = np.zeros_like(v)
            np.put_along_axis(gwin, idx[..., None], out.grad[..., None], axis=-1)
            gwin = gwin.reshape(B, C, Ho, Wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
            gx = np.zeros_like(x.values)
            gx[:, :, : 2 * Ho, : 2 * Wo] = gwin.reshape(B, C, 2 * Ho, 2 * Wo)
            x.grad += gx

    out._backward = backward
    return out
