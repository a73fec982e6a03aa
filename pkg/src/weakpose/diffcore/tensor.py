"""Dense float64 tensors with a recorded tape for reverse-mode gradients."""

from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonFiniteValue(FloatingPointError):
    pass


def _check_finite(data, op):
    # a sum is finite whenever every entry is; only an inf/nan sum (which
    # may also be plain overflow) needs the entrywise test
    with np.errstate(over="ignore", invalid="ignore"):
        total = data.sum()
    if not np.isfinite(total) and not np.all(np.isfinite(data)):
        raise NonFiniteValue(f"{op} produced a non-finite value")


class Tensor:
    """A node in the computation graph.

    ``data`` is always a float64 ndarray. Leaves created with
    ``requires_grad=True`` collect gradients in ``grad`` after
    :meth:`backward`; interior nodes keep theirs only for the duration of
    the sweep.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, op)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable leaf.

        ``grad`` defaults to 1 for scalar outputs; non-scalar outputs need an
        explicit upstream gradient of matching shape.
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() on a non-scalar needs an explicit grad")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ShapeMismatch(f"upstream grad {grad.shape} vs tensor {self.shape}")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise ShapeMismatch(f"{node.op}: grad {pg.shape} for parent {parent.shape}")
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward, op):
    return Tensor(data, _parents=tuple(parents), _backward=backward, op=op)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ----------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), backward, "mul")


def scale(a, s):
    a = as_tensor(a)
    s = float(s)
    return _node(a.data * s, (a,), lambda g: (g * s,), "scale")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def clamp_min(a, lo):
    """max(a, lo) elementwise; clamped entries pass no gradient."""
    a = as_tensor(a)
    mask = a.data > lo
    return _node(np.where(mask, a.data, lo), (a,), lambda g: (g * mask,), "clamp_min")


# ----------------------------------------------------------------------------
# linear algebra and shape


def matmul(a, b):
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # shared weight: fold leading axes into one GEMM
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(*lead, b.shape[-1])

        def backward_shared(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

        return _node(out, (a, b), backward_shared, "matmul")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}") from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), backward, "matmul")


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape {a.shape} -> {shape}") from None
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatch("concat: " + ", ".join(str(t.shape) for t in tensors)) from None
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tensors, backward, "concat")


def take(a, index):
    """Basic or fancy indexing; the backward scatters with accumulation."""
    a = as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as exc:
        raise ShapeMismatch(f"take: {exc}") from None

    idx_parts = index if isinstance(index, tuple) else (index,)
    basic = all(p is Ellipsis or p is None or isinstance(p, (int, np.integer, slice)) for p in idx_parts)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            # no repeated targets possible
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(np.array(out), (a,), backward, "take")


def gather_rows(a, idx):
    """Per-batch row gather: a (..., N, C), idx (..., M) -> (..., M, C)."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    if idx.shape[:-1] != a.shape[:-2]:
        raise ShapeMismatch(f"gather_rows: index {idx.shape} for {a.shape}")
    full_idx = idx[..., None]
    out = np.take_along_axis(a.data, full_idx, axis=-2)

    def backward(g):
        n, c = a.shape[-2:]
        fidx = idx.reshape(-1, idx.shape[-1])
        offsets = (np.arange(fidx.shape[0]) * n)[:, None]
        flat = np.zeros((fidx.shape[0] * n, c))
        rows = (fidx + offsets).ravel()
        g2 = g.reshape(-1, c)
        # upstream of a max-pool is mostly zero rows; skip them
        live = np.flatnonzero(g2.any(axis=1))
        if live.size < rows.size:
            rows, g2 = rows[live], g2[live]
        np.add.at(flat, rows, g2)
        return (flat.reshape(a.shape),)

    return _node(out, (a,), backward, "gather_rows")


# ----------------------------------------------------------------------------
# reductions and normalizations


def sum(a, axis=None, keepdims=False):  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def max_pool_over_points(a, axis=-2):
    """Coordinate-wise max over the point axis; gradient goes to the argmax."""
    a = as_tensor(a)
    axis = axis % a.ndim
    arg = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def backward(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _node(out, (a,), backward, "max_pool")


def softmax(a, axis=-1, mask=None):
    """Softmax along ``axis``. ``mask`` (broadcastable bool) marks entries that
    participate; the rest get exactly zero probability."""
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        if not np.all(mask.any(axis=axis)):
            raise ShapeMismatch("softmax mask leaves an empty slice")
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _node(p, (a,), backward, "softmax")


def layer_norm(a, gamma=None, beta=None, eps=1e-5):
    """Normalize over the last axis, then apply optional affine gamma/beta."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = a.shape[-1]

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    out = _node(xhat, (a,), backward, "layer_norm")
    if n == 0:
        raise ShapeMismatch("layer_norm over an empty axis")
    if gamma is not None:
        out = mul(out, gamma)
    if beta is not None:
        out = add(out, beta)
    return out
