"""Parameter store and the handful of layers the pose networks are built from."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import ShapeMismatch, Tensor


class ParamStore:
    """Named trainable tensors plus their AdamW moments.

    Initialization draws from a generator seeded at construction, so two
    stores built with the same seed and the same registration order hold
    bit-identical parameters.
    """

    def __init__(self, seed=0):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        self._rng = np.random.default_rng(seed)

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def add(self, name, data):
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self.params[name] = p
        self.m[name] = np.zeros_like(p.data)
        self.v[name] = np.zeros_like(p.data)
        return p

    def glorot(self, name, fan_in, fan_out, shape=None):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        shape = (fan_in, fan_out) if shape is None else shape
        return self.add(name, self._rng.uniform(-bound, bound, size=shape))

    def zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def ones(self, name, shape):
        return self.add(name, np.ones(shape))

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def grads(self):
        return {n: (np.zeros_like(p.data) if p.grad is None else p.grad) for n, p in self.params.items()}

    def n_parameters(self):
        return int(sum(p.data.size for p in self.params.values()))


class Linear:
    def __init__(self, store, name, fan_in, fan_out, bias=True):
        self.fan_in, self.fan_out = fan_in, fan_out
        self.w = store.glorot(f"{name}.w", fan_in, fan_out)
        self.b = store.zeros(f"{name}.b", (fan_out,)) if bias else None

    def __call__(self, x):
        if x.shape[-1] != self.fan_in:
            raise ShapeMismatch(f"Linear expects last dim {self.fan_in}, got {x.shape}")
        y = T.matmul(x, self.w)
        return y if self.b is None else T.add(y, self.b)


class MLP:
    """Shared per-row MLP with ReLU between (and optionally after) layers."""

    def __init__(self, store, name, widths, final_relu=True):
        self.layers = [Linear(store, f"{name}.{i}", a, b) for i, (a, b) in enumerate(zip(widths, widths[1:]))]
        self.final_relu = final_relu

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1 or self.final_relu:
                x = T.relu(x)
        return x


class LayerNorm:
    def __init__(self, store, name, dim):
        self.gamma = store.ones(f"{name}.gamma", (dim,))
        self.beta = store.zeros(f"{name}.beta", (dim,))

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta)


def attention(q, k, v, mask=None):
    """softmax(q k^T / sqrt(C)) v over the last two axes.

    q: (..., M, C), k: (..., N, C), v: (..., N, Cv). ``mask`` (..., M, N)
    selects admissible keys per query.
    """
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeMismatch(f"attention: query dim {q.shape} vs key dim {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"attention: {k.shape[-2]} keys vs {v.shape[-2]} values")
    nd = k.ndim
    perm = tuple(range(nd - 2)) + (nd - 1, nd - 2)
    scores = T.scale(T.matmul(q, T.transpose(k, perm)), 1.0 / math.sqrt(q.shape[-1]))
    return T.matmul(T.softmax(scores, axis=-1, mask=mask), v)


class MultiHeadAttention:
    def __init__(self, store, name, dim, heads=4):
        if dim % heads:
            raise ShapeMismatch(f"dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.q = Linear(store, f"{name}.q", dim, dim)
        self.k = Linear(store, f"{name}.k", dim, dim)
        self.v = Linear(store, f"{name}.v", dim, dim)
        self.o = Linear(store, f"{name}.o", dim, dim)

    def _split(self, x):
        *lead, n, _ = x.shape
        x = T.reshape(x, (*lead, n, self.heads, self.dim // self.heads))
        nd = x.ndim
        return T.transpose(x, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))

    def __call__(self, query, key, value):
        q = self._split(self.q(query))
        k = self._split(self.k(key))
        v = self._split(self.v(value))
        out = attention(q, k, v)
        nd = out.ndim
        out = T.transpose(out, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
        *lead, m, _, _ = out.shape
        return self.o(T.reshape(out, (*lead, m, self.dim)))


class PointEncoder:
    """Shared MLP on each point followed by a max over points.

    Returns per-point features ``[local, global]`` of width 2*C and the global
    vector of width C.
    """

    def __init__(self, store, name, c_in, width=64, hidden=32):
        self.mlp = MLP(store, f"{name}.mlp", [c_in, hidden, width])
        self.width = width

    def __call__(self, x):
        return point_encoder(x, self)


def point_encoder(cloud_features, params):
    x = T.as_tensor(cloud_features)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeMismatch(f"point_encoder needs (..., N>=1, C), got {x.shape}")
    local = params.mlp(x)
    glob = T.max_pool_over_points(local, axis=-2)
    n = x.shape[-2]
    tiled = T.mul(T.reshape(glob, (*glob.shape[:-1], 1, glob.shape[-1])), np.ones((n, 1)))
    return T.concat([local, tiled], axis=-1), glob
