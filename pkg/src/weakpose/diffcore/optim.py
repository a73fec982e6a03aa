from __future__ import annotations

import numpy as np

from .tensor import ShapeMismatch

DEFAULT_LR = 1e-4
DEFAULT_WEIGHT_DECAY = 1e-4


def adamw_step(store, grads=None, lr=DEFAULT_LR, weight_decay=DEFAULT_WEIGHT_DECAY,
               beta1=0.9, beta2=0.999, eps=1e-8):
    """One AdamW update (decoupled weight decay) applied in place.

    ``grads`` maps parameter name to gradient; when omitted the ``.grad``
    buffers left by the last backward pass are used (missing ones count as
    zero). Returns the store.
    """
    if grads is None:
        grads = store.grads()
    store.step += 1
    t = store.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in store.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient for {name}: {g.shape} vs {p.data.shape}")
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data *= 1.0 - lr * weight_decay
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return store
