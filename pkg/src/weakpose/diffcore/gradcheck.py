"""Finite-difference oracles for backward passes.

Both checks only ever call the forward function on perturbed inputs, so they
stay independent of the gradients they validate.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def _scalar(fn, arrays):
    out = fn(*[Tensor(a) for a in arrays])
    return float(np.asarray(out.data if isinstance(out, Tensor) else out).reshape(()))


def _analytic(fn, arrays):
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    out.backward()
    return [np.zeros_like(a) if leaf.grad is None else leaf.grad for a, leaf in zip(arrays, leaves)]


def directional_check(fn, inputs, h=1e-6, n_directions=3, seed=0):
    """Max relative error between grad . v and a central difference along v.

    ``fn`` maps Tensors to a scalar Tensor. Directions are random unit
    vectors over the concatenation of all inputs. The denominator is floored
    at 1e-3 of the gradient norm so a direction that happens to be nearly
    orthogonal to the gradient does not blow up the ratio.
    """
    arrays = [np.asarray(x, dtype=np.float64) for x in inputs]
    grads = _analytic(fn, arrays)
    rng = np.random.default_rng(seed)
    gnorm = np.sqrt(sum(float((g * g).sum()) for g in grads))
    worst = 0.0
    for _ in range(n_directions):
        dirs = [rng.standard_normal(a.shape) for a in arrays]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        plus = _scalar(fn, [a + h * d for a, d in zip(arrays, dirs)])
        minus = _scalar(fn, [a - h * d for a, d in zip(arrays, dirs)])
        fd = (plus - minus) / (2 * h)
        an = sum(float((g * d).sum()) for g, d in zip(grads, dirs))
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-3 * gnorm, 1e-10))
    return worst


def check_gradients(fn, inputs, h=1e-6, floor=1e-6, max_entries=200, seed=0):
    """Entrywise comparison of backward gradients with central differences.

    Returns the max of |a - n| / max(|a|, |n|, floor) over checked entries.
    Large inputs are spot-checked on ``max_entries`` random coordinates.
    """
    arrays = [np.asarray(x, dtype=np.float64) for x in inputs]
    grads = _analytic(fn, arrays)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i, a in enumerate(arrays):
        flat_idx = np.arange(a.size)
        if a.size > max_entries:
            flat_idx = rng.choice(a.size, size=max_entries, replace=False)
        for j in flat_idx:
            idx = np.unravel_index(j, a.shape)
            pert = [x.copy() for x in arrays]
            pert[i][idx] += h
            plus = _scalar(fn, pert)
            pert[i][idx] -= 2 * h
            minus = _scalar(fn, pert)
            fd = (plus - minus) / (2 * h)
            an = grads[i][idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), floor))
    return worst


def check_parameters(store, loss_fn, h=1e-6, floor=1e-6, max_per_param=20, seed=0, names=None):
    """Entrywise check of every stored parameter's gradient.

    ``loss_fn()`` builds the graph from the store's current values and
    returns a scalar Tensor. Parameters are perturbed in place and restored.
    Returns (worst relative error, name of the worst parameter).
    """
    store.zero_grad()
    loss_fn().backward()
    grads = {n: (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for n, p in store}
    rng = np.random.default_rng(seed)
    worst, worst_name = 0.0, None
    for name, p in store:
        if names is not None and name not in names:
            continue
        flat = np.arange(p.data.size)
        if p.data.size > max_per_param:
            flat = rng.choice(p.data.size, size=max_per_param, replace=False)
        for j in flat:
            idx = np.unravel_index(j, p.data.shape)
            orig = p.data[idx]
            p.data[idx] = orig + h
            plus = float(loss_fn().data)
            p.data[idx] = orig - h
            minus = float(loss_fn().data)
            p.data[idx] = orig
            fd = (plus - minus) / (2 * h)
            an = grads[name][idx]
            err = abs(fd - an) / max(abs(fd), abs(an), floor)
            if err > worst:
                worst, worst_name = err, name
    return worst, worst_name
