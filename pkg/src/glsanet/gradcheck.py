"""Central finite differences against reverse-mode gradients.

The numerical side only ever calls the forward function, so it stays an
independent oracle for the tape.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def numerical_grad(f: Callable[[], Tensor], t: Tensor, step: float = 1e-6) -> np.ndarray:
    """d f() / d t by central differences, perturbing ``t.data`` in place."""
    g = np.zeros(t.data.shape, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f().data)
        flat[i] = orig - step
        lo = float(f().data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return g


def analytic_grads(f: Callable[[], Tensor], tensors: Sequence[Tensor]) -> list[np.ndarray]:
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    return [np.zeros(t.shape) if t.grad is None else np.asarray(t.grad, dtype=np.float64) for t in tensors]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the larger magnitude of the two fields."""
    denom = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / denom)


def check_gradients(f: Callable[[], Tensor], tensors: Sequence[Tensor], step: float = 1e-6) -> float:
    """Worst relative error over ``tensors`` between tape and finite differences.

    ``f`` must be a closure returning a scalar Tensor built from ``tensors``;
    pass float64 tensors for a meaningful comparison.
    """
    ana = analytic_grads(f, tensors)
    worst = 0.0
    for t, a in zip(tensors, ana):
        n = numerical_grad(f, t, step)
        worst = max(worst, relative_error(a, n))
    return worst
