"""Central-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import NonFiniteError
from .tensor import Record, Tensor


def numeric_gradient(fn: Callable[[], Tensor], param: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``param``."""
    flat = param.data.reshape(-1)
    out = np.empty(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(fn().data)
        flat[i] = orig - eps
        lo = float(fn().data)
        flat[i] = orig
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NonFiniteError(f"function value not finite near coordinate {i} of {param.name or 'param'}")
        out[i] = (hi - lo) / (2 * eps)
    return out.reshape(param.shape)


def analytic_gradient(fn: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.requires_grad = True
    with Record() as rec:
        loss = fn()
    if not loss.is_finite():
        raise NonFiniteError("function value is not finite")
    grads = rec.backward(loss)
    return [grads.get(p, np.zeros_like(p.data)) for p in params]


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max over all coordinates of ``|analytic - numeric| / max(1, |numeric|)``.

    ``fn`` takes no arguments, reads ``params`` and returns a scalar tensor.
    Parameters are perturbed in place and restored.
    """
    analytic = analytic_gradient(fn, params)
    worst = 0.0
    for p, a in zip(params, analytic):
        n = numeric_gradient(fn, p, eps)
        err = np.abs(a - n) / np.maximum(1.0, np.abs(n))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
