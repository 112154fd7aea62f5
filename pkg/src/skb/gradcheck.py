"""Finite-difference gradient verification.

Run in float64: central differences at h=1e-5 have truncation error around
1e-10 there, while float32 rounding alone would swamp the 1e-4 tolerance.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Parameter, Tensor, zero_grads


def promote_to_float64(params: Iterable[Parameter]):
    """Swap parameter storage to float64 in place (for checking only)."""
    for p in params:
        p.data = p.data.astype(np.float64)
        p.grad = np.zeros_like(p.data)


def numeric_gradient(f: Callable[[], Tensor], param: Parameter, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of ``f()`` w.r.t. every entry of ``param``."""
    if param.data.dtype != np.float64:
        raise ValueError(f"gradient checking requires float64 parameters, got {param.data.dtype}")
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        up = f().item()
        flat[i] = saved - h
        down = f().item()
        flat[i] = saved
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # Central differences at h=1e-5 carry ~1e-10 absolute noise, so entries
    # below 1e-4 are compared against that scale rather than their own.
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(f: Callable[[], Tensor], params: Iterable[Parameter],
                    h: float = 1e-5) -> float:
    """Max relative error between tape gradients and finite differences."""
    params = list(params)
    zero_grads(params)
    f().backward()
    analytic = {p.name: p.grad.copy() for p in params}
    worst = 0.0
    for p in params:
        numeric = numeric_gradient(f, p, h=h)
        worst = max(worst, max_relative_error(analytic[p.name], numeric))
    return worst
