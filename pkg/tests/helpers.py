"""Shared numerical test utilities."""

from __future__ import annotations

import numpy as np


def finite_difference(f, x0: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar f() w.r.t. x0, mutated in place."""
    grad = np.zeros_like(x0, dtype=np.float64)
    flat = x0.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        out[i] = (hi - lo) / (2.0 * eps)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    """Max absolute difference scaled by the largest magnitude present."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(
        1e-8,
        float(np.abs(a).max()) if a.size else 0.0,
        float(np.abs(b).max()) if b.size else 0.0,
    )
    return float(np.abs(a - b).max()) / denom
