"""Central finite differences, used as an independent oracle for autodiff."""
from __future__ import annotations

from typing import Callable, List, Sequence

import numpy as np


def numerical_gradient(fn: Callable[..., float], arrays: Sequence[np.ndarray],
                       h: float = 1e-5) -> List[np.ndarray]:
    """Gradient of scalar ``fn(*arrays)`` w.r.t. each array by central differences.

    Arrays are perturbed in place and restored; pass float64 copies.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn(*arrays))
            flat[i] = orig - h
            fm = float(fn(*arrays))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
