from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import NumericError


def finite_diff_gradient(f: Callable[[np.ndarray], float], theta, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    theta = np.array(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        fp = float(f(theta))
        flat[k] = orig - h
        fm = float(f(theta))
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            coord = np.unravel_index(k, theta.shape)
            raise NumericError(f"non-finite function value at coordinate {coord}", coordinate=coord)
        gflat[k] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    """max |a-b| / max(|a|, |b|, floor), the metric used for gradient checks."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)
