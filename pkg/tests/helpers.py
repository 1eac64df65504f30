"""Shared test oracles.

The finite-difference gradient here is the independent check for every
autodiff rule: it only ever calls the forward pass.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


def central_diff_grad(
    f: Callable[..., float],
    arrays: Sequence[np.ndarray],
    h: float = 1e-6,
) -> list[np.ndarray]:
    """Central finite differences of a scalar function of several arrays."""
    grads = []
    for idx, base in enumerate(arrays):
        work = [a.copy() for a in arrays]
        g = np.zeros_like(base, dtype=np.float64)
        flat = work[idx].reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(*work)
            flat[i] = orig - h
            fm = f(*work)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def grad_close(analytic: np.ndarray, numeric: np.ndarray, rtol: float = 1e-5) -> bool:
    """Relative error of the analytic gradient against the oracle,
    normalized by the oracle's scale (floored at 1)."""
    scale = max(1.0, float(np.max(np.abs(numeric))) if numeric.size else 1.0)
    return float(np.max(np.abs(analytic - numeric))) / scale <= rtol


def rawsum(track_or_array) -> np.ndarray:
    arr = getattr(track_or_array, "samples", track_or_array)
    return np.asarray(arr)
