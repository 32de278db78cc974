"""Accuracy metrics."""

import numpy as np

from .tensor import DimensionError


def mse(estimates, truth):
    """``(1 / (M N)) * sum_n ||H_hat^n - H^n||_F^2`` over stacked
    ``[N, I1, I2, I3]`` channel tensors."""
    est = np.asarray(estimates)
    tru = np.asarray(truth)
    if est.shape != tru.shape or est.ndim != 4:
        raise DimensionError(f"shape mismatch: {est.shape} vs {tru.shape}")
    diff = (est - tru).ravel()
    return float(np.vdot(diff, diff).real / diff.size)
