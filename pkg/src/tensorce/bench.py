"""Timing comparison of the numba and numpy kernel paths."""

import time

import numpy as np

from . import _accel
from .channel import complex_normal


def _time(fn, repeats):
    fn()  # warm-up (and numba compilation)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(dims=(8, 8, 8), rank=8, seed=0):
    """Named zero-argument callables per kernel, as ``{name: (numba, numpy)}``."""
    rng = np.random.default_rng(seed)
    F = [np.ascontiguousarray(complex_normal(rng, (I, rank))) for I in dims]
    X = complex_normal(rng, dims)
    covs = [np.eye(rank, dtype=np.complex128) for _ in dims]
    gam = np.ones(rank)

    def sweep_vi(use):
        Ms = [f.copy() for f in F]
        Cs = [c.copy() for c in covs]
        return lambda: _accel.vi_user_sweep(X, Ms, Cs, gam, 1.0, 10.0, use_numba=use)

    def sweep_bcd(use):
        Fs = [f.copy() for f in F]
        return lambda: _accel.bcd_user_sweep(X, Fs, 10.0, use_numba=use)

    return {
        "cpd_full": tuple(lambda u=u: _accel.cpd_full(*F, use_numba=u) for u in (True, False)),
        "mttkrp": tuple(lambda u=u: _accel.mttkrp(X, *F, 0, use_numba=u) for u in (True, False)),
        "vi_user_sweep": (sweep_vi(True), sweep_vi(False)),
        "bcd_user_sweep": (sweep_bcd(True), sweep_bcd(False)),
    }


def kernel_table(repeats=20, dims=(8, 8, 8), rank=8):
    """Best-of-``repeats`` seconds per kernel for both paths, as text."""
    lines = [f"{'kernel':<16} {'numba_us':>10} {'numpy_us':>10} {'speedup':>8}"]
    for name, (nb, np_) in kernel_cases(dims, rank).items():
        t_np = _time(np_, repeats)
        if _accel.HAVE_NUMBA:
            t_nb = _time(nb, repeats)
            lines.append(f"{name:<16} {t_nb * 1e6:>10.1f} {t_np * 1e6:>10.1f} {t_np / t_nb:>8.2f}")
        else:
            lines.append(f"{name:<16} {'n/a':>10} {t_np * 1e6:>10.1f} {'n/a':>8}")
    return "\n".join(lines)
