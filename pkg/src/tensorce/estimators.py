"""Least-squares and block-coordinate-descent channel estimators.

Factors for all users are passed around as a list of
:class:`~tensorce.channel.FactorSet`, one per user. Modes are 1, 2, 3;
users and pilot indices are 0-based.

Every estimator works from two pilot-weighted statistics of the data::

    Z[n]    = sum_l conj(s_n(l)) * Y[l]
    G[n, p] = sum_l conj(s_n(l)) * s_p(l)          (G = S^H S)

so that ``sum_l conj(s_n(l)) B_l`` for the residual ``B_l`` that excludes
user ``n`` equals ``Z[n] - sum_{p != n} G[n, p] X_p`` with ``X_p`` the
reconstructed tensor of user ``p``. The cost of a factor update is then
independent of the pilot length.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _accel
from .channel import FactorSet, complex_normal
from .tensor import cpd_reconstruct, hadamard_gram, mttkrp

log = logging.getLogger(__name__)

LS_MAX_COND = 1e12
JITTER = 1e-10
# objective below this fraction of ||Y||^2 counts as an exact fit
EXACT_FIT = 1e-24


class SingularSystemError(np.linalg.LinAlgError):
    """A linear system needed by an estimator is (numerically) singular."""


class ConvergenceError(RuntimeError):
    """An iterative solver had to abort the run."""


def _hpd_factor(P):
    """Cholesky factor of a Hermitian PD matrix, retrying once with a
    diagonal jitter of ``JITTER * trace(P) / dim``."""
    P = 0.5 * (P + P.conj().T)
    try:
        return scipy.linalg.cho_factor(P, lower=True, check_finite=True)
    except np.linalg.LinAlgError:
        pass
    dim = P.shape[0]
    jitter = JITTER * max(np.trace(P).real, np.finfo(float).tiny) / dim
    log.debug("adding jitter %.3g to a %dx%d system", jitter, dim, dim)
    try:
        return scipy.linalg.cho_factor(P + jitter * np.eye(dim), lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"matrix of size {dim} is singular even after jitter") from exc


def hpd_inverse(P):
    """Inverse of a Hermitian PD matrix via Cholesky (with jitter fallback)."""
    cf = _hpd_factor(P)
    inv = scipy.linalg.cho_solve(cf, np.eye(P.shape[0], dtype=P.dtype))
    return 0.5 * (inv + inv.conj().T)


def right_solve(rhs, P):
    """``rhs @ inv(P)`` for Hermitian PD ``P``."""
    # rhs P^{-1} = (P^{-T} rhs^T)^T and P^T = conj(P) is HPD as well
    cf = _hpd_factor(P.conj())
    return scipy.linalg.cho_solve(cf, rhs.T).T


# ----------------------------------------------------------------------
# least squares


def ls_estimate(Y, S):
    """Least-squares channel matrix ``(S^H S)^{-1} S^H Y``.

    Parameters
    ----------
    Y : array [L, M]
        Received signal matrix.
    S : array [L, N]
        Pilot matrix; needs ``L >= N`` and full column rank.
    """
    Y = np.asarray(Y, dtype=np.complex128)
    S = np.asarray(S, dtype=np.complex128)
    L, N = S.shape
    if Y.shape[0] != L:
        raise ValueError(f"Y has {Y.shape[0]} rows but S has {L}")
    if L < N:
        raise SingularSystemError(f"pilot length {L} is shorter than the number of users {N}")
    SHS = S.conj().T @ S
    cond = np.linalg.cond(SHS)
    if not cond < LS_MAX_COND:
        raise SingularSystemError(f"S^H S is singular (condition number {cond:.3g})")
    return scipy.linalg.solve(SHS, S.conj().T @ Y, assume_a="pos")


def ls_channels(obs):
    """LS estimate reshaped to per-user channel tensors ``[N, I1, I2, I3]``."""
    H = ls_estimate(obs.Y_matrix(), obs.pilots)
    return H.reshape((obs.n_users,) + tuple(obs.dims))


# ----------------------------------------------------------------------
# coupled objective


def pilot_statistics(obs):
    """``(Z, G)`` as described in the module docs."""
    S = np.asarray(obs.pilots)
    Z = np.einsum("ln,labc->nabc", S.conj(), obs.Y)
    G = S.conj().T @ S
    return Z, G


def user_tensors(factors):
    return np.stack([cpd_reconstruct(*f) for f in factors])


def objective(obs, factors):
    """``sum_l || Y_l - sum_n s_n(l) [[factors_n]] ||_F^2``."""
    X = user_tensors(factors)
    R = obs.Y - np.einsum("ln,nabc->labc", obs.pilots, X)
    return float(np.vdot(R, R).real)


def residual_tensor(obs, factors, l, n):
    """``Y_l - sum_{p != n} s_p(l) [[factors_p]]``."""
    out = np.array(obs.Y[l], dtype=np.complex128)
    for p, f in enumerate(factors):
        if p != n:
            out -= obs.pilots[l, p] * cpd_reconstruct(*f)
    return out


def _weighted_residual(Z, G, X, n):
    """``sum_l conj(s_n(l)) * residual_tensor(l, n)`` from the statistics."""
    W = Z[n].copy()
    for p in range(X.shape[0]):
        if p != n:
            W -= G[n, p] * X[p]
    return W


def _bcd_factor(W, gain, fs, k):
    rhs = mttkrp(W, fs, k)
    gram = gain * hadamard_gram(fs, k)
    try:
        return right_solve(rhs, gram)
    except SingularSystemError as exc:
        raise ConvergenceError(f"BCD Gram matrix for mode {k} is singular") from exc


def _bcd_sweep(W, gain, factors, n):
    """All three mode updates of user ``n`` in place, through the compiled
    kernel when possible and the jittered per-mode path otherwise."""
    try:
        _accel.bcd_user_sweep(W, factors[n], gain)
    except np.linalg.LinAlgError:
        fs = list(factors[n])
        for k in (1, 2, 3):
            fs[k - 1] = _bcd_factor(W, gain, fs, k)
        factors[n] = FactorSet(*fs)


def bcd_update_factor(obs, factors, k, n, stats=None):
    """Exact minimizer of the coupled objective over the mode-``k`` factor
    of user ``n`` with everything else held fixed."""
    Z, G = stats if stats is not None else pilot_statistics(obs)
    X = user_tensors(factors)
    W = _weighted_residual(Z, G, X, n)
    return _bcd_factor(W, G[n, n].real, factors[n], k)


# ----------------------------------------------------------------------
# BCD solver


@dataclass
class BcdState:
    factors: list
    iterations: int = 0
    objective_trace: list = field(default_factory=list)
    converged: bool = False
    collapsed_columns: int = 0
    estimates: np.ndarray = None


def count_collapsed(fs, rtol=1e-10):
    """Number of rank-one terms whose norm is negligible next to the largest."""
    norms = np.prod([np.linalg.norm(F, axis=0) for F in fs], axis=0)
    if norms.size == 0 or norms.max() == 0:
        return int(norms.size)
    return int(np.sum(norms < rtol * norms.max()))


def random_factors(dims, ranks, rng):
    """i.i.d. CN(0, 1) factor matrices for every user."""
    rng = np.random.default_rng(rng)
    return [FactorSet(*(complex_normal(rng, (I, R)) for I in dims)) for R in ranks]


def _ranks_list(ranks, n_users):
    if np.isscalar(ranks):
        ranks = [int(ranks)] * n_users
    ranks = [int(r) for r in ranks]
    if len(ranks) != n_users or min(ranks) < 1:
        raise ValueError(f"need one positive rank per user, got {ranks}")
    return ranks


def bcd_solve(
    obs,
    ranks,
    init=None,
    max_iters=1000,
    rel_tol=1e-8,
    trace_updates=False,
    callback=None,
):
    """Cyclic exact block minimization of the coupled CPD objective.

    Users are swept in the outer loop and modes in the inner loop, each
    factor being replaced in place by its exact block minimizer. Stops
    when the relative objective change over a sweep drops below
    ``rel_tol``, when the objective falls below ``EXACT_FIT * ||Y||^2``,
    or after ``max_iters`` sweeps.

    Parameters
    ----------
    obs : ObservationBatch
    ranks : int or sequence of int
        Number of CPD components per user.
    init : list of FactorSet, seed or Generator, optional
        Initial factors; anything else seeds CN(0, 1) initialization.
    trace_updates : bool
        Record the objective after every single factor update instead of
        once per sweep.
    callback : callable, optional
        Called as ``callback(sweep, state)`` after every sweep.
    """
    N = obs.n_users
    ranks = _ranks_list(ranks, N)
    if isinstance(init, list):
        factors = [FactorSet(*(np.array(F, dtype=np.complex128, order="C") for F in f)) for f in init]
    else:
        factors = random_factors(obs.dims, ranks, init)
    Z, G = pilot_statistics(obs)
    X = user_tensors(factors)
    gains = G.diagonal().real
    state = BcdState(factors=factors)
    prev = objective(obs, factors)
    state.objective_trace.append(prev)
    floor = EXACT_FIT * float(np.vdot(obs.Y, obs.Y).real)

    for sweep in range(1, max_iters + 1):
        for n in range(N):
            # other users are fixed while user n's modes are swept
            W = _weighted_residual(Z, G, X, n)
            if trace_updates:
                fs = list(factors[n])
                for k in (1, 2, 3):
                    fs[k - 1] = _bcd_factor(W, gains[n], fs, k)
                    factors[n] = FactorSet(*fs)
                    X[n] = cpd_reconstruct(*fs)
                    state.objective_trace.append(objective(obs, factors))
            else:
                _bcd_sweep(W, gains[n], factors, n)
                X[n] = cpd_reconstruct(*factors[n])
        cur = objective(obs, factors)
        if not trace_updates:
            state.objective_trace.append(cur)
        state.iterations = sweep
        if callback is not None:
            callback(sweep, state)
        scale = max(prev, np.finfo(float).tiny)
        if abs(prev - cur) / scale < rel_tol or cur <= floor:
            state.converged = True
            break
        prev = cur

    state.collapsed_columns = sum(count_collapsed(f) for f in factors)
    if state.collapsed_columns:
        log.info("BCD finished with %d collapsed columns", state.collapsed_columns)
    state.estimates = X
    return state


__all__ = [
    "BcdState",
    "ConvergenceError",
    "SingularSystemError",
    "bcd_solve",
    "bcd_update_factor",
    "hpd_inverse",
    "ls_channels",
    "ls_estimate",
    "objective",
    "pilot_statistics",
    "random_factors",
    "residual_tensor",
    "right_solve",
    "user_tensors",
]
