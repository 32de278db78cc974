"""Tuning-free variational Bayes estimator with automatic path-count
control.

Model: each user's channel tensor is a CPD with ``Rbar`` columns whose
factor columns have CN(0, 1/gamma_r) priors, gamma_r ~ Gamma(eps, eps),
and the noise precision beta ~ Gamma(eps, eps). The mean-field
posterior keeps

* a matrix-normal ``CMN(M, I, Sigma)`` for every factor matrix, so that
  ``E[F^H F] = M^H M + I_k Sigma``;
* ``Gamma(a_r, b_r)`` for every column precision;
* ``Gamma(c, d)`` for the noise precision.

Large ``E[gamma_r] = a_r / b_r`` means column ``r`` has been shrunk
away; the retained paths are the ones with small ``E[gamma_r]``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .channel import complex_normal
from .estimators import (
    ConvergenceError,
    SingularSystemError,
    _ranks_list,
    _weighted_residual,
    hpd_inverse,
    pilot_statistics,
    user_tensors,
)
from .tensor import cpd_reconstruct, khatri_rao, mttkrp, other_modes, unfold

log = logging.getLogger(__name__)

EPS = 1e-6
FIT_NEG_TOL = 1e-8


class DomainError(ValueError):
    """A precision parameter is not positive."""


@dataclass
class PosteriorState:
    """Variational parameters.

    ``means[n][k-1]`` is ``[I_k, Rbar_n]``, ``covs[n][k-1]`` is
    ``[Rbar_n, Rbar_n]``; ``a[n]``, ``b[n]`` hold the column-precision
    Gamma parameters of user ``n``.
    """

    means: list
    covs: list
    a: list
    b: list
    c: float
    d: float
    eps: float = EPS

    @property
    def dims(self):
        return tuple(M.shape[0] for M in self.means[0])

    @property
    def rank_bounds(self):
        return [m[0].shape[1] for m in self.means]

    @property
    def n_users(self):
        return len(self.means)

    def gamma_means(self, n):
        return self.a[n] / self.b[n]

    def beta_mean(self):
        return self.c / self.d

    def user_tensor(self, n):
        return cpd_reconstruct(*self.means[n])

    def estimates(self):
        return np.stack([self.user_tensor(n) for n in range(self.n_users)])

    def copy(self):
        return PosteriorState(
            [[M.copy() for M in m] for m in self.means],
            [[S.copy() for S in s] for s in self.covs],
            [x.copy() for x in self.a],
            [x.copy() for x in self.b],
            self.c,
            self.d,
            self.eps,
        )


def init_state(dims, rank_bounds, rng=None, eps=EPS):
    """CN(0, 1) means, identity covariances, all Gamma parameters ``eps``."""
    rng = np.random.default_rng(rng)
    means, covs, a, b = [], [], [], []
    for R in rank_bounds:
        means.append([complex_normal(rng, (I, R)) for I in dims])
        covs.append([np.eye(R, dtype=np.complex128) for _ in dims])
        a.append(np.full(R, eps))
        b.append(np.full(R, eps))
    return PosteriorState(means, covs, a, b, eps, eps, eps)


def second_moment(state, n, k):
    """``E[F^H F] = M^H M + I_k Sigma`` for the mode-``k`` factor of user ``n``."""
    M = state.means[n][k - 1]
    return M.conj().T @ M + M.shape[0] * state.covs[n][k - 1]


def expected_gram(state, n, k):
    """``E[(KR)^T (KR)^*]`` for the Khatri-Rao product of user ``n``'s
    factors over the modes other than ``k``."""
    out = None
    for j in other_modes(k):
        term = second_moment(state, n, j).conj()
        out = term if out is None else out * term
    return out


def expected_column_power(state, n, k, r):
    """``E[||F[:, r]||^2]`` for the mode-``k`` factor of user ``n``."""
    M = state.means[n][k - 1]
    val = np.vdot(M[:, r], M[:, r]) + M.shape[0] * state.covs[n][k - 1][r, r]
    return float(val.real)


def _precision(state, gain, n, k):
    P = gain * state.beta_mean() * expected_gram(state, n, k)
    return P + np.diag(state.gamma_means(n))


def _factor_update(state, W, gain, n, k):
    cov = hpd_inverse(_precision(state, gain, n, k))
    mean = state.beta_mean() * mttkrp(W, state.means[n], k) @ cov
    return mean, cov


def _user_sweep(state, W, gain, n):
    """Update the three factor posteriors of user ``n`` in place and return
    the largest relative change of a mean."""
    gam = state.gamma_means(n)
    beta = state.beta_mean()
    try:
        return _accel.vi_user_sweep(W, state.means[n], state.covs[n], gam, beta, gain)
    except np.linalg.LinAlgError:
        pass
    change = 0.0
    for k in (1, 2, 3):
        try:
            mean, cov = _factor_update(state, W, gain, n, k)
        except SingularSystemError as exc:
            raise ConvergenceError(f"precision matrix of user {n}, mode {k} is singular") from exc
        old = state.means[n][k - 1]
        nrm = np.linalg.norm(mean)
        if nrm > 0:
            change = max(change, np.linalg.norm(mean - old) / nrm)
        state.means[n][k - 1] = mean
        state.covs[n][k - 1] = cov
    return change


def update_factor_posterior(state, obs, n, k, stats=None):
    """New ``(M, Sigma)`` for the mode-``k`` factor of user ``n``.

    Returns the pair without touching ``state``; other users enter
    through their current means.
    """
    Z, G = stats if stats is not None else pilot_statistics(obs)
    X = np.stack([state.user_tensor(p) for p in range(state.n_users)])
    W = _weighted_residual(Z, G, X, n)
    return _factor_update(state, W, G[n, n].real, n, k)


def update_gamma_posterior(state, n):
    """New ``(a, b)`` arrays for the column precisions of user ``n``."""
    dims = state.dims
    a = np.full(state.rank_bounds[n], state.eps + sum(dims), dtype=float)
    b = np.full_like(a, state.eps)
    for k in (1, 2, 3):
        b += second_moment(state, n, k).diagonal().real
    return a, b


def _check_fit(value, scale):
    if value < -FIT_NEG_TOL * max(scale, np.finfo(float).tiny):
        raise ArithmeticError(f"expected fit error is negative ({value:.6g} vs scale {scale:.6g})")
    return max(value, 0.0)


def expected_fit_error(state, obs, l):
    """``E||Y_l - sum_n s_n(l) [[F_n]]||_F^2`` under the current posterior,
    evaluated in closed form through mode-1 unfoldings."""
    Y1 = unfold(obs.Y[l], 1)
    s = obs.pilots[l]
    N = state.n_users
    norm_y = float(np.vdot(Y1, Y1).real)
    kr = [khatri_rao(state.means[n][2], state.means[n][1]) for n in range(N)]
    M1 = [state.means[n][0] for n in range(N)]

    cross = 0.0
    for n in range(N):
        cross += np.trace(Y1 @ (np.conj(s[n]) * kr[n].conj()) @ M1[n].conj().T).real
    coupled = 0.0
    for n in range(N):
        for p in range(N):
            if p != n:
                coupled += (
                    s[n] * np.conj(s[p]) * np.trace(M1[n] @ kr[n].T @ kr[p].conj() @ M1[p].conj().T)
                ).real
    own = 0.0
    for n in range(N):
        had = second_moment(state, n, 2).conj() * second_moment(state, n, 3).conj()
        own += abs(s[n]) ** 2 * np.trace(second_moment(state, n, 1) @ had).real
    return _check_fit(norm_y - 2.0 * cross + coupled + own, norm_y)


def total_expected_fit_error(state, obs, stats=None, X=None):
    """``sum_l expected_fit_error(l)`` using the pilot statistics."""
    Z, G = stats if stats is not None else pilot_statistics(obs)
    if X is None:
        X = state.estimates()
    N = state.n_users
    norm_y = float(np.vdot(obs.Y, obs.Y).real)
    total = norm_y
    inner = X.reshape(N, -1).conj() @ X.reshape(N, -1).T  # inner[p, n] = <X_n, X_p>
    for n in range(N):
        total -= 2.0 * np.vdot(X[n], Z[n]).real
        had = second_moment(state, n, 2).conj() * second_moment(state, n, 3).conj()
        total += G[n, n].real * np.trace(second_moment(state, n, 1) @ had).real
        for p in range(N):
            if p != n:
                total += (G[p, n] * inner[p, n]).real
    return _check_fit(total, norm_y)


def update_noise_posterior(state, obs, stats=None):
    """New ``(c, d)`` for the noise precision."""
    c = state.eps + float(np.prod(state.dims)) * obs.n_pilots
    d = state.eps + total_expected_fit_error(state, obs, stats)
    return c, d


def log_joint(obs, factors, gammas, beta, eps=EPS):
    """Log joint density of data, factors, column precisions and noise
    precision, up to an additive constant.

    ``factors`` is a list of per-user factor triples, ``gammas`` a list of
    per-user precision arrays.
    """
    beta = float(beta)
    if not beta > 0:
        raise DomainError(f"noise precision must be positive, got {beta}")
    gammas = [np.asarray(g, dtype=float) for g in gammas]
    if any(np.any(g <= 0) for g in gammas):
        raise DomainError("column precisions must be positive")
    dims = obs.dims
    X = user_tensors(factors)
    res = obs.Y - np.einsum("ln,nabc->labc", obs.pilots, X)
    fit = float(np.vdot(res, res).real)
    n_obs = float(np.prod(dims)) * obs.n_pilots
    val = n_obs * np.log(beta) - beta * fit + (eps - 1.0) * np.log(beta) - eps * beta
    for fs, g in zip(factors, gammas):
        for F in fs:
            power = np.sum(np.abs(F) ** 2, axis=0)
            val += -np.dot(g, power) + F.shape[0] * np.sum(np.log(g))
        val += np.sum((eps - 1.0) * np.log(g) - eps * g)
    return float(val)


def estimate_path_count(gamma_means):
    """Number of retained components from the column precisions.

    The sorted ``log10`` precisions are split at their largest consecutive
    gap and the count below the gap is returned. When the spread is less
    than a decade every component is kept.
    """
    g = np.sort(np.asarray(gamma_means, dtype=float))
    if g.size == 0:
        raise ValueError("no components")
    if g.size == 1 or g[-1] / g[0] < 10.0:
        return int(g.size)
    gaps = np.diff(np.log10(g))
    return int(np.argmax(gaps) + 1)


@dataclass
class ViResult:
    state: PosteriorState
    estimates: np.ndarray
    iterations: int = 0
    converged: bool = False
    path_counts: list = field(default_factory=list)
    mse_trace: list = field(default_factory=list)
    beta_trace: list = field(default_factory=list)
    gamma_trace: list = field(default_factory=list)


def truncate(state, counts):
    """Copy of ``state`` with each user's means restricted to the
    ``counts[n]`` columns of smallest ``E[gamma]`` (others zeroed)."""
    out = state.copy()
    for n, keep in enumerate(counts):
        drop = np.argsort(state.gamma_means(n))[keep:]
        for M in out.means[n]:
            M[:, drop] = 0.0
    return out


def vi_solve(
    obs,
    rank_bounds,
    eps=EPS,
    init=None,
    max_iters=500,
    rel_tol=1e-6,
    truth=None,
    prune=False,
    callback=None,
):
    """Mean-field coordinate ascent over all variational factors.

    Each iteration updates, in order, the factor posteriors of every user
    (users outer, modes inner, updated in place), then all column-precision
    posteriors, then the noise posterior. Iteration stops once the largest
    relative change of any factor mean falls below ``rel_tol``.

    Parameters
    ----------
    obs : ObservationBatch
    rank_bounds : int or sequence of int
        Upper bound on the number of paths per user.
    init : PosteriorState, seed or Generator, optional
    truth : array [N, I1, I2, I3], optional
        True channels; enables the per-iteration MSE trace.
    prune : bool
        Zero out the columns beyond :func:`estimate_path_count` before
        forming the channel estimates.
    """
    from .metrics import mse

    N = obs.n_users
    if not eps > 0:
        raise DomainError("eps must be positive")
    if isinstance(init, PosteriorState):
        state = init.copy()
    else:
        state = init_state(obs.dims, _ranks_list(rank_bounds, N), init, eps)
    stats = Z, G = pilot_statistics(obs)
    gains = G.diagonal().real
    X = user_tensors(state.means)
    result = ViResult(state=state, estimates=X)

    for it in range(1, max_iters + 1):
        change = 0.0
        for n in range(N):
            W = _weighted_residual(Z, G, X, n)
            change = max(change, _user_sweep(state, W, gains[n], n))
            X[n] = state.user_tensor(n)
        for n in range(N):
            state.a[n], state.b[n] = update_gamma_posterior(state, n)
        state.c = state.eps + float(np.prod(state.dims)) * obs.n_pilots
        state.d = state.eps + total_expected_fit_error(state, obs, stats, X)

        result.iterations = it
        result.beta_trace.append(state.beta_mean())
        result.gamma_trace.append([state.gamma_means(n).copy() for n in range(N)])
        if truth is not None:
            result.mse_trace.append(mse(X, truth))
        if callback is not None:
            callback(it, state)
        if change < rel_tol:
            result.converged = True
            break

    result.path_counts = [estimate_path_count(state.gamma_means(n)) for n in range(N)]
    if prune:
        result.estimates = truncate(state, result.path_counts).estimates()
    else:
        result.estimates = X
    return result
