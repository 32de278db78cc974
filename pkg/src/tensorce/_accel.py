"""Hot tensor kernels with an optional numba path.

Two implementations of every kernel live here: a numba ``@njit`` loop
version and a plain numpy version. The numba path is used when numba
imports cleanly and ``TENSORCE_DISABLE_NUMBA`` is unset or ``0``. Both
paths compute identical quantities; ``benchmarks/bench_kernels.py``
compares their speed.

Index convention shared by every kernel: a tensor ``X`` of shape
``(I1, I2, I3)`` and factors ``A [I1,R]``, ``B [I2,R]``, ``C [I3,R]`` with
``X[a, b, c] = sum_r A[a, r] * B[b, r] * C[c, r]``.
"""

import os

import numpy as np

_DISABLED = os.environ.get("TENSORCE_DISABLE_NUMBA", "0").lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by TENSORCE_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def _cpd_full_np(A, B, C):
    return np.einsum("ar,br,cr->abc", A, B, C, optimize=True)


def _mttkrp_np(X, A, B, C, mode):
    # Contracts X against the conjugated factors of the two other modes.
    if mode == 0:
        return np.einsum("abc,br,cr->ar", X, B.conj(), C.conj(), optimize=True)
    if mode == 1:
        return np.einsum("abc,ar,cr->br", X, A.conj(), C.conj(), optimize=True)
    return np.einsum("abc,ar,br->cr", X, A.conj(), B.conj(), optimize=True)


if HAVE_NUMBA:

    @njit(cache=True)
    def _cpd_full_nb(A, B, C):
        I1, R = A.shape
        I2 = B.shape[0]
        I3 = C.shape[0]
        out = np.zeros((I1, I2, I3), dtype=np.complex128)
        for a in range(I1):
            for b in range(I2):
                for r in range(R):
                    ab = A[a, r] * B[b, r]
                    for c in range(I3):
                        out[a, b, c] += ab * C[c, r]
        return out

    @njit(cache=True)
    def _mttkrp_nb(X, A, B, C, mode):
        I1, I2, I3 = X.shape
        R = A.shape[1]
        if mode == 0:
            out = np.zeros((I1, R), dtype=np.complex128)
        elif mode == 1:
            out = np.zeros((I2, R), dtype=np.complex128)
        else:
            out = np.zeros((I3, R), dtype=np.complex128)
        for a in range(I1):
            for b in range(I2):
                for c in range(I3):
                    x = X[a, b, c]
                    if x == 0:
                        continue
                    for r in range(R):
                        if mode == 0:
                            out[a, r] += x * np.conj(B[b, r] * C[c, r])
                        elif mode == 1:
                            out[b, r] += x * np.conj(A[a, r] * C[c, r])
                        else:
                            out[c, r] += x * np.conj(A[a, r] * B[b, r])
        return out


def _as_c128(M):
    return np.ascontiguousarray(M, dtype=np.complex128)


def cpd_full(A, B, C, use_numba=None):
    """Dense tensor from three factor matrices with a common column count."""
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba:
        return _cpd_full_nb(_as_c128(A), _as_c128(B), _as_c128(C))
    return _cpd_full_np(A, B, C)


def mttkrp(X, A, B, C, mode, use_numba=None):
    """Mode-``mode`` unfolding of ``X`` times the conjugated Khatri-Rao
    product of the other two factors (the factor of ``mode`` is ignored).
    """
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba:
        # A, B, C must all be arrays for the compiled signature.
        return _mttkrp_nb(_as_c128(X), _as_c128(A), _as_c128(B), _as_c128(C), int(mode))
    return _mttkrp_np(X, A, B, C, mode)


# ----------------------------------------------------------------------
# per-user sweeps: the three factor updates of one user, in place.
# ``Fs``/``Ms``/``Cs`` are tuples of the three factor (mean) / covariance
# arrays; ``W`` is the pilot-weighted residual of the user. Both return
# the largest relative change of a factor (mean) over the sweep.


def _others(k):
    # remaining modes in descending order
    if k == 0:
        return 2, 1
    if k == 1:
        return 2, 0
    return 1, 0


def _hpd_inv_np(P):
    Lc = np.linalg.cholesky(P)
    Li = np.linalg.inv(Lc)
    return Li.conj().T @ Li


def _vi_user_sweep_np(W, Ms, Cs, gam, beta, gain):
    change = 0.0
    R = Ms[0].shape[1]
    for k in range(3):
        j1, j2 = _others(k)
        S1 = Ms[j1].conj().T @ Ms[j1] + Ms[j1].shape[0] * Cs[j1]
        S2 = Ms[j2].conj().T @ Ms[j2] + Ms[j2].shape[0] * Cs[j2]
        P = (gain * beta) * (S1.conj() * S2.conj())
        P[np.diag_indices(R)] += gam
        P = 0.5 * (P + P.conj().T)
        cov = _hpd_inv_np(P)
        mean = beta * (_mttkrp_np(W, Ms[0], Ms[1], Ms[2], k) @ cov)
        nrm = np.linalg.norm(mean)
        if nrm > 0:
            change = max(change, np.linalg.norm(mean - Ms[k]) / nrm)
        Ms[k][...] = mean
        Cs[k][...] = cov
    return change


def _bcd_user_sweep_np(W, Fs, gain):
    change = 0.0
    for k in range(3):
        j1, j2 = _others(k)
        gram = gain * ((Fs[j1].T @ Fs[j1].conj()) * (Fs[j2].T @ Fs[j2].conj()))
        gram = 0.5 * (gram + gram.conj().T)
        rhs = _mttkrp_np(W, Fs[0], Fs[1], Fs[2], k)
        new = rhs @ _hpd_inv_np(gram)
        nrm = np.linalg.norm(new)
        if nrm > 0:
            change = max(change, np.linalg.norm(new - Fs[k]) / nrm)
        Fs[k][...] = new
    return change


if HAVE_NUMBA:

    @njit(cache=True)
    def _hpd_inv_nb(P):
        Lc = np.linalg.cholesky(P)
        Li = np.linalg.inv(Lc)
        return Li.conj().T @ Li

    @njit(cache=True)
    def _second_moment_nb(M, C):
        return M.conj().T @ M + M.shape[0] * C

    @njit(cache=True)
    def _vi_user_sweep_nb(W, M0, M1, M2, C0, C1, C2, gam, beta, gain):
        change = 0.0
        R = M0.shape[1]
        for k in range(3):
            if k == 0:
                S1 = _second_moment_nb(M2, C2)
                S2 = _second_moment_nb(M1, C1)
            elif k == 1:
                S1 = _second_moment_nb(M2, C2)
                S2 = _second_moment_nb(M0, C0)
            else:
                S1 = _second_moment_nb(M1, C1)
                S2 = _second_moment_nb(M0, C0)
            P = (gain * beta) * (S1.conj() * S2.conj())
            for r in range(R):
                P[r, r] += gam[r]
            P = 0.5 * (P + P.conj().T)
            cov = _hpd_inv_nb(P)
            mean = beta * (_mttkrp_nb(W, M0, M1, M2, k) @ cov)
            if k == 0:
                old = M0
            elif k == 1:
                old = M1
            else:
                old = M2
            nrm = np.sqrt(np.sum(np.abs(mean) ** 2))
            if nrm > 0:
                change = max(change, np.sqrt(np.sum(np.abs(mean - old) ** 2)) / nrm)
            old[:, :] = mean
            if k == 0:
                C0[:, :] = cov
            elif k == 1:
                C1[:, :] = cov
            else:
                C2[:, :] = cov
        return change

    @njit(cache=True)
    def _bcd_user_sweep_nb(W, F0, F1, F2, gain):
        change = 0.0
        for k in range(3):
            if k == 0:
                A, B, old = F2, F1, F0
            elif k == 1:
                A, B, old = F2, F0, F1
            else:
                A, B, old = F1, F0, F2
            gram = gain * ((A.T @ A.conj()) * (B.T @ B.conj()))
            gram = 0.5 * (gram + gram.conj().T)
            new = _mttkrp_nb(W, F0, F1, F2, k) @ _hpd_inv_nb(gram)
            nrm = np.sqrt(np.sum(np.abs(new) ** 2))
            if nrm > 0:
                change = max(change, np.sqrt(np.sum(np.abs(new - old) ** 2)) / nrm)
            old[:, :] = new
        return change


def vi_user_sweep(W, Ms, Cs, gam, beta, gain, use_numba=None):
    """Update the three factor posteriors of one user in place.

    Raises ``numpy.linalg.LinAlgError`` when a precision matrix is not
    numerically positive definite; the caller decides how to recover.
    """
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba:
        return _vi_user_sweep_nb(
            W, Ms[0], Ms[1], Ms[2], Cs[0], Cs[1], Cs[2],
            np.ascontiguousarray(gam, dtype=np.float64), float(beta), float(gain),
        )
    return _vi_user_sweep_np(W, Ms, Cs, gam, beta, gain)


def bcd_user_sweep(W, Fs, gain, use_numba=None):
    """Replace the three factors of one user by their exact block
    minimizers, in place and in mode order."""
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba:
        return _bcd_user_sweep_nb(W, Fs[0], Fs[1], Fs[2], float(gain))
    return _bcd_user_sweep_np(W, Fs, gain)
