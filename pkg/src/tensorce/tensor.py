"""Dense complex third-order tensor algebra.

Tensors are plain ``complex128`` numpy arrays of shape ``(I1, I2, I3)``;
matrices are 2-D ``complex128`` arrays. Modes are numbered 1, 2, 3.

Unfolding convention
--------------------
Entry ``X[i1, i2, i3]`` (0-based) lands in the mode-k unfolding at row
``i_k`` and column

* mode 1: ``i3 * I2 + i2``
* mode 2: ``i3 * I1 + i1``
* mode 3: ``i2 * I1 + i1``

i.e. the remaining modes are laid out in descending order with the
higher mode varying slowest. With :func:`khatri_rao` putting the left
operand's index slowest, this gives, for ``X = [[F1, F2, F3]]``::

    unfold(X, 1) == F1 @ khatri_rao(F3, F2).T
    unfold(X, 2) == F2 @ khatri_rao(F3, F1).T
    unfold(X, 3) == F3 @ khatri_rao(F2, F1).T
"""

from itertools import combinations

import numpy as np

from . import _accel

MODES = (1, 2, 3)

# axis permutation applied before the reshape, per mode
_PERM = {1: (0, 2, 1), 2: (1, 2, 0), 3: (2, 1, 0)}
_INV_PERM = {k: tuple(np.argsort(p)) for k, p in _PERM.items()}


class DimensionError(ValueError):
    """Operand shapes are inconsistent."""


def _check_mode(k):
    if k not in MODES:
        raise ValueError(f"mode must be one of 1, 2, 3, got {k!r}")


def as_tensor3(X):
    """Validate and return ``X`` as a complex128 array of order 3."""
    X = np.asarray(X, dtype=np.complex128)
    if X.ndim != 3 or min(X.shape) < 1:
        raise DimensionError(f"expected a non-empty order-3 tensor, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("tensor has non-finite entries")
    return X


def other_modes(k):
    """The two modes other than ``k``, in descending order."""
    _check_mode(k)
    return tuple(j for j in (3, 2, 1) if j != k)


def khatri_rao(A, B):
    """Column-wise Kronecker product, ``A``'s row index varying slowest.

    >>> khatri_rao(np.array([[1], [2]]), np.array([[3], [4]])).ravel()
    array([3, 4, 6, 8])
    """
    A = np.asarray(A)
    B = np.asarray(B)
    if A.ndim != 2 or B.ndim != 2:
        raise DimensionError("khatri_rao expects two matrices")
    if A.shape[1] != B.shape[1]:
        raise DimensionError(f"column mismatch: {A.shape[1]} vs {B.shape[1]}")
    return (A[:, None, :] * B[None, :, :]).reshape(A.shape[0] * B.shape[0], A.shape[1])


def khatri_rao_excluding(factors, k):
    """Khatri-Rao product of the factors of all modes except ``k``,
    taken in descending mode order (``factors`` is indexed 0..2)."""
    hi, lo = other_modes(k)
    return khatri_rao(factors[hi - 1], factors[lo - 1])


def unfold(X, k):
    """Mode-``k`` unfolding of an order-3 tensor (see module docs)."""
    _check_mode(k)
    X = np.asarray(X)
    if X.ndim != 3:
        raise DimensionError(f"expected an order-3 tensor, got ndim={X.ndim}")
    return X.transpose(_PERM[k]).reshape(X.shape[k - 1], -1)


def fold(M, k, dims):
    """Inverse of :func:`unfold`."""
    _check_mode(k)
    M = np.asarray(M)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise DimensionError(f"dims must have three entries, got {dims}")
    permuted = tuple(dims[p] for p in _PERM[k])
    expected = (permuted[0], permuted[1] * permuted[2])
    if M.shape != expected:
        raise DimensionError(f"mode-{k} unfolding of {dims} has shape {expected}, got {M.shape}")
    return M.reshape(permuted).transpose(_INV_PERM[k])


def cpd_reconstruct(A, B, C):
    """Sum of rank-one terms ``A[:, r] o B[:, r] o C[:, r]``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.complex128))
    B = np.atleast_2d(np.asarray(B, dtype=np.complex128))
    C = np.atleast_2d(np.asarray(C, dtype=np.complex128))
    if not (A.shape[1] == B.shape[1] == C.shape[1]):
        raise DimensionError(
            f"factor column counts differ: {A.shape[1]}, {B.shape[1]}, {C.shape[1]}"
        )
    if A.shape[1] == 0:
        return np.zeros((A.shape[0], B.shape[0], C.shape[0]), dtype=np.complex128)
    return _accel.cpd_full(A, B, C)


def gram_conj(F):
    """``F^T F^*``, the Gram matrix appearing in the normal equations."""
    return F.T @ F.conj()


def hadamard_gram(factors, k):
    """``(KR)^T (KR)^*`` for the Khatri-Rao product of all modes except
    ``k``, computed as a Hadamard product of per-mode Grams."""
    hi, lo = other_modes(k)
    return gram_conj(factors[hi - 1]) * gram_conj(factors[lo - 1])


def mttkrp(X, factors, k):
    """``unfold(X, k) @ conj(khatri_rao_excluding(factors, k))`` without
    forming the Khatri-Rao product."""
    _check_mode(k)
    A, B, C = factors
    return _accel.mttkrp(X, A, B, C, k - 1)


def kruskal_rank(A, rtol=1e-8):
    """Largest ``k`` such that every set of ``k`` columns of ``A`` is
    linearly independent.

    Exhaustive over column subsets, so only meant for small diagnostic
    matrices. A subset counts as independent when its smallest singular
    value exceeds ``rtol`` times the largest singular value of ``A``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.complex128))
    n_cols = A.shape[1]
    if n_cols == 0:
        return 0
    smax = np.linalg.norm(A, 2)
    if smax == 0.0:
        return 0
    tol = rtol * smax
    krank = 0
    for size in range(1, min(A.shape) + 1):
        for cols in combinations(range(n_cols), size):
            s = np.linalg.svd(A[:, cols], compute_uv=False)
            if s[-1] <= tol:
                return krank
        krank = size
    return krank
