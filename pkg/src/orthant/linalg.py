"""Dense Cholesky factorisation, coordinate permutations and variable ordering."""

from __future__ import annotations

import numpy as np
from scipy.linalg import lapack

from .gaussian import log_interval_mass, truncated_mean

__all__ = [
    "NotPositiveDefiniteError",
    "cholesky",
    "check_symmetric",
    "check_permutation",
    "invert_permutation",
    "permute_problem",
    "gibson_ordering",
]


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a Cholesky pivot is not strictly positive.

    Attributes
    ----------
    pivot : int
        One-based index of the failing pivot.
    """

    def __init__(self, pivot: int):
        self.pivot = int(pivot)
        super().__init__(f"matrix is not positive definite (pivot {self.pivot})")


def check_symmetric(sigma, rtol: float = 1e-12) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1] or sigma.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {sigma.shape}")
    scale = max(np.max(np.abs(sigma)), np.finfo(float).tiny)
    if np.max(np.abs(sigma - sigma.T)) > rtol * scale:
        raise ValueError("matrix is not symmetric")
    return sigma


def cholesky(sigma) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == sigma`` and positive diagonal.

    Raises
    ------
    NotPositiveDefiniteError
        Carrying the one-based index of the first non-positive pivot.
    """
    sigma = check_symmetric(sigma)
    c, info = lapack.dpotrf(sigma, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(info)
    if info < 0:
        raise ValueError(f"dpotrf: illegal argument {-info}")
    return c


def check_permutation(perm, d: int) -> np.ndarray:
    perm = np.asarray(perm)
    if perm.shape != (d,) or not np.array_equal(np.sort(perm), np.arange(d)):
        raise ValueError(f"not a permutation of 0..{d - 1}: {perm!r}")
    return perm.astype(int)


def invert_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm, dtype=int)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return inv


def permute_problem(sigma, a, b, perm):
    """Relabel coordinates: ``sigma'[j, k] = sigma[p[j], p[k]]``, ``a'[j] = a[p[j]]``.

    Indices are zero-based.
    """
    sigma = np.asarray(sigma, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = sigma.shape[0]
    if a.shape != (d,) or b.shape != (d,):
        raise ValueError("bound vectors and covariance have mismatched lengths")
    perm = check_permutation(perm, d)
    return sigma[np.ix_(perm, perm)], a[perm], b[perm]


def gibson_ordering(sigma, a, b) -> np.ndarray:
    """Greedy ordering of the coordinates from hardest to easiest constraint.

    At step ``j`` every remaining coordinate ``k`` is scored by the normal
    mass of its conditional interval given the earlier coordinates, with those
    earlier whitened values replaced by their truncated means.  The coordinate
    of smallest mass is moved to position ``j`` and one new column of the
    Cholesky factor is computed, as in a pivoted Cholesky factorisation, so
    the whole ordering costs O(d^3).  Ties go to the smallest original index.

    Returns
    -------
    ndarray of int
        Zero-based permutation ``p``; the reordered problem is
        ``permute_problem(sigma, a, b, p)``.
    """
    sigma = check_symmetric(sigma).copy()
    a = np.asarray(a, dtype=float).copy()
    b = np.asarray(b, dtype=float).copy()
    d = sigma.shape[0]
    if a.shape != (d,) or b.shape != (d,):
        raise ValueError("bound vectors and covariance have mismatched lengths")

    perm = np.arange(d)
    L = np.zeros((d, d))
    eta = np.zeros(d)
    for j in range(d):
        rest = slice(j, d)
        var = np.diag(sigma)[rest] - np.sum(L[rest, :j] ** 2, axis=1)
        if np.any(var <= 0.0):
            k = j + int(np.argmax(var <= 0.0))
            raise NotPositiveDefiniteError(perm[k] + 1)
        sd = np.sqrt(var)
        shift = L[rest, :j] @ eta[:j]
        lo = (a[rest] - shift) / sd
        hi = (b[rest] - shift) / sd
        mass = log_interval_mass(lo, hi)
        best = np.flatnonzero(mass == mass.min())
        k = j + best[np.argmin(perm[j + best])]

        if k != j:
            perm[[j, k]] = perm[[k, j]]
            a[[j, k]] = a[[k, j]]
            b[[j, k]] = b[[k, j]]
            sigma[[j, k], :] = sigma[[k, j], :]
            sigma[:, [j, k]] = sigma[:, [k, j]]
            L[[j, k], :j] = L[[k, j], :j]

        ljj = sd[k - j]
        L[j, j] = ljj
        below = slice(j + 1, d)
        L[below, j] = (sigma[below, j] - L[below, :j] @ L[j, :j]) / ljj
        eta[j] = truncated_mean(lo[k - j], hi[k - j])
    return perm
