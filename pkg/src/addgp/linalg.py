"""Dense linear algebra primitives: Cholesky factors, triangular solves,
log-determinants.

Everything here is a pure function on float64 arrays. All downstream code
funnels its factorizations through this module so the jitter policy and the
error taxonomy live in one place.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite

# Jitter policy for kernel Gram matrices, as fractions of the mean diagonal:
# one shot at the small value, a single retry at the large one, then give up.
KERNEL_JITTER = 1e-8
KERNEL_JITTER_RETRY = 1e-6


def cholesky(m, jitter=0.0):
    """Lower Cholesky factor of ``m + jitter * I``.

    Raises NotPositiveDefinite if LAPACK rejects the matrix.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    a = m if jitter == 0.0 else m + jitter * np.eye(m.shape[0])
    # LAPACK passes inf/nan matrices through without complaint, returning
    # garbage factors; treat them as the definiteness failures they are
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite(
            f"matrix of shape {m.shape} contains non-finite entries"
        )
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(
            f"Cholesky failed on a {m.shape[0]}x{m.shape[0]} matrix "
            f"(jitter={jitter:g})"
        ) from exc


def kernel_cholesky(m):
    """Cholesky of a kernel Gram matrix under the standard jitter policy.

    Adds ``1e-8 * mean(diag)`` to the diagonal before factorizing and retries
    once with ``1e-6 * mean(diag)`` before raising NotPositiveDefinite.
    """
    m = np.asarray(m, dtype=float)
    scale = float(np.mean(np.diag(m))) if m.size else 1.0
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    try:
        return cholesky(m, KERNEL_JITTER * scale)
    except NotPositiveDefinite:
        return cholesky(m, KERNEL_JITTER_RETRY * scale)


def tri_solve(L, rhs, transpose=False):
    """Solve ``L x = rhs`` (or ``L^T x = rhs`` when ``transpose``) for
    lower-triangular ``L``."""
    L = np.asarray(L, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise DimensionMismatch(f"triangular factor must be square, got {L.shape}")
    if rhs.shape[0] != L.shape[0]:
        raise DimensionMismatch(
            f"rhs has leading dimension {rhs.shape[0]}, factor is {L.shape[0]}"
        )
    return solve_triangular(L, rhs, lower=True, trans=1 if transpose else 0)


def solve_from_chol(L, rhs):
    """Solve ``(L L^T) x = rhs`` with two triangular solves."""
    return tri_solve(L, tri_solve(L, rhs), transpose=True)


def logdet_from_chol(L):
    """log det of ``L L^T``: twice the sum of log-diagonal entries of L."""
    d = np.diag(np.asarray(L, dtype=float))
    return 2.0 * float(np.sum(np.log(d)))
