"""Small dense linear-algebra helpers for repeated Gaussian evaluations.

Everything here works on plain float64 arrays and is deliberately boring:
Cholesky factorizations with a bounded jitter retry, log-densities evaluated
through cached factors, and a couple of solve wrappers. Matrices passed in
are expected to be symmetric; only the lower triangle is read.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import IllConditionedModelError

LOG_2PI = float(np.log(2.0 * np.pi))

# Jitter policy for almost-singular SPD matrices: add eps * mean(diag) to the
# diagonal, escalating by a factor of 10 per retry, at most `attempts` times.
JITTER_SCALE = 1e-8
JITTER_ATTEMPTS = 3


def chol_spd(matrix: np.ndarray, *, context: str = "matrix",
             component: int | None = None) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Retries with escalating diagonal jitter before giving up; raises
    :class:`IllConditionedModelError` naming ``context`` if the matrix stays
    indefinite after the last attempt.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise IllConditionedModelError(
            f"{context} is not square: shape {matrix.shape}", component)
    if matrix.shape[0] == 0:
        return np.zeros((0, 0))
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    base = JITTER_SCALE * float(np.trace(matrix)) / matrix.shape[0]
    if base <= 0.0 or not np.isfinite(base):
        base = JITTER_SCALE
    eye = np.eye(matrix.shape[0])
    for attempt in range(JITTER_ATTEMPTS):
        try:
            return np.linalg.cholesky(matrix + (base * 10.0 ** attempt) * eye)
        except np.linalg.LinAlgError:
            continue
    raise IllConditionedModelError(
        f"{context} is not positive definite even after diagonal jitter",
        component)


def chol_logdet(chol: np.ndarray) -> float:
    """log|M| from the lower Cholesky factor of M."""
    if chol.shape[0] == 0:
        return 0.0
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def chol_solve(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve M x = rhs given the lower Cholesky factor of M."""
    half = solve_triangular(chol, rhs, lower=True)
    return solve_triangular(chol, half, lower=True, trans="T")


def inv_spd(chol: np.ndarray) -> np.ndarray:
    """Inverse of an SPD matrix from its lower Cholesky factor, symmetrized."""
    inv = chol_solve(chol, np.eye(chol.shape[0]))
    return 0.5 * (inv + inv.T)


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def gauss_logpdf(points: np.ndarray, mean: np.ndarray,
                 chol: np.ndarray) -> np.ndarray:
    """log N(points; mean, M) rows-at-a-time, M given by its Cholesky factor.

    ``points`` has shape (n, d) (or (d,) for a single point); returns shape
    (n,) (or a scalar array).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    diff = pts - mean
    half = solve_triangular(chol, diff.T, lower=True)
    quad = np.einsum("dn,dn->n", half, half)
    dim = mean.shape[0]
    out = -0.5 * (dim * LOG_2PI + chol_logdet(chol) + quad)
    return out[0] if np.asarray(points).ndim == 1 else out


def gauss_logpdf_diag(points: np.ndarray, mean: np.ndarray,
                      variances: np.ndarray) -> np.ndarray:
    """log N(points; mean, diag(variances)).

    Either side may be row-stacked: (n, d) points against a (d,) mean, a
    single (d,) point against (n, d) means, or matched batches. The result
    is scalar only when both sides are single vectors.
    """
    pts = np.asarray(points, dtype=np.float64)
    mn = np.asarray(mean, dtype=np.float64)
    single = pts.ndim == 1 and mn.ndim == 1
    diff = np.atleast_2d(pts) - np.atleast_2d(mn)
    quad = np.einsum("nd,d->n", diff * diff, 1.0 / variances)
    dim = diff.shape[1]
    logdet = float(np.sum(np.log(variances)))
    out = -0.5 * (dim * LOG_2PI + logdet + quad)
    return out[0] if single else out


def condition_number_spd(matrix: np.ndarray) -> float:
    """2-norm condition number of a small symmetric matrix."""
    if matrix.shape[0] == 0:
        return 1.0
    eig = np.linalg.eigvalsh(symmetrize(matrix))
    lo, hi = float(eig[0]), float(eig[-1])
    if lo <= 0.0:
        return np.inf
    return hi / lo
