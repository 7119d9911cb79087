"""Factorization helpers: every log-determinant and inverse in envmix goes through here."""

from typing import Tuple

import numpy as np
from numpy.typing import NDArray
from scipy import linalg

from envmix.core.exceptions import NotPositiveDefiniteError, SingularMatrixError

FloatArray = NDArray[np.float64]

RIDGE_SCALE = 1e-8


def symmetrize(a: FloatArray) -> FloatArray:
    return (a + a.T) / 2.0


def is_symmetric(a: FloatArray, tol: float = 1e-10) -> bool:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    return bool(np.all(np.abs(a - a.T) <= tol * scale))


def cholesky(a: FloatArray, name: str) -> FloatArray:
    """Lower Cholesky factor of a symmetric PD matrix, or NotPositiveDefiniteError."""
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotPositiveDefiniteError(name, f"shape {a.shape} is not square")
    if a.shape[0] == 0:
        return np.zeros((0, 0))
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefiniteError(name, "non-finite entries")
    if not is_symmetric(a, tol=1e-8):
        raise NotPositiveDefiniteError(name, "not symmetric")
    try:
        return linalg.cholesky(symmetrize(a), lower=True)
    except linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(name, str(e)) from e


def logdet_from_cholesky(factor: FloatArray) -> float:
    if factor.shape[0] == 0:
        return 0.0
    return float(2.0 * np.sum(np.log(np.diag(factor))))


def logdet_pd(a: FloatArray, name: str) -> float:
    return logdet_from_cholesky(cholesky(a, name))


def whiten_rows(rows: FloatArray, factor: FloatArray) -> FloatArray:
    """Return L^{-1} r_i for each row r_i, so ||.||^2 is the Mahalanobis form."""
    if factor.shape[0] == 0:
        return np.zeros((rows.shape[0], 0))
    return linalg.solve_triangular(factor, rows.T, lower=True).T


def ridge(a: FloatArray) -> FloatArray:
    dim = a.shape[0]
    trace = float(np.trace(a))
    lam = RIDGE_SCALE * trace / dim if trace > 0 else RIDGE_SCALE
    return a + lam * np.eye(dim)


def regularized_cholesky(a: FloatArray, name: str) -> Tuple[FloatArray, FloatArray]:
    """Cholesky of ``a``, retried once with a trace-scaled ridge.

    Returns the factor and the matrix actually factorized.
    """
    a = symmetrize(a)
    try:
        return cholesky(a, name), a
    except NotPositiveDefiniteError:
        pass
    a_ridge = ridge(a)
    try:
        return cholesky(a_ridge, name), a_ridge
    except NotPositiveDefiniteError as e:
        raise SingularMatrixError(name, "ridge regularization did not help") from e


def inverse_pd(a: FloatArray, name: str) -> FloatArray:
    factor, _ = regularized_cholesky(a, name)
    return symmetrize(linalg.cho_solve((factor, True), np.eye(a.shape[0])))


def orthonormal_completion(gamma: FloatArray) -> FloatArray:
    """Orthonormal basis of the orthogonal complement of span(gamma)."""
    r, u = gamma.shape
    if u == 0:
        return np.eye(r)
    if u == r:
        return np.zeros((r, 0))
    return linalg.null_space(gamma.T)


def qr_retract(a: FloatArray) -> FloatArray:
    """Q factor of ``a`` with a positive R diagonal (unique, so deterministic)."""
    q, rmat = np.linalg.qr(a)
    signs = np.sign(np.diag(rmat))
    signs[signs == 0] = 1.0
    return q * signs


def is_orthonormal(q: FloatArray, tol: float = 1e-10) -> bool:
    if q.shape[1] == 0:
        return True
    return bool(np.max(np.abs(q.T @ q - np.eye(q.shape[1]))) <= tol)
