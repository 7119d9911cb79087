import numpy as np
import pytest

from envmix.core.exceptions import NotPositiveDefiniteError
from envmix.core.linalg import (
    cholesky,
    inverse_pd,
    is_orthonormal,
    logdet_pd,
    orthonormal_completion,
    qr_retract,
    regularized_cholesky,
    whiten_rows,
)

SEEDS = range(50)


def _spd(rng: np.random.Generator, d: int) -> np.ndarray:
    a = rng.standard_normal((d, d))
    return a @ a.T + d * np.eye(d)


@pytest.mark.parametrize("seed", SEEDS)
def test_logdet_matches_slogdet(seed: int) -> None:
    rng = np.random.default_rng(seed)
    a = _spd(rng, int(rng.integers(1, 8)))
    sign, expected = np.linalg.slogdet(a)
    assert sign == 1.0
    assert logdet_pd(a, "A") == pytest.approx(expected, abs=1e-10)


@pytest.mark.parametrize("seed", SEEDS)
def test_completion_splits_space(seed: int) -> None:
    rng = np.random.default_rng(seed)
    r = int(rng.integers(2, 9))
    u = int(rng.integers(0, r + 1))
    gamma = qr_retract(rng.standard_normal((r, u))) if u else np.zeros((r, 0))
    gamma0 = orthonormal_completion(gamma)
    full = np.hstack([gamma, gamma0])
    assert full.shape == (r, r)
    assert np.allclose(full.T @ full, np.eye(r), atol=1e-10)


@pytest.mark.parametrize("seed", SEEDS)
def test_qr_retract_is_orthonormal_and_idempotent(seed: int) -> None:
    rng = np.random.default_rng(seed)
    q = qr_retract(rng.standard_normal((6, 3)))
    assert is_orthonormal(q, 1e-10)
    assert np.allclose(qr_retract(q), q, atol=1e-12)


def test_whitening_gives_mahalanobis_form() -> None:
    rng = np.random.default_rng(3)
    a = _spd(rng, 4)
    rows = rng.standard_normal((5, 4))
    white = whiten_rows(rows, cholesky(a, "A"))
    expected = np.einsum("ij,jk,ik->i", rows, np.linalg.inv(a), rows)
    assert np.allclose(np.sum(white**2, axis=1), expected)


def test_cholesky_names_the_matrix() -> None:
    with pytest.raises(NotPositiveDefiniteError, match="Omega_3"):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]), "Omega_3")


def test_cholesky_of_empty_matrix() -> None:
    assert cholesky(np.zeros((0, 0)), "empty").shape == (0, 0)


def test_regularized_cholesky_adds_trace_scaled_ridge() -> None:
    v = np.array([[1.0], [2.0], [3.0]])
    singular = v @ v.T
    factor, used = regularized_cholesky(singular, "S")
    lam = 1e-8 * np.trace(singular) / 3
    assert np.allclose(used, singular + lam * np.eye(3))
    assert np.allclose(factor @ factor.T, used)


def test_inverse_pd() -> None:
    a = _spd(np.random.default_rng(0), 5)
    assert np.allclose(inverse_pd(a, "A") @ a, np.eye(5), atol=1e-10)
