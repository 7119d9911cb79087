"""Synthetic mixture-envelope scenarios with known generating parameters."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence

import numpy as np

from envmix.config import ScenarioConfig
from envmix.core.exceptions import SingularMatrixError
from envmix.core.linalg import FloatArray, cholesky
from envmix.core.model import Dataset, EnvelopeBasis, GroupParams, Labels, MixtureParams

logger = logging.getLogger(__name__)

MAX_PD_RETRIES = 10
MIN_EIGEN_GAP = 1e-8
MIN_EIGENVALUE = 1e-8


@dataclass(frozen=True)
class SimDataset:
    data: Dataset
    truth: MixtureParams
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def labels(self) -> Labels:
        assert self.data.true_labels is not None
        return self.data.true_labels


def group_sizes(n: int, proportions: Sequence[float]) -> np.ndarray:
    """Largest-remainder rounding of n * proportions; ties go to the earlier cluster."""
    raw = n * np.asarray(proportions, dtype=float)
    sizes = np.floor(raw).astype(np.int64)
    remainder = raw - sizes
    short = n - int(sizes.sum())
    order = np.argsort(-remainder, kind="stable")
    sizes[order[:short]] += 1
    return sizes


def random_basis(r: int, u: int, rng: np.random.Generator) -> tuple[EnvelopeBasis, int]:
    """Eigenvectors of W W^T + r I; Gamma takes the leading u of them."""
    for attempt in range(MAX_PD_RETRIES):
        W = rng.standard_normal((r, r))
        values, vectors = np.linalg.eigh(W @ W.T + r * np.eye(r))
        if r < 2 or np.min(np.diff(values)) > MIN_EIGEN_GAP:
            vectors = vectors[:, ::-1]
            return EnvelopeBasis(vectors[:, :u], vectors[:, u:]), attempt
    raise SingularMatrixError("basis covariance", "repeated eigenvalues on every retry")


def immaterial_covariance(dim: int, rng: np.random.Generator) -> tuple[FloatArray, int]:
    """Omega0 = A A^T with A entries N(1, 1)."""
    if dim == 0:
        return np.zeros((0, 0)), 0
    for attempt in range(MAX_PD_RETRIES):
        A = rng.normal(1.0, 1.0, size=(dim, dim))
        omega0 = A @ A.T
        if np.linalg.eigvalsh(omega0)[0] > MIN_EIGENVALUE:
            return omega0, attempt
    raise SingularMatrixError("Omega0", "no well-conditioned draw within the retry budget")


def _group(k: int, r: int, u: int, p: int, rng: np.random.Generator) -> GroupParams:
    # cluster k (0-based) has mean k + 1 and chi-square(k + 1) coordinates
    df = k + 1
    mu = np.full(r, float(df))
    eta = rng.chisquare(df, size=(u, p))
    if u == 1:
        omega = np.array([[rng.chisquare(1)]])
    else:
        omega = np.diag(rng.chisquare(df, size=u))
    return GroupParams(mu, eta, omega)


def draw_responses(
    theta: MixtureParams, X: FloatArray, labels: Labels, rng: np.random.Generator
) -> FloatArray:
    """Y_i = mu_k + beta_k x_i + eps_i with eps_i ~ N(0, Sigma_k), k = labels_i."""
    Y = np.empty((X.shape[0], theta.r))
    for k, (group, beta) in enumerate(zip(theta.groups, theta.betas())):
        idx = np.flatnonzero(labels == k)
        factor = cholesky(theta.sigma(k), f"Sigma_{k}")
        noise = rng.standard_normal((idx.size, theta.r)) @ factor.T
        Y[idx] = group.mu + X[idx] @ beta.T + noise
    return Y


def generate_scenario(
    cfg: ScenarioConfig, rng: Optional[np.random.Generator] = None
) -> SimDataset:
    """Draw the truth, the predictors, the labels and Y = mu_k + beta_k x + eps.

    ``rng`` defaults to a generator seeded with ``cfg.seed``.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    M, n, r, p, u = cfg.M, cfg.n, cfg.r, cfg.p, cfg.u
    proportions = cfg.resolved_proportions()

    basis, basis_retries = random_basis(r, u, rng)
    groups = tuple(_group(k, r, u, p, rng) for k in range(M))
    omega0, omega0_retries = immaterial_covariance(r - u, rng)
    truth = MixtureParams(np.asarray(proportions), groups, basis, omega0)

    X = rng.normal(1.0, 1.0, size=(n, p))
    sizes = group_sizes(n, proportions)
    labels = rng.permutation(np.repeat(np.arange(M), sizes))

    Y = draw_responses(truth, X, labels, rng)

    metadata = {
        "M": M,
        "n": n,
        "r": r,
        "p": p,
        "u": u,
        "seed": cfg.seed,
        "proportions": list(proportions),
        "group_sizes": sizes.tolist(),
        "omega_diag_extension": u > 1,
        "pd_retries": basis_retries + omega0_retries,
    }
    logger.debug(f"Generated scenario {metadata}")
    return SimDataset(Dataset(X, Y, labels), truth, metadata)
