"""Mixture envelope model types, covariance assembly and log-likelihoods.

The per-cluster model is ``Y = mu_k + Gamma eta_k X + eps`` with
``eps ~ N(0, Gamma Omega_k Gamma^T + Gamma0 Omega0 Gamma0^T)``. Every density here is
conditional on X.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.special import logsumexp

from envmix.core.exceptions import ContractViolation
from envmix.core.linalg import (
    FloatArray,
    cholesky,
    is_orthonormal,
    logdet_from_cholesky,
    orthonormal_completion,
    symmetrize,
    whiten_rows,
)

Labels = NDArray[np.int_]

PI_FLOOR = 1e-6
LOG_2PI = float(np.log(2.0 * np.pi))


def _as_matrix(a: object, name: str) -> FloatArray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be a 2-D matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Dataset:
    """Paired predictors X (n x p) and responses Y (n x r), with optional true labels."""

    X: FloatArray
    Y: FloatArray
    true_labels: Optional[Labels] = None

    def __post_init__(self) -> None:
        X = _as_matrix(self.X, "X")
        Y = _as_matrix(self.Y, "Y")
        if X.shape[0] != Y.shape[0]:
            raise ContractViolation(
                f"X has {X.shape[0]} rows but Y has {Y.shape[0]} rows"
            )
        if X.shape[0] < 1:
            raise ContractViolation("dataset is empty")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ContractViolation("dataset contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if self.true_labels is not None:
            labels = np.asarray(self.true_labels, dtype=np.int64)
            if labels.shape != (X.shape[0],):
                raise ContractViolation(
                    f"true_labels has shape {labels.shape}, expected ({X.shape[0]},)"
                )
            if labels.min() < 0:
                raise ContractViolation("true_labels must be non-negative cluster indices")
            object.__setattr__(self, "true_labels", labels)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def r(self) -> int:
        return self.Y.shape[1]

    def subset(self, index: Sequence[int] | NDArray[np.int_]) -> Dataset:
        idx = np.asarray(index, dtype=np.int64)
        labels = None if self.true_labels is None else self.true_labels[idx]
        return Dataset(self.X[idx], self.Y[idx], labels)


def validate_labels(labels: object, n: int, M: int) -> Labels:
    arr = np.asarray(labels, dtype=np.int64)
    if arr.shape != (n,):
        raise ContractViolation(f"labels have shape {arr.shape}, expected ({n},)")
    if n and (arr.min() < 0 or arr.max() >= M):
        raise ContractViolation(f"labels must lie in 0..{M - 1}")
    return arr


@dataclass(frozen=True)
class EnvelopeBasis:
    """Orthonormal basis Gamma (r x u) of the envelope and its completion Gamma0."""

    Gamma: FloatArray
    Gamma0: FloatArray

    def __post_init__(self) -> None:
        gamma = _as_matrix(self.Gamma, "Gamma")
        gamma0 = _as_matrix(self.Gamma0, "Gamma0")
        if gamma.shape[0] != gamma0.shape[0]:
            raise ContractViolation("Gamma and Gamma0 must have the same row count")
        if gamma.shape[1] + gamma0.shape[1] != gamma.shape[0]:
            raise ContractViolation(
                f"Gamma ({gamma.shape}) and Gamma0 ({gamma0.shape}) do not split R^r"
            )
        if not (is_orthonormal(gamma, 1e-8) and is_orthonormal(gamma0, 1e-8)):
            raise ContractViolation("basis columns are not orthonormal")
        if gamma.size and gamma0.size and np.max(np.abs(gamma.T @ gamma0)) > 1e-8:
            raise ContractViolation("Gamma and Gamma0 are not orthogonal")
        object.__setattr__(self, "Gamma", gamma)
        object.__setattr__(self, "Gamma0", gamma0)

    @classmethod
    def from_gamma(cls, gamma: FloatArray) -> EnvelopeBasis:
        gamma = _as_matrix(gamma, "Gamma")
        return cls(gamma, orthonormal_completion(gamma))

    @classmethod
    def full(cls, r: int) -> EnvelopeBasis:
        """u = r: the whole response space is material."""
        return cls(np.eye(r), np.zeros((r, 0)))

    @classmethod
    def empty(cls, r: int) -> EnvelopeBasis:
        """u = 0: nothing is material and beta_k = 0."""
        return cls(np.zeros((r, 0)), np.eye(r))

    @property
    def r(self) -> int:
        return self.Gamma.shape[0]

    @property
    def u(self) -> int:
        return self.Gamma.shape[1]

    @property
    def projection(self) -> FloatArray:
        return self.Gamma @ self.Gamma.T


@dataclass(frozen=True)
class GroupParams:
    """Cluster-specific parameters: intercept mu (r), coordinates eta (u x p), Omega (u x u)."""

    mu: FloatArray
    eta: FloatArray
    Omega: FloatArray

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        eta = _as_matrix(self.eta, "eta")
        omega = _as_matrix(self.Omega, "Omega")
        if omega.shape != (eta.shape[0], eta.shape[0]):
            raise ContractViolation(
                f"Omega has shape {omega.shape}, expected {(eta.shape[0],) * 2}"
            )
        cholesky(omega, "Omega")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "Omega", symmetrize(omega))

    @property
    def u(self) -> int:
        return self.eta.shape[0]

    @property
    def p(self) -> int:
        return self.eta.shape[1]

    def beta(self, basis: EnvelopeBasis) -> FloatArray:
        return basis.Gamma @ self.eta


def clip_proportions(pi: FloatArray, floor: float = PI_FLOOR) -> FloatArray:
    """Raise entries below ``floor`` to it and rescale the rest so the vector sums to 1."""
    pi = np.asarray(pi, dtype=float).copy()
    if pi.ndim != 1 or pi.size == 0 or np.any(pi < 0) or pi.sum() <= 0:
        raise ContractViolation("mixing proportions must be a non-negative, non-zero vector")
    pi /= pi.sum()
    if floor * pi.size >= 1.0:
        raise ContractViolation(f"pi_floor {floor} is too large for {pi.size} clusters")
    clipped = np.zeros(pi.size, dtype=bool)
    while True:
        low = (pi < floor) & ~clipped
        if not low.any():
            break
        clipped |= low
        free = ~clipped
        pi[clipped] = floor
        pi[free] *= (1.0 - floor * clipped.sum()) / pi[free].sum()
    return pi


@dataclass(frozen=True)
class MixtureParams:
    """theta = {pi, mu, eta, Omega, Omega0} with the shared envelope basis."""

    pi: FloatArray
    groups: Tuple[GroupParams, ...]
    basis: EnvelopeBasis
    Omega0: FloatArray

    def __post_init__(self) -> None:
        pi = np.asarray(self.pi, dtype=float).reshape(-1)
        groups = tuple(self.groups)
        if pi.size != len(groups) or not groups:
            raise ContractViolation(
                f"{pi.size} mixing proportions for {len(groups)} clusters"
            )
        if abs(pi.sum() - 1.0) > 1e-12:
            raise ContractViolation(f"mixing proportions sum to {pi.sum()!r}, not 1")
        if np.any(pi < PI_FLOOR * (1.0 - 1e-9)):
            raise ContractViolation(f"mixing proportions must be at least {PI_FLOOR}")
        r, u = self.basis.r, self.basis.u
        p = groups[0].p
        for k, g in enumerate(groups):
            if g.mu.shape != (r,) or g.eta.shape != (u, p):
                raise ContractViolation(
                    f"cluster {k}: mu {g.mu.shape} / eta {g.eta.shape} do not match "
                    f"r={r}, u={u}, p={p}"
                )
        omega0 = _as_matrix(self.Omega0, "Omega0")
        if omega0.shape != (r - u, r - u):
            raise ContractViolation(
                f"Omega0 has shape {omega0.shape}, expected {(r - u, r - u)}"
            )
        cholesky(omega0, "Omega0")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "Omega0", symmetrize(omega0))

    @property
    def M(self) -> int:
        return len(self.groups)

    @property
    def r(self) -> int:
        return self.basis.r

    @property
    def u(self) -> int:
        return self.basis.u

    @property
    def p(self) -> int:
        return self.groups[0].p

    def betas(self) -> list[FloatArray]:
        return [g.beta(self.basis) for g in self.groups]

    def sigma(self, k: int) -> FloatArray:
        return assemble_sigma(self.basis, self.groups[k].Omega, self.Omega0)

    def permuted(self, order: Sequence[int]) -> MixtureParams:
        """Components reordered so that new component j is old component order[j]."""
        order = list(order)
        if sorted(order) != list(range(self.M)):
            raise ContractViolation(f"{order} is not a permutation of 0..{self.M - 1}")
        return MixtureParams(
            self.pi[order], tuple(self.groups[i] for i in order), self.basis, self.Omega0
        )


def _coerce_square(a: object) -> FloatArray:
    arr = np.asarray(a, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 0))
    return np.atleast_2d(arr)


def assemble_sigma(
    basis: EnvelopeBasis, Omega: FloatArray, Omega0: FloatArray
) -> FloatArray:
    """Sigma_k = Gamma Omega_k Gamma^T + Gamma0 Omega0 Gamma0^T."""
    Omega = _coerce_square(Omega)
    Omega0 = _coerce_square(Omega0)
    if Omega.shape != (basis.u, basis.u):
        raise ContractViolation(f"Omega has shape {Omega.shape}, expected u={basis.u}")
    if Omega0.shape != (basis.r - basis.u, basis.r - basis.u):
        raise ContractViolation(
            f"Omega0 has shape {Omega0.shape}, expected r-u={basis.r - basis.u}"
        )
    G, G0 = basis.Gamma, basis.Gamma0
    return symmetrize(G @ Omega @ G.T + G0 @ Omega0 @ G0.T)


def component_log_densities(
    X: FloatArray,
    Y: FloatArray,
    group: GroupParams,
    basis: EnvelopeBasis,
    Omega0: FloatArray,
) -> FloatArray:
    """Row-wise log f_k(y_i | x_i) in envelope coordinates."""
    r = basis.r
    if Y.shape[1] != r or X.shape[1] != group.p:
        raise ContractViolation(
            f"data (p={X.shape[1]}, r={Y.shape[1]}) does not match parameters "
            f"(p={group.p}, r={r})"
        )
    if group.u != basis.u:
        raise ContractViolation(f"eta has u={group.u} rows but the basis has u={basis.u}")
    L = cholesky(group.Omega, "Omega")
    L0 = cholesky(_coerce_square(Omega0), "Omega0")
    if L0.shape[0] != r - basis.u:
        raise ContractViolation(f"Omega0 must be {r - basis.u} x {r - basis.u}")
    centered = Y - group.mu
    material = centered @ basis.Gamma - X @ group.eta.T
    immaterial = centered @ basis.Gamma0
    quad = np.sum(whiten_rows(material, L) ** 2, axis=1) + np.sum(
        whiten_rows(immaterial, L0) ** 2, axis=1
    )
    const = -0.5 * r * LOG_2PI - 0.5 * logdet_from_cholesky(L0) - 0.5 * logdet_from_cholesky(L)
    return const - 0.5 * quad


def log_density_k(
    x: FloatArray,
    y: FloatArray,
    group: GroupParams,
    basis: EnvelopeBasis,
    Omega0: FloatArray,
) -> float:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    y = np.asarray(y, dtype=float).reshape(1, -1)
    return float(component_log_densities(x, y, group, basis, Omega0)[0])


def weighted_log_densities(data: Dataset, theta: MixtureParams) -> FloatArray:
    """n x M matrix of log pi_k + log f_k(y_i | x_i)."""
    columns = [
        np.log(theta.pi[k])
        + component_log_densities(data.X, data.Y, g, theta.basis, theta.Omega0)
        for k, g in enumerate(theta.groups)
    ]
    return np.column_stack(columns)


def mixture_loglik(data: Dataset, theta: MixtureParams) -> float:
    """Observed-data log-likelihood sum_i log sum_k pi_k f_k."""
    if data.n < 1:
        raise ContractViolation("dataset is empty")
    return float(np.sum(logsumexp(weighted_log_densities(data, theta), axis=1)))


def canonicalize(theta: MixtureParams) -> MixtureParams:
    """Fix the sign and order of the basis columns; the likelihood is unchanged.

    Columns of Gamma are ordered by descending diagonal of the pi-weighted Omega, and every
    column of Gamma and Gamma0 gets a positive first non-zero entry.
    """

    def sign_flips(basis_part: FloatArray) -> FloatArray:
        signs = np.ones(basis_part.shape[1])
        for j in range(basis_part.shape[1]):
            nonzero = np.flatnonzero(np.abs(basis_part[:, j]) > 1e-12)
            if nonzero.size and basis_part[nonzero[0], j] < 0:
                signs[j] = -1.0
        return signs

    basis = theta.basis
    if basis.u:
        pooled = sum(pi_k * g.Omega for pi_k, g in zip(theta.pi, theta.groups))
        order = np.argsort(-np.diag(pooled), kind="stable")
    else:
        order = np.arange(0)
    gamma = basis.Gamma[:, order]
    D = sign_flips(gamma)
    transform = np.eye(basis.u)[:, order] * D
    gamma = gamma * D
    D0 = sign_flips(basis.Gamma0)
    gamma0 = basis.Gamma0 * D0
    groups = tuple(
        GroupParams(g.mu, transform.T @ g.eta, transform.T @ g.Omega @ transform)
        for g in theta.groups
    )
    omega0 = theta.Omega0 * np.outer(D0, D0)
    return MixtureParams(theta.pi, groups, EnvelopeBasis(gamma, gamma0), omega0)
