"""Groupwise envelope fit for known (or imputed) cluster labels.

Gamma minimizes

    F(Gamma) = sum_k (n_k / n) log|Gamma^T S_res,k Gamma| + log|Gamma^T S_Y^{-1} Gamma|

over the Grassmann manifold; every other parameter is then closed form in Gamma.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from envmix.config import OptimizerConfig
from envmix.core.exceptions import (
    ContractViolation,
    EmptyGroupError,
    NotPositiveDefiniteError,
    SingularMatrixError,
)
from envmix.core.linalg import (
    FloatArray,
    cholesky,
    inverse_pd,
    logdet_from_cholesky,
    regularized_cholesky,
    symmetrize,
)
from envmix.core.model import (
    Dataset,
    EnvelopeBasis,
    GroupParams,
    Labels,
    MixtureParams,
    validate_labels,
)
from envmix.fitting import grassmann

logger = logging.getLogger(__name__)


def min_group_size(u: int) -> int:
    return max(2, u + 1)


@dataclass(frozen=True)
class GroupedMoments:
    """Per-cluster centered data and the sample covariances the envelope fit needs."""

    Yc: Tuple[FloatArray, ...]
    Xc: Tuple[FloatArray, ...]
    sigma_res: Tuple[FloatArray, ...]
    # sigma_res with a ridge where it is singular; equal to sigma_res otherwise
    sigma_res_reg: Tuple[FloatArray, ...]
    sigma_y: FloatArray
    sigma_y_inv: FloatArray
    ols_coef: Tuple[FloatArray, ...]
    n_k: Tuple[int, ...]
    y_means: Tuple[FloatArray, ...]
    x_means: Tuple[FloatArray, ...]

    @property
    def M(self) -> int:
        return len(self.n_k)

    @property
    def n(self) -> int:
        return int(sum(self.n_k))

    @property
    def r(self) -> int:
        return self.sigma_y.shape[0]

    @property
    def weights(self) -> FloatArray:
        return np.asarray(self.n_k, dtype=float) / self.n

    @property
    def pooled_sigma_res(self) -> FloatArray:
        return sum(w * s for w, s in zip(self.weights, self.sigma_res_reg))


@dataclass(frozen=True)
class GroupwiseFit:
    basis: EnvelopeBasis
    groups: Tuple[GroupParams, ...]
    Omega0: FloatArray
    beta: Tuple[FloatArray, ...]
    objective_value: float
    optimizer_trace: Tuple[float, ...]
    converged: bool
    n_k: Tuple[int, ...]

    def to_mixture(self, pi: FloatArray) -> MixtureParams:
        return MixtureParams(pi, self.groups, self.basis, self.Omega0)


def _psd_or_ridge(a: FloatArray, name: str) -> FloatArray:
    try:
        cholesky(a, name)
        return a
    except NotPositiveDefiniteError:
        _, regularized = regularized_cholesky(a, name)
        logger.debug(f"{name} is singular, using a ridge-regularized copy")
        return regularized


def compute_moments(
    data: Dataset, labels: Labels, M: int, min_size: int = 2
) -> GroupedMoments:
    """Group means, centered matrices, per-group residual covariances and pooled S_Y."""
    labels = validate_labels(labels, data.n, M)
    Yc, Xc, sigma_res, sigma_res_reg, coefs = [], [], [], [], []
    n_k, y_means, x_means = [], [], []
    sigma_y = np.zeros((data.r, data.r))

    for k in range(M):
        idx = np.flatnonzero(labels == k)
        if idx.size < min_size:
            raise EmptyGroupError(k, int(idx.size), min_size)
        X_k, Y_k = data.X[idx], data.Y[idx]
        x_bar, y_bar = X_k.mean(axis=0), Y_k.mean(axis=0)
        xc, yc = X_k - x_bar, Y_k - y_bar

        if data.p:
            factor, _ = regularized_cholesky(xc.T @ xc, f"X_{k}^T X_{k}")
            coef = linalg.cho_solve((factor, True), xc.T @ yc)
        else:
            coef = np.zeros((0, data.r))
        resid = yc - xc @ coef
        s_res = symmetrize(resid.T @ resid / idx.size)

        Yc.append(yc)
        Xc.append(xc)
        sigma_res.append(s_res)
        sigma_res_reg.append(_psd_or_ridge(s_res, f"Sigma_res_{k}"))
        coefs.append(coef.T)
        n_k.append(int(idx.size))
        y_means.append(y_bar)
        x_means.append(x_bar)
        sigma_y += yc.T @ yc

    sigma_y = _psd_or_ridge(symmetrize(sigma_y / data.n), "Sigma_Y")
    return GroupedMoments(
        Yc=tuple(Yc),
        Xc=tuple(Xc),
        sigma_res=tuple(sigma_res),
        sigma_res_reg=tuple(sigma_res_reg),
        sigma_y=sigma_y,
        sigma_y_inv=inverse_pd(sigma_y, "Sigma_Y"),
        ols_coef=tuple(coefs),
        n_k=tuple(n_k),
        y_means=tuple(y_means),
        x_means=tuple(x_means),
    )


def _logdet_term(
    gamma: FloatArray, a: FloatArray, name: str, with_grad: bool
) -> Tuple[float, Optional[FloatArray]]:
    """log|G^T A G| and its Euclidean gradient 2 A G (G^T A G)^{-1}."""
    inner = symmetrize(gamma.T @ a @ gamma)
    try:
        factor = cholesky(inner, name)
    except NotPositiveDefiniteError as e:
        raise SingularMatrixError(name) from e
    value = logdet_from_cholesky(factor)
    if not with_grad:
        return value, None
    grad = 2.0 * (a @ gamma) @ linalg.cho_solve((factor, True), np.eye(inner.shape[0]))
    return value, grad


def _objective(
    gamma: FloatArray, moments: GroupedMoments, with_grad: bool
) -> Tuple[float, Optional[FloatArray]]:
    total = 0.0
    grad = np.zeros_like(gamma) if with_grad else None
    for k, (w, s_res) in enumerate(zip(moments.weights, moments.sigma_res_reg)):
        value, g = _logdet_term(gamma, s_res, f"Gamma^T Sigma_res_{k} Gamma", with_grad)
        total += w * value
        if grad is not None and g is not None:
            grad += w * g
    value, g = _logdet_term(gamma, moments.sigma_y_inv, "Gamma^T Sigma_Y^-1 Gamma", with_grad)
    total += value
    if grad is not None and g is not None:
        grad += g
    return total, grad


def grassmann_objective(gamma: FloatArray, moments: GroupedMoments) -> float:
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim != 2 or gamma.shape[0] != moments.r:
        raise ContractViolation(f"Gamma must have {moments.r} rows, got {gamma.shape}")
    return _objective(gamma, moments, with_grad=False)[0]


def objective_and_gradient(
    gamma: FloatArray, moments: GroupedMoments
) -> Tuple[float, FloatArray]:
    value, grad = _objective(gamma, moments, with_grad=True)
    assert grad is not None
    return value, grad


def _top_eigenvectors(a: FloatArray, u: int) -> FloatArray:
    _, vecs = np.linalg.eigh(symmetrize(a))
    return vecs[:, ::-1][:, :u]


def starting_points(
    moments: GroupedMoments,
    u: int,
    cfg: OptimizerConfig,
    warm_start: Optional[FloatArray] = None,
) -> list[FloatArray]:
    """Warm start (if any), top-u eigenvectors of S_Y and of pooled S_res, then random starts."""
    starts = [] if warm_start is None else [np.asarray(warm_start, dtype=float)]
    starts.append(_top_eigenvectors(moments.sigma_y, u))
    if cfg.n_starts >= 2:
        starts.append(_top_eigenvectors(moments.pooled_sigma_res, u))
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.n_starts - 2):
        starts.append(grassmann.random_start(moments.r, u, rng))
    return starts


def fit_gamma(
    moments: GroupedMoments,
    u: int,
    cfg: OptimizerConfig,
    warm_start: Optional[FloatArray] = None,
) -> grassmann.GrassmannResult:
    """Minimize the envelope objective over r x u orthonormal bases (1 <= u <= r - 1)."""
    if not 1 <= u <= moments.r - 1:
        raise ContractViolation(
            f"fit_gamma needs 1 <= u <= r - 1 = {moments.r - 1}, got u={u}"
        )
    return grassmann.minimize(
        lambda g: objective_and_gradient(g, moments),
        starting_points(moments, u, cfg, warm_start),
        cfg,
    )


def coordinate_estimates(
    basis: EnvelopeBasis,
    moments: GroupedMoments,
    objective_value: float = np.nan,
    optimizer_trace: Tuple[float, ...] = (),
    converged: bool = True,
) -> GroupwiseFit:
    """Closed-form mu_k, eta_k, Omega_k, Omega0 and beta_k = Gamma eta_k for a fixed basis."""
    G, G0 = basis.Gamma, basis.Gamma0
    groups, betas = [], []
    for k in range(moments.M):
        eta = G.T @ moments.ols_coef[k]
        omega = symmetrize(G.T @ moments.sigma_res_reg[k] @ G)
        beta = G @ eta
        mu = moments.y_means[k] - beta @ moments.x_means[k]
        try:
            groups.append(GroupParams(mu, eta, omega))
        except NotPositiveDefiniteError as e:
            raise SingularMatrixError(f"Omega_{k}") from e
        betas.append(beta)
    omega0 = symmetrize(G0.T @ moments.sigma_y @ G0)
    return GroupwiseFit(
        basis=basis,
        groups=tuple(groups),
        Omega0=omega0,
        beta=tuple(betas),
        objective_value=float(objective_value),
        optimizer_trace=tuple(optimizer_trace),
        converged=converged,
        n_k=moments.n_k,
    )


def fit_groupwise_envelope(
    data: Dataset,
    labels: Labels,
    M: int,
    u: int,
    cfg: OptimizerConfig,
    warm_start: Optional[FloatArray] = None,
) -> GroupwiseFit:
    """compute_moments -> fit_gamma -> coordinate_estimates, short-circuiting u = 0 and u = r."""
    if not 0 <= u <= data.r:
        raise ContractViolation(f"u must lie in 0..{data.r}, got {u}")
    moments = compute_moments(data, labels, M, min_size=min_group_size(u))

    if u == 0:
        basis = EnvelopeBasis.empty(data.r)
    elif u == data.r:
        basis = EnvelopeBasis.full(data.r)
    else:
        if warm_start is not None and warm_start.shape != (data.r, u):
            warm_start = None
        result = fit_gamma(moments, u, cfg, warm_start)
        return coordinate_estimates(
            EnvelopeBasis.from_gamma(result.gamma),
            moments,
            objective_value=result.value,
            optimizer_trace=result.trace,
            converged=result.converged,
        )

    value = grassmann_objective(basis.Gamma, moments)
    return coordinate_estimates(basis, moments, value, (value,), True)
