"""Imputation / conditional-consistency fitting of the mixture envelope model.

Each iteration draws a hard label per observation from its posterior responsibilities
(I-step), then re-estimates pi from the label counts and the remaining parameters with a
groupwise envelope fit on the pseudo-complete data (CC-step).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import KMeans

from envmix.config import EmptyClusterPolicy, IccConfig, OptimizerConfig
from envmix.core.exceptions import ContractViolation, EmptyGroupError, EnvMixError
from envmix.core.linalg import FloatArray
from envmix.core.model import (
    Dataset,
    Labels,
    MixtureParams,
    clip_proportions,
    validate_labels,
    weighted_log_densities,
)
from envmix.fitting.envelope import fit_groupwise_envelope, min_group_size

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitResult:
    """Fitted mixture with its final labels and run diagnostics."""

    theta: MixtureParams
    labels: Labels
    responsibilities: FloatArray
    loglik_trace: FloatArray
    loglik: float
    converged: bool
    iterations: int
    seed_used: int
    best_iteration: int = 0
    restarts: int = 0
    method: str = "icc"

    @property
    def M(self) -> int:
        return self.theta.M

    @property
    def u(self) -> int:
        return self.theta.u


class _RestartRequested(Exception):
    pass


def _normalize_log_weights(log_weights: FloatArray) -> FloatArray:
    gamma = np.exp(log_weights - logsumexp(log_weights, axis=1, keepdims=True))
    return gamma / gamma.sum(axis=1, keepdims=True)


def posterior_responsibilities(data: Dataset, theta: MixtureParams) -> FloatArray:
    """gamma_ik = pi_k f_k / sum_l pi_l f_l, evaluated in log space."""
    return _normalize_log_weights(weighted_log_densities(data, theta))


def impute_labels(gamma: FloatArray, rng: np.random.Generator) -> Labels:
    """Draw label_i ~ Categorical(gamma_i1, ..., gamma_iM) independently per row."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim != 2:
        raise ContractViolation("responsibilities must be an n x M matrix")
    cdf = np.cumsum(gamma, axis=1)
    cdf /= cdf[:, -1:]
    draws = rng.random(gamma.shape[0])
    labels = np.sum(draws[:, None] >= cdf, axis=1)
    return np.minimum(labels, gamma.shape[1] - 1).astype(np.int64)


def starved_threshold(cfg: IccConfig, n: int, p: int, M: int, u: int) -> int:
    """Cluster size below which the empty-cluster policy applies."""
    floor = min_group_size(u)
    if cfg.min_cluster_size is not None:
        return max(floor, cfg.min_cluster_size)
    # Omega_k is non-singular without ridge from p + u + 1 observations on
    return max(floor, min(p + u + 1, n // M))


def repair_labels(
    labels: Labels, scores: FloatArray, M: int, min_size: int
) -> Tuple[Labels, bool]:
    """Move the highest-scoring observations into every cluster smaller than ``min_size``.

    Observations are only taken from clusters that stay at or above ``min_size``.
    """
    labels = np.asarray(labels, dtype=np.int64).copy()
    counts = np.bincount(labels, minlength=M)
    if counts.min() >= min_size:
        return labels, False
    if labels.size < M * min_size:
        k = int(np.argmin(counts))
        raise EmptyGroupError(k, int(counts[k]), min_size)

    for k in np.argsort(counts, kind="stable"):
        if counts[k] >= min_size:
            continue
        for i in np.argsort(-scores[:, k], kind="stable"):
            if counts[k] >= min_size:
                break
            donor = labels[i]
            if donor == k or counts[donor] <= min_size:
                continue
            labels[i] = k
            counts[donor] -= 1
            counts[k] += 1
    return labels, True


def initial_labels(
    data: Dataset, M: int, rng: np.random.Generator
) -> Tuple[Labels, FloatArray]:
    """Furthest-point seeding on the rows of Y refined by k-means.

    Returns the labels and a score matrix (negative centroid distances) for repairs.
    """
    Y = data.Y
    first = int(rng.integers(data.n))
    centers = [Y[first]]
    dist = np.sum((Y - Y[first]) ** 2, axis=1)
    for _ in range(1, M):
        nxt = int(np.argmax(dist))
        centers.append(Y[nxt])
        dist = np.minimum(dist, np.sum((Y - Y[nxt]) ** 2, axis=1))
    km = KMeans(
        n_clusters=M,
        init=np.asarray(centers),
        n_init=1,
        random_state=int(rng.integers(2**31 - 1)),
    ).fit(Y)
    return km.labels_.astype(np.int64), -km.transform(Y)


def cc_step(
    data: Dataset,
    labels: Labels,
    M: int,
    u: int,
    cfg: IccConfig,
    warm_start: Optional[FloatArray] = None,
    optimizer: Optional[OptimizerConfig] = None,
) -> MixtureParams:
    """pi_k = n_k / n (floored), then a groupwise envelope fit on the labelled data."""
    labels = validate_labels(labels, data.n, M)
    counts = np.bincount(labels, minlength=M)
    pi = clip_proportions(counts / data.n, cfg.pi_floor)
    fit = fit_groupwise_envelope(
        data, labels, M, u, optimizer or cfg.optimizer_config(cfg.seed), warm_start
    )
    return fit.to_mixture(pi)


def result_from_labels(
    data: Dataset,
    labels: Labels,
    M: int,
    u: int,
    cfg: IccConfig,
    method: str,
    converged: bool = True,
    iterations: int = 1,
) -> FitResult:
    """Single CC-step on fixed labels, packaged like an ICC run."""
    labels = validate_labels(labels, data.n, M)
    theta = cc_step(data, labels, M, u, cfg)
    log_weights = weighted_log_densities(data, theta)
    loglik = float(np.sum(logsumexp(log_weights, axis=1)))
    return FitResult(
        theta=theta,
        labels=labels,
        responsibilities=_normalize_log_weights(log_weights),
        loglik_trace=np.array([loglik]),
        loglik=loglik,
        converged=converged,
        iterations=iterations,
        seed_used=cfg.seed,
        method=method,
    )


def _windowed_converged(trace: list[float], cfg: IccConfig) -> bool:
    w = cfg.window
    if len(trace) - 2 * w < cfg.burn_in:
        return False
    previous = float(np.mean(trace[-2 * w : -w]))
    current = float(np.mean(trace[-w:]))
    return abs(current - previous) <= cfg.loglik_tol * max(abs(previous), 1e-12)


class _IccRun:
    """One attempt of the ICC loop under a fixed random stream."""

    def __init__(
        self,
        data: Dataset,
        M: int,
        u: int,
        cfg: IccConfig,
        seed_seq: np.random.SeedSequence,
        allow_restart: bool,
    ) -> None:
        self.data = data
        self.M = M
        self.u = u
        self.cfg = cfg
        self.allow_restart = allow_restart
        init_seq, impute_seq, opt_seq = seed_seq.spawn(3)
        self.init_rng = np.random.default_rng(init_seq)
        self.impute_rng = np.random.default_rng(impute_seq)
        opt_seed = int(opt_seq.generate_state(1, dtype=np.uint64)[0])
        self.first_optimizer = cfg.optimizer_config(opt_seed)
        # later CC-steps start from the previous basis plus the two eigenvector starts
        self.warm_optimizer = self.first_optimizer.model_copy(
            update={"n_starts": min(2, cfg.n_starts)}
        )
        self.threshold = starved_threshold(cfg, data.n, data.p, M, u)

    def _ensure_sizes(self, labels: Labels, scores: FloatArray) -> Labels:
        counts = np.bincount(labels, minlength=self.M)
        if counts.min() >= self.threshold:
            return labels
        if (
            self.cfg.empty_cluster_policy is EmptyClusterPolicy.RESTART
            and self.allow_restart
        ):
            raise _RestartRequested()
        repaired, _ = repair_labels(labels, scores, self.M, self.threshold)
        logger.debug(
            f"Reassigned observations into starved clusters (sizes {counts.tolist()})"
        )
        return repaired

    def run(self, init: Optional[MixtureParams]) -> FitResult:
        data, M, u, cfg = self.data, self.M, self.u, self.cfg

        if init is None:
            labels, scores = initial_labels(data, M, self.init_rng)
            labels = self._ensure_sizes(labels, scores)
            theta = cc_step(data, labels, M, u, cfg, optimizer=self.first_optimizer)
            previous_labels: Optional[Labels] = labels
        else:
            theta = init
            previous_labels = None

        log_weights = weighted_log_densities(data, theta)
        trace: list[float] = []
        best_loglik, best_theta, best_iteration = -np.inf, theta, 0
        best_log_weights = log_weights
        converged = False

        for t in range(cfg.max_iter):
            gamma = _normalize_log_weights(log_weights)
            labels = self._ensure_sizes(impute_labels(gamma, self.impute_rng), gamma)

            if previous_labels is None or not np.array_equal(labels, previous_labels):
                try:
                    theta = cc_step(
                        data,
                        labels,
                        M,
                        u,
                        cfg,
                        warm_start=theta.basis.Gamma,
                        optimizer=self.warm_optimizer,
                    )
                    previous_labels = labels
                    log_weights = weighted_log_densities(data, theta)
                except EnvMixError as e:
                    logger.warning(f"CC-step {t} failed ({e}); keeping previous estimate")

            loglik = float(np.sum(logsumexp(log_weights, axis=1)))
            trace.append(loglik)
            logger.debug(f"iteration {t}: loglik={loglik:.6f}")

            if t >= cfg.burn_in and loglik > best_loglik:
                best_loglik, best_theta, best_iteration = loglik, theta, t
                best_log_weights = log_weights

            if _windowed_converged(trace, cfg):
                converged = True
                break

        responsibilities = _normalize_log_weights(best_log_weights)
        return FitResult(
            theta=best_theta,
            labels=np.argmax(responsibilities, axis=1).astype(np.int64),
            responsibilities=responsibilities,
            loglik_trace=np.asarray(trace),
            loglik=float(best_loglik),
            converged=converged,
            iterations=len(trace),
            seed_used=cfg.seed,
            best_iteration=best_iteration,
        )


def run_icc(
    data: Dataset,
    M: int,
    u: int,
    cfg: IccConfig,
    init: Optional[MixtureParams] = None,
) -> FitResult:
    """Fit an M-cluster mixture envelope model of dimension u by ICC.

    The reported theta is the post-burn-in iterate with the highest observed-data
    log-likelihood; labels are the arg-max responsibilities at that theta.
    """
    if M < 1:
        raise ContractViolation(f"M must be at least 1, got {M}")
    if not 0 <= u <= data.r:
        raise ContractViolation(f"u must lie in 0..{data.r}, got {u}")
    if init is not None and (init.M != M or init.u != u or init.r != data.r):
        raise ContractViolation("initial parameters do not match (M, u, r)")

    attempts = np.random.SeedSequence(cfg.seed).spawn(cfg.max_restarts + 1)
    for restart, seed_seq in enumerate(attempts):
        allow_restart = restart < cfg.max_restarts
        try:
            result = _IccRun(data, M, u, cfg, seed_seq, allow_restart).run(init)
        except _RestartRequested:
            logger.info(f"Starved cluster, restarting ICC with a new stream ({restart + 1})")
            continue
        if cfg.empty_cluster_policy is EmptyClusterPolicy.RESTART and not allow_restart:
            logger.warning("Restart budget exhausted; starved clusters were reassigned")
        if not result.converged:
            logger.warning(
                f"ICC (M={M}, u={u}) did not converge in {cfg.max_iter} iterations"
            )
        logger.info(
            f"ICC (M={M}, u={u}) finished: {result.iterations} iterations, "
            f"loglik={result.loglik:.4f}, best at {result.best_iteration}"
        )
        return FitResult(**{**result.__dict__, "restarts": restart})
    raise AssertionError("unreachable: the last attempt never requests a restart")
