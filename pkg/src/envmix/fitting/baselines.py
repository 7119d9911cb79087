"""Comparison methods: OLS mixture, two-stage SVD clustering and the known-label oracle."""

from __future__ import annotations

import dataclasses
import logging
from enum import Enum
from typing import Optional

import numpy as np
from scipy.stats import norm, rankdata
from sklearn.mixture import GaussianMixture

from envmix.config import IccConfig, TwoStageConfig, derive_seeds
from envmix.core.exceptions import ContractViolation, EmptyGroupError
from envmix.core.linalg import FloatArray
from envmix.core.model import Dataset, Labels
from envmix.fitting.icc import (
    FitResult,
    repair_labels,
    result_from_labels,
    run_icc,
    starved_threshold,
)

logger = logging.getLogger(__name__)


class Method(str, Enum):
    ICC = "icc"
    OLS = "ols"
    TWO_STAGE = "two-stage"
    ORACLE = "oracle"


def fit_ols_mixture(data: Dataset, M: int, cfg: IccConfig) -> FitResult:
    """The standard mixture of multivariate regressions: ICC with u = r."""
    return dataclasses.replace(run_icc(data, M, data.r, cfg), method=Method.OLS.value)


def normal_scores(scores: FloatArray) -> FloatArray:
    """Columnwise rank-based probit transform Phi^{-1}((rank - 0.5) / n)."""
    n = scores.shape[0]
    return norm.ppf((rankdata(scores, axis=0) - 0.5) / n)


def svd_scores(Y: FloatArray, d: int) -> FloatArray:
    """Leading d principal scores of the column-centered responses."""
    centered = Y - Y.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    return centered @ vt[:d].T


def stage_one_labels(Y: FloatArray, M: int, ts: TwoStageConfig, min_size: int = 2) -> Labels:
    """Cluster the probit-transformed SVD scores of Y with a full-covariance Gaussian mixture.

    Fits that leave a component below ``min_size`` are retried with a new seed; after
    ``max_retries`` the last fit is repaired by moving its most probable members in.
    """
    n, r = Y.shape
    d = min(ts.svd_components, r, n)
    z = normal_scores(svd_scores(Y, d))

    labels: Optional[Labels] = None
    proba: Optional[FloatArray] = None
    for attempt, seed in enumerate(derive_seeds(ts.seed, ts.max_retries + 1)):
        gmm = GaussianMixture(
            n_components=M,
            covariance_type="full",
            max_iter=ts.gmm_max_iter,
            tol=ts.gmm_tol,
            random_state=seed % 2**32,
        ).fit(z)
        proba = gmm.predict_proba(z)
        labels = np.argmax(proba, axis=1).astype(np.int64)
        if np.bincount(labels, minlength=M).min() >= min_size:
            if not gmm.converged_:
                logger.warning(f"Stage-1 mixture EM did not converge (attempt {attempt})")
            return labels
        logger.debug(f"Stage-1 mixture left a component empty, retrying ({attempt})")

    assert labels is not None and proba is not None
    logger.warning("Stage-1 clustering stayed degenerate; repairing the last labels")
    return repair_labels(labels, proba, M, min_size)[0]


def two_stage_fit(
    data: Dataset, M: int, u: int, ts: TwoStageConfig, cfg: IccConfig
) -> FitResult:
    """Stage 1 clusters Y alone; stage 2 fits the groupwise envelope on those fixed labels."""
    if not 0 <= u <= data.r:
        raise ContractViolation(f"u must lie in 0..{data.r}, got {u}")
    labels = stage_one_labels(data.Y, M, ts, starved_threshold(cfg, data.n, data.p, M, u))
    return result_from_labels(data, labels, M, u, cfg, method=Method.TWO_STAGE.value)


def fit_oracle(data: Dataset, M: int, u: int, cfg: IccConfig) -> FitResult:
    """CC-step on the true labels (the best any clustering could do)."""
    if data.true_labels is None:
        raise ContractViolation("the oracle method needs true labels")
    size = starved_threshold(cfg, data.n, data.p, M, u)
    counts = np.bincount(data.true_labels, minlength=M)
    if counts.min() < size:
        k = int(np.argmin(counts))
        raise EmptyGroupError(k, int(counts[k]), size)
    return result_from_labels(
        data, data.true_labels, M, u, cfg, method=Method.ORACLE.value
    )


def fit_method(
    method: Method | str,
    data: Dataset,
    M: int,
    u: int,
    cfg: IccConfig,
    two_stage: Optional[TwoStageConfig] = None,
) -> FitResult:
    """Fit with any of the supported methods; ``u`` is ignored by the OLS mixture."""
    method = Method(method)
    if method is Method.ICC:
        return run_icc(data, M, u, cfg)
    if method is Method.OLS:
        return fit_ols_mixture(data, M, cfg)
    if method is Method.TWO_STAGE:
        ts = two_stage or TwoStageConfig(seed=cfg.seed)
        return two_stage_fit(data, M, u, ts, cfg)
    return fit_oracle(data, M, u, cfg)
