"""Nonparametric bootstrap standard deviations of the regression coefficients."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from envmix.config import IccConfig, TwoStageConfig, derive_seeds
from envmix.core.exceptions import ContractViolation, EnvMixError
from envmix.core.linalg import FloatArray
from envmix.core.model import Dataset
from envmix.evaluation.metrics import match_labels
from envmix.fitting.baselines import Method, fit_method
from envmix.fitting.icc import FitResult
from envmix.logging import run_context
from envmix.settings import default_n_jobs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BootstrapReport:
    """Per-element SDs of beta_k (r x p each), aligned to the full-data component order."""

    per_element_sd: Tuple[FloatArray, ...]
    B: int
    group_mean_sd: FloatArray
    n_success: int
    failures: Tuple[str, ...] = ()

    @property
    def n_failed(self) -> int:
        return len(self.failures)


def aligned_betas(replicate: FitResult, reference_labels: np.ndarray) -> list[FloatArray]:
    """Replicate coefficients reordered to the components of the reference fit."""
    perm = match_labels(replicate.labels, reference_labels, replicate.M)
    betas = replicate.theta.betas()
    aligned: list[Optional[FloatArray]] = [None] * replicate.M
    for j, target in enumerate(perm):
        aligned[int(target)] = betas[j]
    return aligned  # type: ignore[return-value]


def _replicate(
    data: Dataset,
    index: np.ndarray,
    reference_labels: np.ndarray,
    M: int,
    u: int,
    cfg: IccConfig,
    method: Method,
    two_stage: Optional[TwoStageConfig],
    b: int,
) -> list[FloatArray] | str:
    with run_context(f"boot{b}"):
        try:
            fit = fit_method(method, data.subset(index), M, u, cfg, two_stage)
        except EnvMixError as e:
            logger.warning(f"Bootstrap replicate failed: {e}")
            return str(e)
    return aligned_betas(fit, reference_labels[index])


def bootstrap_se(
    data: Dataset,
    M: int,
    u: int,
    B: int,
    cfg: IccConfig,
    method: Method | str = Method.ICC,
    two_stage: Optional[TwoStageConfig] = None,
    reference: Optional[FitResult] = None,
    seed: Optional[int] = None,
    n_jobs: Optional[int] = None,
) -> BootstrapReport:
    """Resample rows with replacement B times, refit, align components, take SDs."""
    if B < 2:
        raise ContractViolation(f"B must be at least 2, got {B}")
    method = Method(method)
    if reference is None:
        reference = fit_method(method, data, M, u, cfg, two_stage)
    master = cfg.seed if seed is None else seed
    rng = np.random.default_rng(master)
    indices = [rng.integers(0, data.n, size=data.n) for _ in range(B)]
    fit_seeds = derive_seeds(master + 1, B)

    outcomes = Parallel(n_jobs=n_jobs or default_n_jobs(), prefer="threads")(
        delayed(_replicate)(
            data,
            idx,
            reference.labels,
            M,
            u,
            cfg.with_seed(s),
            method,
            two_stage,
            b,
        )
        for b, (idx, s) in enumerate(zip(indices, fit_seeds))
    )

    failures = tuple(o for o in outcomes if isinstance(o, str))
    successes = [o for o in outcomes if not isinstance(o, str)]
    if failures:
        logger.warning(f"{len(failures)} of {B} bootstrap replicates failed")

    shape = (data.r, data.p)
    if len(successes) < 2:
        logger.warning("Fewer than two bootstrap replicates succeeded; SDs are undefined")
        sds = tuple(np.full(shape, np.nan) for _ in range(M))
    else:
        sds = tuple(
            np.std(np.stack([rep[k] for rep in successes]), axis=0, ddof=1)
            for k in range(M)
        )
    return BootstrapReport(
        per_element_sd=sds,
        B=B,
        group_mean_sd=np.array([float(np.mean(sd)) for sd in sds]),
        n_success=len(successes),
        failures=failures,
    )


def sd_ratio(numerator: BootstrapReport, denominator: BootstrapReport) -> Tuple[FloatArray, ...]:
    """Elementwise SD ratios per component; NaN where the denominator SD is zero."""
    if len(numerator.per_element_sd) != len(denominator.per_element_sd):
        raise ContractViolation("bootstrap reports have different numbers of components")
    ratios = []
    for a, b in zip(numerator.per_element_sd, denominator.per_element_sd):
        if a.shape != b.shape:
            raise ContractViolation(f"SD matrices differ in shape: {a.shape} vs {b.shape}")
        ratios.append(np.divide(a, b, out=np.full(a.shape, np.nan), where=b > 0))
    return tuple(ratios)
