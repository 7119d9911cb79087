"""m-fold cross-validated prediction error of a fitted mixture."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import KFold

from envmix.config import CvConfig, IccConfig, PredictionRule, TwoStageConfig, derive_seeds
from envmix.core.exceptions import ContractViolation, EnvMixError
from envmix.core.linalg import FloatArray
from envmix.core.model import Dataset, MixtureParams
from envmix.fitting.baselines import Method, fit_method
from envmix.logging import run_context
from envmix.settings import default_n_jobs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldFailure:
    repeat: int
    fold: int
    message: str


@dataclass(frozen=True)
class PredictionReport:
    """Held-out squared error ||Y - Y_hat||^2, averaged per fold.

    ``sd_error`` is the SD of the per-repeat means when there are several repeats and the
    SD across folds otherwise.
    """

    mean_error: float
    sd_error: float
    folds: int
    per_fold: FloatArray
    repeats: int = 1
    per_repeat: FloatArray = field(default_factory=lambda: np.zeros(0))
    failures: Tuple[FoldFailure, ...] = ()


def predict(theta: MixtureParams, X: FloatArray, rule: PredictionRule) -> FloatArray:
    """Y_hat from X alone: the pi-weighted component means, or the largest-pi component."""
    X = np.asarray(X, dtype=float)
    means = [g.mu + X @ beta.T for g, beta in zip(theta.groups, theta.betas())]
    if PredictionRule(rule) is PredictionRule.MAX_PI:
        return means[int(np.argmax(theta.pi))]
    return sum(pi_k * m for pi_k, m in zip(theta.pi, means))


def squared_errors(Y: FloatArray, Y_hat: FloatArray) -> FloatArray:
    return np.sum((np.asarray(Y) - Y_hat) ** 2, axis=1)


def _run_fold(
    data: Dataset,
    train: np.ndarray,
    test: np.ndarray,
    M: int,
    u: int,
    cfg: IccConfig,
    rule: PredictionRule,
    method: Method,
    two_stage: Optional[TwoStageConfig],
    tag: str,
) -> float | str:
    with run_context(tag):
        try:
            fit = fit_method(method, data.subset(train), M, u, cfg, two_stage)
        except EnvMixError as e:
            logger.warning(f"Fold fit failed: {e}")
            return str(e)
        held_out = data.subset(test)
        error = float(np.mean(squared_errors(held_out.Y, predict(fit.theta, held_out.X, rule))))
        logger.debug(f"held-out error {error:.6f}")
        return error


def cv_prediction_error(
    data: Dataset,
    M: int,
    u: int,
    folds: int,
    repeats: int,
    cfg: IccConfig,
    rule: PredictionRule = PredictionRule.MIXTURE,
    method: Method | str = Method.ICC,
    two_stage: Optional[TwoStageConfig] = None,
    seed: Optional[int] = None,
    n_jobs: Optional[int] = None,
) -> PredictionReport:
    """Repeated shuffled K-fold CV; failed folds are skipped and listed in the report."""
    if folds < 2:
        raise ContractViolation(f"folds must be at least 2, got {folds}")
    if folds > data.n:
        raise ContractViolation(f"{folds} folds for only {data.n} observations")
    if repeats < 1:
        raise ContractViolation(f"repeats must be at least 1, got {repeats}")
    method = Method(method)
    master = cfg.seed if seed is None else seed
    split_seeds = derive_seeds(master, repeats)
    fit_seeds = iter(derive_seeds(master + 1, repeats * folds))

    jobs, keys = [], []
    for rep, split_seed in enumerate(split_seeds):
        splitter = KFold(n_splits=folds, shuffle=True, random_state=split_seed % 2**32)
        for j, (train, test) in enumerate(splitter.split(data.X)):
            keys.append((rep, j))
            jobs.append(
                delayed(_run_fold)(
                    data,
                    train,
                    test,
                    M,
                    u,
                    cfg.with_seed(next(fit_seeds)),
                    rule,
                    method,
                    two_stage,
                    f"cv{rep}.{j}",
                )
            )
    outcomes = Parallel(n_jobs=n_jobs or default_n_jobs(), prefer="threads")(jobs)

    per_fold, failures = [], []
    by_repeat: dict[int, list[float]] = {}
    for (rep, j), outcome in zip(keys, outcomes):
        if isinstance(outcome, str):
            failures.append(FoldFailure(rep, j, outcome))
            continue
        per_fold.append(outcome)
        by_repeat.setdefault(rep, []).append(outcome)

    per_fold_arr = np.asarray(per_fold, dtype=float)
    per_repeat = np.asarray([np.mean(v) for _, v in sorted(by_repeat.items())])
    if failures:
        logger.warning(f"{len(failures)} of {len(keys)} folds failed and were skipped")
    if per_fold_arr.size == 0:
        mean, sd = np.nan, np.nan
    else:
        mean = float(np.mean(per_fold_arr))
        spread = per_repeat if per_repeat.size >= 2 else per_fold_arr
        sd = float(np.std(spread, ddof=1)) if spread.size >= 2 else 0.0
    return PredictionReport(
        mean_error=mean,
        sd_error=sd,
        folds=folds,
        per_fold=per_fold_arr,
        repeats=repeats,
        per_repeat=per_repeat,
        failures=tuple(failures),
    )
