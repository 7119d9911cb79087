"""Free-parameter count, BIC and grid selection of (M, u)."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from envmix.config import IccConfig, TwoStageConfig, derive_seeds
from envmix.core.exceptions import ContractViolation, EnvMixError
from envmix.core.model import Dataset
from envmix.fitting.baselines import Method, fit_method
from envmix.fitting.icc import FitResult
from envmix.logging import run_context
from envmix.settings import default_n_jobs

logger = logging.getLogger(__name__)


def free_param_count(M: int, u: int, r: int, p: int, count_pi: bool = False) -> int:
    """Mr + Mup + Mu(u+1)/2 + (r-u)(r-u+1)/2 + u(r-u), plus M - 1 when ``count_pi``."""
    if M < 1:
        raise ContractViolation(f"M must be at least 1, got {M}")
    if not 0 <= u <= r:
        raise ContractViolation(f"u must lie in 0..{r}, got {u}")
    count = (
        M * r
        + M * u * p
        + M * u * (u + 1) // 2
        + (r - u) * (r - u + 1) // 2
        + u * (r - u)
    )
    return count + (M - 1 if count_pi else 0)


def bic_score(
    loglik: float, M: int, u: int, r: int, p: int, n: int, count_pi: bool = False
) -> float:
    if n < 1:
        raise ContractViolation(f"n must be at least 1, got {n}")
    return -2.0 * loglik + np.log(n) * free_param_count(M, u, r, p, count_pi)


@dataclass(frozen=True)
class SelectionCell:
    M: int
    u: int
    bic: float
    loglik: float
    free_params: int
    seed: int
    fit: Optional[FitResult] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class SelectionReport:
    """BIC over the (M, u) grid; ``best`` is None only when every cell failed."""

    cells: Tuple[SelectionCell, ...]
    best: Optional[Tuple[int, int]]
    n: int
    count_pi: bool = False

    def cell(self, M: int, u: int) -> SelectionCell:
        for c in self.cells:
            if (c.M, c.u) == (M, u):
                return c
        raise KeyError((M, u))

    @property
    def best_cell(self) -> Optional[SelectionCell]:
        return None if self.best is None else self.cell(*self.best)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "M": [c.M for c in self.cells],
                "u": [c.u for c in self.cells],
                "bic": [c.bic for c in self.cells],
                "loglik": [c.loglik for c in self.cells],
                "free_params": [c.free_params for c in self.cells],
                "error": [c.error or "" for c in self.cells],
            }
        )


def _fit_cell(
    data: Dataset,
    M: int,
    u: int,
    cfg: IccConfig,
    method: Method,
    two_stage: Optional[TwoStageConfig],
    count_pi: bool,
    keep_fit: bool,
) -> SelectionCell:
    n_params = free_param_count(M, u, data.r, data.p, count_pi)
    with run_context(f"M={M},u={u}"):
        try:
            fit = fit_method(method, data, M, u, cfg, two_stage)
        except EnvMixError as e:
            logger.warning(f"Grid cell failed: {e}")
            return SelectionCell(M, u, np.nan, np.nan, n_params, cfg.seed, error=str(e))
    bic = bic_score(fit.loglik, M, u, data.r, data.p, data.n, count_pi)
    logger.info(f"loglik={fit.loglik:.4f} BIC={bic:.4f}")
    return SelectionCell(
        M, u, bic, fit.loglik, n_params, cfg.seed, fit if keep_fit else None
    )


def select_model(
    data: Dataset,
    M_grid: Sequence[int],
    u_grid: Sequence[int],
    cfg: IccConfig,
    count_pi: bool = False,
    method: Method | str = Method.ICC,
    two_stage: Optional[TwoStageConfig] = None,
    keep_fits: bool = True,
    n_jobs: Optional[int] = None,
) -> SelectionReport:
    """Fit every (M, u) cell with its own derived seed and pick the smallest BIC.

    Ties go to the smaller M, then the smaller u. Cells with u > r are recorded as failed.
    """
    M_values = sorted(set(int(m) for m in M_grid))
    u_values = sorted(set(int(u) for u in u_grid))
    if not M_values or not u_values:
        raise ContractViolation("model selection needs non-empty M and u grids")
    if min(M_values) < 1 or min(u_values) < 0:
        raise ContractViolation("grid values must satisfy M >= 1 and u >= 0")

    pairs = [(M, u) for M in M_values for u in u_values]
    seeds = derive_seeds(cfg.seed, len(pairs))
    method = Method(method)

    tasks = []
    skipped = {}
    for (M, u), seed in zip(pairs, seeds):
        if u > data.r:
            skipped[(M, u)] = SelectionCell(
                M, u, np.nan, np.nan, -1, seed, error=f"u={u} exceeds r={data.r}"
            )
            continue
        tasks.append(
            delayed(_fit_cell)(
                data, M, u, cfg.with_seed(seed), method, two_stage, count_pi, keep_fits
            )
        )

    fitted = iter(
        Parallel(n_jobs=n_jobs or default_n_jobs(), prefer="threads")(tasks)
    )
    cells = tuple(skipped.get(pair) or next(fitted) for pair in pairs)

    scored = [c for c in cells if c.ok and np.isfinite(c.bic)]
    best = min(scored, key=lambda c: (c.bic, c.M, c.u)) if scored else None
    if best is None:
        logger.warning("Every grid cell failed; no model selected")
    else:
        logger.info(f"BIC selects M={best.M}, u={best.u}")
    return SelectionReport(
        cells=cells,
        best=None if best is None else (best.M, best.u),
        n=data.n,
        count_pi=count_pi,
    )
