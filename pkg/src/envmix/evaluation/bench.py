"""Replicated method comparison: classification rates, CV error and bootstrap SD curves."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from envmix.config import BenchConfig, ScenarioConfig, derive_seed
from envmix.core.exceptions import EnvMixError
from envmix.core.model import Dataset
from envmix.evaluation.bootstrap import BootstrapReport, bootstrap_se, sd_ratio
from envmix.evaluation.crossval import cv_prediction_error
from envmix.evaluation.metrics import fsr_nsr
from envmix.evaluation.simulate import generate_scenario
from envmix.fitting.baselines import Method, fit_method
from envmix.logging import run_context

logger = logging.getLogger(__name__)

REFERENCE_METHOD = Method.ICC.value


@dataclass(frozen=True)
class BenchResult:
    replicates: pd.DataFrame
    table: pd.DataFrame
    bootstrap: pd.DataFrame
    sd_ratio: pd.DataFrame


def _scenario(cfg: BenchConfig, M: int, n: int, replicate: int) -> Dataset:
    scenario = ScenarioConfig(
        M=M, n=n, r=cfg.r, p=cfg.p, u=cfg.u, seed=derive_seed(cfg.seed, M, n, replicate)
    )
    return generate_scenario(scenario).data


def _evaluate_method(
    cfg: BenchConfig,
    data: Dataset,
    M: int,
    method: str,
    seed: int,
    n_jobs: Optional[int] = None,
) -> Dict[str, Any]:
    icc = cfg.icc.with_seed(seed)
    two_stage = cfg.two_stage.with_seed(seed)
    row: Dict[str, Any] = {
        "fsr": np.nan,
        "nsr": np.nan,
        "err_Y": np.nan,
        "converged": False,
        "error": "",
    }
    try:
        fit = fit_method(method, data, M, cfg.u, icc, two_stage)
        assert data.true_labels is not None
        score = fsr_nsr(fit.labels, data.true_labels, M)
        row.update(fsr=score.fsr, nsr=score.nsr, converged=fit.converged)
        report = cv_prediction_error(
            data,
            M,
            cfg.u,
            cfg.folds,
            1,
            icc,
            cfg.rule,
            method,
            two_stage,
            seed=seed,
            n_jobs=n_jobs,
        )
        row["err_Y"] = report.mean_error
    except EnvMixError as e:
        logger.warning(f"{method} failed: {e}")
        row["error"] = str(e)
    return row


def _summarize(replicates: pd.DataFrame) -> pd.DataFrame:
    grouped = replicates.groupby(["n", "M", "method"], sort=False)
    table = grouped.agg(
        err_Y_mean=("err_Y", "mean"),
        err_Y_sd=("err_Y", "std"),
        fsr_mean=("fsr", "mean"),
        fsr_sd=("fsr", "std"),
        nsr_mean=("nsr", "mean"),
        nsr_sd=("nsr", "std"),
        replicates=("replicate", "count"),
        failures=("error", lambda errors: int(sum(bool(e) for e in errors))),
    )
    return table.reset_index()


def _bootstrap_rows(
    cfg: BenchConfig, n_jobs: Optional[int]
) -> tuple[List[Dict[str, Any]], List[Dict[str, Any]]]:
    curve_rows, ratio_rows = [], []
    for M in cfg.Ms:
        for n in cfg.curve_sizes():
            data = _scenario(cfg, M, n, 0)
            reports: Dict[str, BootstrapReport] = {}
            for method in cfg.methods:
                seed = derive_seed(cfg.seed, M, n, 0, cfg.methods.index(method), 1)
                with run_context(f"boot:{method}:M={M}:n={n}"):
                    try:
                        report = bootstrap_se(
                            data,
                            M,
                            cfg.u,
                            cfg.B,
                            cfg.icc.with_seed(seed),
                            method=method,
                            two_stage=cfg.two_stage.with_seed(seed),
                            n_jobs=n_jobs,
                        )
                    except EnvMixError as e:
                        logger.warning(f"Bootstrap of {method} failed: {e}")
                        continue
                reports[method] = report
                for k, value in enumerate(report.group_mean_sd):
                    curve_rows.append(
                        {
                            "n": n,
                            "M": M,
                            "method": method,
                            "component": k + 1,
                            "group_mean_sd": float(value),
                            "n_success": report.n_success,
                        }
                    )
            reference = reports.get(REFERENCE_METHOD)
            if reference is None:
                continue
            for method, report in reports.items():
                if method == REFERENCE_METHOD:
                    continue
                for k, ratio in enumerate(sd_ratio(report, reference)):
                    ratio_rows.append(
                        {
                            "n": n,
                            "M": M,
                            "method": method,
                            "reference": REFERENCE_METHOD,
                            "component": k + 1,
                            "mean_ratio": float(np.nanmean(ratio)),
                            "median_ratio": float(np.nanmedian(ratio)),
                        }
                    )
    return curve_rows, ratio_rows


def run_bench(cfg: BenchConfig, n_jobs: Optional[int] = None) -> BenchResult:
    """All methods on ``replicates`` datasets per (M, n); bootstrap curves on replicate 0."""
    rows: List[Dict[str, Any]] = []
    for M in cfg.Ms:
        for n in cfg.n_grid:
            for rep in range(cfg.replicates):
                data = _scenario(cfg, M, n, rep)
                for j, method in enumerate(cfg.methods):
                    seed = derive_seed(cfg.seed, M, n, rep, j)
                    with run_context(f"{method}:M={M}:n={n}:rep={rep}"):
                        outcome = _evaluate_method(cfg, data, M, method, seed, n_jobs)
                    rows.append(
                        {"n": n, "M": M, "method": method, "replicate": rep, **outcome}
                    )
                logger.info(f"Finished replicate {rep} at M={M}, n={n}")

    replicates = pd.DataFrame(rows)
    curve_rows, ratio_rows = _bootstrap_rows(cfg, n_jobs) if cfg.bootstrap else ([], [])
    return BenchResult(
        replicates=replicates,
        table=_summarize(replicates),
        bootstrap=pd.DataFrame(
            curve_rows,
            columns=["n", "M", "method", "component", "group_mean_sd", "n_success"],
        ),
        sd_ratio=pd.DataFrame(
            ratio_rows,
            columns=["n", "M", "method", "reference", "component", "mean_ratio", "median_ratio"],
        ),
    )
