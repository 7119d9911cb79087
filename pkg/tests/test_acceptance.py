"""Reproductions of the two-cluster simulation study (run with ``nox -s slow``)."""

import numpy as np
import pytest

from envmix.config import BenchConfig, IccConfig, ScenarioConfig, derive_seed
from envmix.evaluation.bench import run_bench
from envmix.evaluation.bootstrap import bootstrap_se
from envmix.evaluation.simulate import generate_scenario
from envmix.fitting.selection import select_model

pytestmark = pytest.mark.slow

ICC = IccConfig(max_iter=100, burn_in=20)


@pytest.fixture(scope="module")
def table():
    cfg = BenchConfig(
        Ms=(2,),
        n_grid=(300, 600, 900),
        replicates=10,
        methods=("icc", "ols", "two-stage", "oracle"),
        bootstrap=False,
        seed=2024,
        icc=ICC,
    )
    return run_bench(cfg).replicates


def _at(rows, n: int, method: str):
    return rows[(rows.n == n) & (rows.method == method)].sort_values("replicate")


def test_icc_classifies_almost_perfectly(table) -> None:
    icc = _at(table, 300, "icc")
    assert icc.fsr.mean() <= 0.02
    assert icc.nsr.mean() <= 0.02


def test_baselines_classify_worse(table) -> None:
    icc = _at(table, 300, "icc").fsr.mean()
    two_stage = _at(table, 300, "two-stage").fsr.mean()
    assert two_stage > icc
    assert two_stage >= 0.15
    assert _at(table, 300, "ols").fsr.mean() >= icc


def test_icc_predicts_best_in_most_replicates(table) -> None:
    icc = _at(table, 300, "icc").err_Y.to_numpy()
    ols = _at(table, 300, "ols").err_Y.to_numpy()
    two_stage = _at(table, 300, "two-stage").err_Y.to_numpy()
    wins = np.sum((icc < ols) & (icc < two_stage))
    assert wins >= 8


def test_icc_prediction_error_is_close_to_oracle(table) -> None:
    icc = _at(table, 300, "icc").err_Y.mean()
    oracle = _at(table, 300, "oracle").err_Y.mean()
    assert abs(icc / oracle - 1.0) <= 0.15


def test_classification_improves_with_n(table) -> None:
    medians = [_at(table, n, "icc").fsr.median() for n in (300, 600, 900)]
    assert medians[0] >= medians[1] >= medians[2]


def test_bic_recovers_the_generating_model() -> None:
    hits = 0
    for rep in range(10):
        seed = derive_seed(77, rep)
        data = generate_scenario(ScenarioConfig(M=2, n=300, u=1, seed=seed)).data
        report = select_model(data, [1, 2, 3], [1, 2, 3], ICC.with_seed(seed), keep_fits=False)
        hits += report.best == (2, 1)
    assert hits >= 8


def test_envelope_is_more_efficient_than_ols() -> None:
    data = generate_scenario(ScenarioConfig(M=2, n=300, u=1, seed=11)).data
    icc = bootstrap_se(data, 2, 1, 50, ICC.with_seed(11), method="icc")
    ols = bootstrap_se(data, 2, 1, 50, ICC.with_seed(11), method="ols")
    assert np.all(icc.group_mean_sd <= ols.group_mean_sd)
