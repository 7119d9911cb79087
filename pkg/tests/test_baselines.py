import dataclasses
import unittest

import numpy as np
import pytest
from conftest import fast_icc, separated_mixture

from envmix.config import TwoStageConfig
from envmix.core.exceptions import ContractViolation, EmptyGroupError
from envmix.core.model import Dataset
from envmix.fitting.baselines import (
    Method,
    fit_method,
    fit_ols_mixture,
    fit_oracle,
    normal_scores,
    stage_one_labels,
    svd_scores,
    two_stage_fit,
)
from envmix.fitting.icc import starved_threshold
from envmix.fitting.icc import run_icc


def test_ols_mixture_is_icc_at_full_dimension(separated) -> None:
    cfg = fast_icc(seed=3)
    ols = fit_ols_mixture(separated.data, 2, cfg)
    icc = run_icc(separated.data, 2, separated.data.r, cfg)
    assert ols.method == "ols"
    np.testing.assert_array_equal(ols.labels, icc.labels)
    np.testing.assert_array_equal(ols.loglik_trace, icc.loglik_trace)
    assert ols.u == separated.data.r


def test_normal_scores_are_probit_ranks() -> None:
    z = normal_scores(np.array([[10.0, -1.0], [30.0, -3.0], [20.0, -2.0], [40.0, -4.0]]))
    expected = np.array([-1.1503493803760079, 0.31863936396437515])
    np.testing.assert_allclose(z[:2, 0], expected, atol=1e-12)
    np.testing.assert_allclose(z[:, 1], -z[:, 0], atol=1e-12)
    assert z.mean() == pytest.approx(0.0, abs=1e-12)


def test_svd_scores_shape_and_centering() -> None:
    Y = np.random.default_rng(0).standard_normal((30, 5)) + 7.0
    scores = svd_scores(Y, 3)
    assert scores.shape == (30, 3)
    np.testing.assert_allclose(scores.mean(axis=0), 0.0, atol=1e-10)
    variances = scores.var(axis=0)
    assert np.all(np.diff(variances) <= 1e-10)


class TestTwoStage(unittest.TestCase):
    def setUp(self) -> None:
        self.sim = separated_mixture(17, n=120)
        self.ts = TwoStageConfig(seed=4)

    def test_fit_on_stage_one_labels(self) -> None:
        fit = two_stage_fit(self.sim.data, 2, 1, self.ts, fast_icc())
        self.assertEqual(fit.method, "two-stage")
        size = starved_threshold(fast_icc(), 120, 2, 2, 1)
        expected = stage_one_labels(self.sim.data.Y, 2, self.ts, min_size=size)
        np.testing.assert_array_equal(fit.labels, expected)
        self.assertTrue(np.isfinite(fit.loglik))

    def test_stage_one_ignores_predictors(self) -> None:
        data = self.sim.data
        shuffled = Dataset(data.X[::-1], data.Y, data.true_labels)
        a = two_stage_fit(data, 2, 1, self.ts, fast_icc())
        b = two_stage_fit(shuffled, 2, 1, self.ts, fast_icc())
        np.testing.assert_array_equal(a.labels, b.labels)
        self.assertFalse(np.allclose(a.theta.betas()[0], b.theta.betas()[0]))

    def test_minimum_size_is_enforced(self) -> None:
        labels = stage_one_labels(self.sim.data.Y, 2, self.ts, min_size=55)
        self.assertGreaterEqual(np.bincount(labels, minlength=2).min(), 55)

    def test_fit_honours_the_icc_threshold(self) -> None:
        fit = two_stage_fit(self.sim.data, 2, 1, self.ts, fast_icc(min_cluster_size=55))
        self.assertGreaterEqual(np.bincount(fit.labels, minlength=2).min(), 55)

    def test_rejects_bad_dimension(self) -> None:
        with self.assertRaises(ContractViolation):
            two_stage_fit(self.sim.data, 2, 9, self.ts, fast_icc())


class TestOracle(unittest.TestCase):
    def test_uses_true_labels(self) -> None:
        sim = separated_mixture(6, n=80)
        fit = fit_oracle(sim.data, 2, 1, fast_icc())
        np.testing.assert_array_equal(fit.labels, sim.labels)
        self.assertEqual(fit.method, "oracle")
        self.assertEqual(len(fit.loglik_trace), 1)

    def test_needs_labels(self) -> None:
        sim = separated_mixture(6, n=80)
        with self.assertRaises(ContractViolation):
            fit_oracle(Dataset(sim.data.X, sim.data.Y), 2, 1, fast_icc())

    def test_starved_true_cluster_raises(self) -> None:
        sim = separated_mixture(6, n=80)
        labels = np.zeros(80, dtype=int)
        labels[:3] = 1
        with self.assertRaises(EmptyGroupError):
            fit_oracle(Dataset(sim.data.X, sim.data.Y, labels), 2, 1, fast_icc())


@pytest.mark.parametrize("method", list(Method))
def test_dispatch_by_name(method: Method) -> None:
    sim = separated_mixture(9, n=90)
    fit = fit_method(method.value, sim.data, 2, 1, fast_icc())
    assert fit.method == method.value
    assert fit.theta.M == 2


def test_unknown_method() -> None:
    sim = separated_mixture(9, n=40)
    with pytest.raises(ValueError):
        fit_method("lasso", sim.data, 2, 1, fast_icc())


def test_fit_result_is_frozen(separated) -> None:
    fit = fit_oracle(separated.data, 2, 1, fast_icc())
    with pytest.raises(dataclasses.FrozenInstanceError):
        fit.loglik = 0.0  # type: ignore[misc]
