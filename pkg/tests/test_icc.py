import unittest

import numpy as np
import pytest
from conftest import fast_icc, random_theta, separated_mixture

from envmix.config import EmptyClusterPolicy
from envmix.core.exceptions import ContractViolation, EmptyGroupError
from envmix.core.model import Dataset, EnvelopeBasis, GroupParams, MixtureParams, mixture_loglik
from envmix.evaluation.metrics import fsr_nsr
from envmix.fitting.icc import (
    cc_step,
    impute_labels,
    posterior_responsibilities,
    repair_labels,
    run_icc,
    starved_threshold,
)


def _one_dimensional(mus, pi) -> MixtureParams:
    groups = tuple(GroupParams([mu], [[0.0]], [[1.0]]) for mu in mus)
    return MixtureParams(np.asarray(pi), groups, EnvelopeBasis.full(1), np.zeros((0, 0)))


class TestResponsibilities(unittest.TestCase):
    def test_single_cluster_gives_ones(self) -> None:
        theta = _one_dimensional([0.0], [1.0])
        data = Dataset(np.zeros((5, 1)), np.arange(5.0).reshape(-1, 1))
        np.testing.assert_array_equal(posterior_responsibilities(data, theta), np.ones((5, 1)))

    def test_identical_components_split_evenly(self) -> None:
        theta = _one_dimensional([1.0, 1.0], [0.5, 0.5])
        data = Dataset(np.zeros((4, 1)), np.array([[-3.0], [0.0], [1.0], [50.0]]))
        np.testing.assert_allclose(posterior_responsibilities(data, theta), 0.5)

    def test_two_point_bayes_rule(self) -> None:
        theta = _one_dimensional([0.0, 2.0], [0.5, 0.5])
        data = Dataset(np.zeros((2, 1)), np.array([[0.0], [1.0]]))
        gamma = posterior_responsibilities(data, theta)
        self.assertAlmostEqual(gamma[0, 0], 1.0 / (1.0 + np.exp(-2.0)), places=12)
        np.testing.assert_allclose(gamma[1], [0.5, 0.5], atol=1e-12)

    def test_far_outlier_stays_finite(self) -> None:
        theta = _one_dimensional([0.0, 2.0], [0.3, 0.7])
        data = Dataset(np.zeros((1, 1)), np.array([[1e4]]))
        gamma = posterior_responsibilities(data, theta)
        self.assertTrue(np.all(np.isfinite(gamma)))
        self.assertAlmostEqual(gamma.sum(), 1.0, places=12)


@pytest.mark.parametrize("seed", range(50))
def test_responsibility_rows_sum_to_one(seed: int) -> None:
    rng = np.random.default_rng(seed)
    M = int(rng.integers(1, 5))
    r = int(rng.integers(1, 6))
    u = int(rng.integers(0, r + 1))
    theta = random_theta(rng, M=M, r=r, p=2, u=u)
    scale = 10.0 ** rng.integers(0, 4)
    data = Dataset(rng.standard_normal((30, 2)), scale * rng.standard_normal((30, r)))
    gamma = posterior_responsibilities(data, theta)
    assert gamma.shape == (30, M)
    assert np.all(gamma >= 0.0)
    np.testing.assert_allclose(gamma.sum(axis=1), 1.0, rtol=0, atol=1e-12)


class TestImputation(unittest.TestCase):
    def test_point_masses_are_deterministic(self) -> None:
        gamma = np.eye(3)[[2, 0, 1, 1]]
        labels = impute_labels(gamma, np.random.default_rng(0))
        np.testing.assert_array_equal(labels, [2, 0, 1, 1])

    def test_frequencies_follow_probabilities(self) -> None:
        gamma = np.full((10000, 2), 0.5)
        labels = impute_labels(gamma, np.random.default_rng(1))
        self.assertTrue(0.48 <= labels.mean() <= 0.52)

    def test_same_stream_same_draws(self) -> None:
        gamma = np.random.default_rng(2).dirichlet(np.ones(3), size=50)
        a = impute_labels(gamma, np.random.default_rng(9))
        b = impute_labels(gamma, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_rejects_vectors(self) -> None:
        with self.assertRaises(ContractViolation):
            impute_labels(np.array([0.5, 0.5]), np.random.default_rng(0))


def test_cc_step_proportions_are_label_frequencies() -> None:
    sim = separated_mixture(4, n=100)
    labels = np.array([0] * 60 + [1] * 40)
    theta = cc_step(sim.data, labels, 2, 1, fast_icc())
    np.testing.assert_allclose(theta.pi, [0.6, 0.4])


class TestRepair(unittest.TestCase):
    def test_untouched_when_large_enough(self) -> None:
        labels = np.array([0, 0, 1, 1])
        repaired, changed = repair_labels(labels, np.zeros((4, 2)), 2, 2)
        self.assertFalse(changed)
        np.testing.assert_array_equal(repaired, labels)

    def test_moves_highest_scoring_members(self) -> None:
        labels = np.array([0] * 9 + [1])
        scores = np.zeros((10, 2))
        scores[[3, 7], 1] = [5.0, 4.0]
        repaired, changed = repair_labels(labels, scores, 2, 3)
        self.assertTrue(changed)
        self.assertEqual(sorted(np.flatnonzero(repaired == 1).tolist()), [3, 7, 9])

    def test_too_few_observations(self) -> None:
        with self.assertRaises(EmptyGroupError):
            repair_labels(np.array([0, 0, 0, 1, 1]), np.zeros((5, 2)), 2, 3)

    def test_starved_threshold(self) -> None:
        self.assertEqual(starved_threshold(fast_icc(), n=100, p=2, M=2, u=1), 4)
        self.assertEqual(starved_threshold(fast_icc(), n=6, p=8, M=2, u=1), 3)
        self.assertEqual(
            starved_threshold(fast_icc(min_cluster_size=10), n=100, p=2, M=2, u=1), 10
        )


class TestRunIcc(unittest.TestCase):
    def setUp(self) -> None:
        self.sim = separated_mixture(21, n=120)
        self.cfg = fast_icc(seed=5)

    def test_single_cluster_trace_is_constant(self) -> None:
        result = run_icc(self.sim.data, 1, 1, self.cfg)
        self.assertEqual(np.ptp(result.loglik_trace), 0.0)
        self.assertTrue(result.converged)
        np.testing.assert_array_equal(result.labels, 0)

    def test_same_seed_same_run(self) -> None:
        a = run_icc(self.sim.data, 2, 1, self.cfg)
        b = run_icc(self.sim.data, 2, 1, self.cfg)
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.loglik_trace, b.loglik_trace)
        self.assertEqual(a.seed_used, 5)

    def test_reports_best_post_burn_in_iterate(self) -> None:
        result = run_icc(self.sim.data, 2, 1, self.cfg)
        trace = result.loglik_trace
        self.assertGreaterEqual(result.best_iteration, self.cfg.burn_in)
        self.assertEqual(result.loglik, trace[result.best_iteration])
        self.assertEqual(result.loglik, np.max(trace[self.cfg.burn_in :]))
        self.assertAlmostEqual(
            result.loglik, mixture_loglik(self.sim.data, result.theta), places=6
        )
        np.testing.assert_array_equal(
            result.labels, np.argmax(result.responsibilities, axis=1)
        )

    def test_separated_clusters_are_recovered(self) -> None:
        result = run_icc(self.sim.data, 2, 1, self.cfg)
        score = fsr_nsr(result.labels, self.sim.labels, 2)
        self.assertLess(score.fsr, 0.02)
        self.assertLess(score.nsr, 0.02)

    def test_permuted_start_gives_permuted_fit(self) -> None:
        truth = self.sim.truth
        order = [1, 0]
        a = run_icc(self.sim.data, 2, 1, self.cfg, init=truth)
        b = run_icc(self.sim.data, 2, 1, self.cfg, init=truth.permuted(order))
        np.testing.assert_array_equal(np.asarray(order)[b.labels], a.labels)
        self.assertAlmostEqual(a.loglik, b.loglik, delta=1e-6 * abs(a.loglik))

    def test_rejects_bad_arguments(self) -> None:
        with self.assertRaises(ContractViolation):
            run_icc(self.sim.data, 0, 1, self.cfg)
        with self.assertRaises(ContractViolation):
            run_icc(self.sim.data, 2, 5, self.cfg)
        with self.assertRaises(ContractViolation):
            run_icc(self.sim.data, 3, 1, self.cfg, init=self.sim.truth)


class TestEmptyClusterPolicy(unittest.TestCase):
    def setUp(self) -> None:
        sim = separated_mixture(8, n=120)
        labels = sim.labels
        index = np.concatenate(
            [np.flatnonzero(labels == 0)[:50], np.flatnonzero(labels == 1)[:10]]
        )
        self.data = sim.data.subset(index)

    def test_reassign_repairs_and_finishes(self) -> None:
        cfg = fast_icc(min_cluster_size=20)
        result = run_icc(self.data, 2, 1, cfg)
        self.assertEqual(result.restarts, 0)
        self.assertEqual(len(result.loglik_trace), result.iterations)

    def test_restart_uses_up_budget_then_reassigns(self) -> None:
        cfg = fast_icc(
            min_cluster_size=20,
            empty_cluster_policy=EmptyClusterPolicy.RESTART,
            max_restarts=2,
        )
        result = run_icc(self.data, 2, 1, cfg)
        self.assertEqual(result.restarts, 2)

    def test_impossible_minimum_raises(self) -> None:
        with self.assertRaises(EmptyGroupError):
            run_icc(self.data, 2, 1, fast_icc(min_cluster_size=31))


@pytest.mark.parametrize("u", [0, 4])
def test_degenerate_dimensions_run(u: int) -> None:
    sim = separated_mixture(13, n=80)
    result = run_icc(sim.data, 2, u, fast_icc())
    assert result.u == u
    assert np.isfinite(result.loglik)
