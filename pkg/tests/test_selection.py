import types
import unittest

import numpy as np
import pytest
from conftest import fast_icc, separated_mixture

from envmix.core.exceptions import ContractViolation, EmptyGroupError
from envmix.fitting import selection
from envmix.fitting.selection import bic_score, free_param_count, select_model


class TestFreeParameters(unittest.TestCase):
    def test_default_scenario(self) -> None:
        self.assertEqual(free_param_count(2, 1, 10, 20), 116)
        self.assertEqual(free_param_count(2, 1, 10, 20, count_pi=True), 117)

    def test_zero_dimension(self) -> None:
        # intercepts plus one shared covariance
        self.assertEqual(free_param_count(3, 0, 4, 2), 3 * 4 + 10)

    def test_full_dimension(self) -> None:
        M, r, p = 2, 4, 3
        self.assertEqual(free_param_count(M, r, r, p), M * r + M * r * p + M * r * (r + 1) // 2)

    def test_enumeration_grid(self) -> None:
        r, p = 10, 20
        for M in range(1, 5):
            for u in range(0, r + 1):
                expected = (
                    M * r
                    + M * u * p
                    + M * u * (u + 1) / 2
                    + (r - u) * (r - u + 1) / 2
                    + u * (r - u)
                )
                self.assertEqual(free_param_count(M, u, r, p), expected)

    def test_invalid_arguments(self) -> None:
        with self.assertRaises(ContractViolation):
            free_param_count(0, 1, 4, 2)
        with self.assertRaises(ContractViolation):
            free_param_count(2, 5, 4, 2)


def test_bic_difference_is_linear_in_loglik() -> None:
    a = bic_score(-100.0, 2, 1, 10, 20, 300)
    b = bic_score(-90.0, 2, 1, 10, 20, 300)
    assert a - b == pytest.approx(20.0)
    assert a == pytest.approx(200.0 + np.log(300) * 116)


def test_bic_needs_observations() -> None:
    with pytest.raises(ContractViolation):
        bic_score(0.0, 1, 1, 2, 2, 0)


def _stub_fit(loglik: float = -100.0):
    return types.SimpleNamespace(loglik=loglik)


class TestSelectModel(unittest.TestCase):
    def setUp(self) -> None:
        self.sim = separated_mixture(31, n=120)

    def test_singleton_grid(self) -> None:
        report = select_model(self.sim.data, [2], [1], fast_icc(), n_jobs=1)
        self.assertEqual(report.best, (2, 1))
        cell = report.best_cell
        assert cell is not None
        self.assertIsNotNone(cell.fit)
        self.assertAlmostEqual(
            cell.bic,
            bic_score(cell.loglik, 2, 1, 4, 2, 120),
        )

    def test_cells_beyond_r_are_recorded_as_failed(self) -> None:
        report = select_model(self.sim.data, [1], [1, 9], fast_icc(), n_jobs=1)
        self.assertFalse(report.cell(1, 9).ok)
        self.assertEqual(report.best, (1, 1))
        frame = report.to_frame()
        self.assertEqual(
            list(frame.columns), ["M", "u", "bic", "loglik", "free_params", "error"]
        )
        self.assertIn("exceeds", frame.loc[frame.u == 9, "error"].item())

    def test_grid_is_enumerated_in_order(self) -> None:
        with pytest.MonkeyPatch.context() as mp:
            mp.setattr(selection, "fit_method", lambda *args: _stub_fit())
            report = select_model(
                self.sim.data,
                [3, 1, 2, 4],
                range(0, 5),
                fast_icc(),
                keep_fits=False,
                n_jobs=1,
            )
        self.assertEqual(len(report.cells), 20)
        self.assertEqual(
            [(c.M, c.u) for c in report.cells[:6]],
            [(1, 0), (1, 1), (1, 2), (1, 3), (1, 4), (2, 0)],
        )
        self.assertTrue(all(c.fit is None for c in report.cells))
        # equal loglik everywhere: the fewest parameters win
        self.assertEqual(report.best, (1, 0))

    def test_ties_go_to_smaller_models(self) -> None:
        with pytest.MonkeyPatch.context() as mp:
            mp.setattr(selection, "fit_method", lambda *args: _stub_fit())
            mp.setattr(selection, "bic_score", lambda *args: 1.0)
            report = select_model(self.sim.data, [2, 3], [2, 1], fast_icc(), n_jobs=1)
        self.assertEqual(report.best, (2, 1))

    def test_cells_get_distinct_seeds(self) -> None:
        with pytest.MonkeyPatch.context() as mp:
            mp.setattr(selection, "fit_method", lambda *args: _stub_fit())
            report = select_model(self.sim.data, [1, 2], [0, 1], fast_icc(), n_jobs=1)
        self.assertEqual(len({c.seed for c in report.cells}), 4)

    def test_every_cell_failing(self) -> None:
        def failing(*args):
            raise EmptyGroupError(0, 1, 2)

        with pytest.MonkeyPatch.context() as mp:
            mp.setattr(selection, "fit_method", failing)
            report = select_model(self.sim.data, [1, 2], [1], fast_icc(), n_jobs=1)
        self.assertIsNone(report.best)
        self.assertIsNone(report.best_cell)
        self.assertTrue(all(not c.ok for c in report.cells))

    def test_empty_grid(self) -> None:
        with self.assertRaises(ContractViolation):
            select_model(self.sim.data, [], [1], fast_icc())
