"""Riemannian gradient descent on the Grassmann manifold of u-dimensional subspaces of R^r."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple

import numpy as np

from envmix.config import OptimizerConfig
from envmix.core.exceptions import EnvMixError, SingularMatrixError
from envmix.core.linalg import FloatArray, qr_retract

logger = logging.getLogger(__name__)

# f(Gamma) -> (value, Euclidean gradient)
ObjectiveFn = Callable[[FloatArray], Tuple[float, FloatArray]]


@dataclass(frozen=True)
class DescentPath:
    gamma: FloatArray
    value: float
    trace: Tuple[float, ...]
    converged: bool
    iterations: int


@dataclass(frozen=True)
class GrassmannResult:
    """Best descent path over all starts."""

    gamma: FloatArray
    value: float
    trace: Tuple[float, ...]
    converged: bool
    start_index: int
    start_values: Tuple[float, ...] = field(default=())


def project_gradient(gamma: FloatArray, egrad: FloatArray) -> FloatArray:
    """Riemannian gradient: the Euclidean gradient projected off span(gamma)."""
    return egrad - gamma @ (gamma.T @ egrad)


def random_start(r: int, u: int, rng: np.random.Generator) -> FloatArray:
    return qr_retract(rng.standard_normal((r, u)))


def _safe_eval(fun: ObjectiveFn, gamma: FloatArray) -> Tuple[float, FloatArray | None]:
    try:
        value, egrad = fun(gamma)
    except EnvMixError:
        return np.inf, None
    if not np.isfinite(value):
        return np.inf, None
    return value, egrad


def descend(fun: ObjectiveFn, gamma: FloatArray, cfg: OptimizerConfig) -> DescentPath:
    """Armijo-backtracking gradient descent with QR retraction from one start."""
    gamma = qr_retract(gamma)
    value, egrad = _safe_eval(fun, gamma)
    if egrad is None:
        return DescentPath(gamma, np.inf, (np.inf,), False, 0)
    trace = [value]
    step = cfg.initial_step
    converged = False
    iterations = 0

    for iterations in range(1, cfg.max_iter + 1):
        grad = project_gradient(gamma, egrad)
        gnorm2 = float(np.sum(grad**2))
        if np.sqrt(gnorm2) < cfg.grad_tol:
            converged = True
            break

        t = step
        accepted = False
        while t >= cfg.min_step:
            candidate = qr_retract(gamma - t * grad)
            cand_value, cand_grad = _safe_eval(fun, candidate)
            if cand_grad is not None and cand_value <= value - cfg.armijo * t * gnorm2:
                accepted = True
                break
            t *= 0.5

        if not accepted:
            # No resolvable descent left at machine precision
            converged = True
            break

        gamma, value, egrad = candidate, cand_value, cand_grad
        trace.append(value)
        step = 2.0 * t

    if not converged:
        logger.debug(f"Grassmann descent stopped at max_iter={cfg.max_iter}")
    return DescentPath(gamma, value, tuple(trace), converged, iterations)


def minimize(
    fun: ObjectiveFn, starts: Sequence[FloatArray], cfg: OptimizerConfig
) -> GrassmannResult:
    """Descend from every start; lowest objective wins, ties go to the earlier start."""
    if not starts:
        raise ValueError("at least one starting point is required")
    paths: List[DescentPath] = [descend(fun, s, cfg) for s in starts]
    best_index = min(range(len(paths)), key=lambda i: (paths[i].value, i))
    best = paths[best_index]
    if not np.isfinite(best.value):
        raise SingularMatrixError("envelope objective", "no start gave a finite value")
    if not best.converged:
        logger.warning(
            f"Grassmann optimizer hit max_iter={cfg.max_iter}; returning best iterate"
        )
    return GrassmannResult(
        gamma=best.gamma,
        value=best.value,
        trace=best.trace,
        converged=best.converged,
        start_index=best_index,
        start_values=tuple(p.trace[0] for p in paths),
    )
