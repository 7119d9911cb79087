"""Shared builders for small, fast mixture problems."""

import numpy as np
import pytest

from envmix.config import IccConfig, OptimizerConfig
from envmix.core.model import Dataset, GroupParams, MixtureParams
from envmix.evaluation.simulate import SimDataset, draw_responses, random_basis


def fast_icc(seed: int = 0, **overrides) -> IccConfig:
    settings = dict(
        max_iter=30,
        burn_in=5,
        window=3,
        n_starts=2,
        seed=seed,
        optimizer=OptimizerConfig(max_iter=200),
    )
    settings.update(overrides)
    return IccConfig(**settings)


def random_theta(
    rng: np.random.Generator, M: int = 2, r: int = 4, p: int = 2, u: int = 1
) -> MixtureParams:
    """Arbitrary valid parameters (no separation guarantees)."""
    basis, _ = random_basis(r, u, rng)
    groups = []
    for _ in range(M):
        a = rng.standard_normal((u, u))
        groups.append(
            GroupParams(
                rng.standard_normal(r),
                rng.standard_normal((u, p)),
                a @ a.T + 0.5 * np.eye(u),
            )
        )
    b = rng.standard_normal((r - u, r - u))
    pi = rng.dirichlet(np.ones(M)) * 0.9 + 0.1 / M
    pi /= pi.sum()
    return MixtureParams(pi, tuple(groups), basis, b @ b.T + 0.5 * np.eye(r - u))


def separated_mixture(
    seed: int,
    n: int = 150,
    M: int = 2,
    r: int = 4,
    p: int = 2,
    u: int = 1,
    noise: float = 1.0,
) -> SimDataset:
    """Clusters whose intercepts sit 20 units apart along the all-ones direction."""
    rng = np.random.default_rng(seed)
    basis, _ = random_basis(r, u, rng)
    groups = tuple(
        GroupParams(
            np.full(r, 20.0 * k),
            rng.normal(0.0, 3.0, size=(u, p)),
            noise * (1.0 + 0.5 * k) * np.eye(u),
        )
        for k in range(M)
    )
    theta = MixtureParams(np.full(M, 1.0 / M), groups, basis, noise * np.eye(r - u))
    X = rng.normal(1.0, 1.0, size=(n, p))
    labels = rng.permutation(np.arange(n) % M)
    Y = draw_responses(theta, X, labels, rng)
    return SimDataset(Dataset(X, Y, labels), theta, {})


@pytest.fixture
def separated() -> SimDataset:
    return separated_mixture(seed=11)
