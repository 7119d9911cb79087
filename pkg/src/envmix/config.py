"""Run configuration models and their validation."""

from enum import Enum
from typing import Any, Dict, Literal, Optional, Tuple, Type, TypeVar

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from envmix.core.exceptions import ConfigError

SEED_MAX = 2**64

ModelT = TypeVar("ModelT", bound=BaseModel)


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    def with_seed(self: ModelT, seed: int) -> ModelT:
        return self.model_copy(update={"seed": int(seed) % SEED_MAX})


class EmptyClusterPolicy(str, Enum):
    REASSIGN = "reassign"
    RESTART = "restart"


class PredictionRule(str, Enum):
    MIXTURE = "mixture"  # sum_k pi_k (mu_k + beta_k x)
    MAX_PI = "max_pi"  # component with the largest pi_k


class OptimizerConfig(_Frozen):
    """Grassmann descent settings for the envelope basis."""

    max_iter: int = Field(500, ge=1)
    grad_tol: float = Field(1e-8, gt=0)
    n_starts: int = Field(5, ge=1)
    armijo: float = Field(1e-4, gt=0, lt=1)
    initial_step: float = Field(1.0, gt=0)
    min_step: float = Field(1e-12, gt=0)
    seed: int = Field(0, ge=0, lt=SEED_MAX)


class IccConfig(_Frozen):
    """Settings of the imputation / conditional-consistency loop."""

    max_iter: int = Field(200, ge=1)
    burn_in: int = Field(50, ge=0)
    loglik_tol: float = Field(1e-4, gt=0)
    window: int = Field(10, ge=1)
    n_starts: int = Field(5, ge=1)
    seed: int = Field(0, ge=0, lt=SEED_MAX)
    empty_cluster_policy: EmptyClusterPolicy = EmptyClusterPolicy.REASSIGN
    max_restarts: int = Field(5, ge=0)
    pi_floor: float = Field(1e-6, ge=1e-6, lt=0.5)
    # None: max(2, u + 1, p + u + 1), the smallest size with a non-singular Omega_k
    min_cluster_size: Optional[int] = Field(None, ge=2)
    optimizer: OptimizerConfig = OptimizerConfig()

    @model_validator(mode="after")
    def _burn_in_before_end(self) -> "IccConfig":
        if self.burn_in >= self.max_iter:
            raise ValueError(
                f"burn_in ({self.burn_in}) must be smaller than max_iter ({self.max_iter})"
            )
        return self

    def optimizer_config(self, seed: int) -> OptimizerConfig:
        return self.optimizer.model_copy(
            update={"n_starts": self.n_starts, "seed": int(seed) % SEED_MAX}
        )


class ScenarioConfig(_Frozen):
    """Simulation scenario: M clusters, n observations, r responses, p predictors."""

    M: int = Field(2, ge=1)
    n: int = Field(300, ge=1)
    r: int = Field(10, ge=1)
    p: int = Field(20, ge=1)
    u: int = Field(1, ge=0)
    proportions: Optional[Tuple[float, ...]] = None
    seed: int = Field(0, ge=0, lt=SEED_MAX)

    @model_validator(mode="after")
    def _check_shapes(self) -> "ScenarioConfig":
        if self.u > self.r:
            raise ValueError(f"u ({self.u}) cannot exceed r ({self.r})")
        if self.n < self.M:
            raise ValueError(f"n ({self.n}) must be at least M ({self.M})")
        if self.proportions is not None:
            if len(self.proportions) != self.M:
                raise ValueError(f"proportions must have {self.M} entries")
            if any(p <= 0 for p in self.proportions):
                raise ValueError("proportions must be positive")
            if abs(sum(self.proportions) - 1.0) > 1e-9:
                raise ValueError("proportions must sum to 1")
        return self

    def resolved_proportions(self) -> Tuple[float, ...]:
        if self.proportions is not None:
            return self.proportions
        if self.M == 2:
            return (0.4, 0.6)
        return tuple(1.0 / self.M for _ in range(self.M))


class TwoStageConfig(_Frozen):
    """SVD scores, normal-scores transform and Gaussian-mixture clustering."""

    svd_components: int = Field(3, ge=1)
    gmm_max_iter: int = Field(500, ge=1)
    gmm_tol: float = Field(1e-8, gt=0)
    max_retries: int = Field(5, ge=0)
    seed: int = Field(0, ge=0, lt=SEED_MAX)


class CvConfig(_Frozen):
    folds: int = Field(5, ge=2)
    repeats: int = Field(1, ge=1)
    rule: PredictionRule = PredictionRule.MIXTURE
    seed: int = Field(0, ge=0, lt=SEED_MAX)


class BootstrapConfig(_Frozen):
    B: int = Field(50, ge=2)
    seed: int = Field(0, ge=0, lt=SEED_MAX)


MethodName = Literal["icc", "ols", "two-stage", "oracle"]


class BenchConfig(_Frozen):
    """Replicated comparison of fitting methods over simulated scenarios."""

    Ms: Tuple[int, ...] = (2, 3)
    n_grid: Tuple[int, ...] = (300, 600, 900)
    # sample sizes of the bootstrap SD curves; empty means n_grid
    curve_n: Tuple[int, ...] = ()
    replicates: int = Field(10, ge=1)
    methods: Tuple[MethodName, ...] = ("icc", "ols", "two-stage")
    u: int = Field(1, ge=0)
    r: int = Field(10, ge=1)
    p: int = Field(20, ge=1)
    folds: int = Field(5, ge=2)
    B: int = Field(50, ge=2)
    bootstrap: bool = True
    rule: PredictionRule = PredictionRule.MIXTURE
    seed: int = Field(0, ge=0, lt=SEED_MAX)
    icc: IccConfig = IccConfig()
    two_stage: TwoStageConfig = TwoStageConfig()

    @model_validator(mode="after")
    def _check_grid(self) -> "BenchConfig":
        if not self.Ms or not self.n_grid or not self.methods:
            raise ValueError("Ms, n_grid and methods must be non-empty")
        if min(self.Ms) < 1 or min(self.n_grid + self.curve_n) < 1:
            raise ValueError("cluster counts and sample sizes must be positive")
        if self.u > self.r:
            raise ValueError(f"u ({self.u}) cannot exceed r ({self.r})")
        return self

    def curve_sizes(self) -> Tuple[int, ...]:
        return self.curve_n or self.n_grid


def validate_config(data: Dict[str, Any], model_class: Type[ModelT]) -> ModelT:
    """
    Instantiate a configuration model, converting pydantic errors to ConfigError.

    Args:
        data: Raw option values (e.g. from the command line).
        model_class: The configuration model to validate against.

    Returns:
        The validated model instance.
    """
    try:
        return model_class.model_validate(data)
    except ValidationError as e:
        errors: Dict[str, str] = {}
        for err in e.errors():
            loc = err.get("loc", ())
            field_name = ".".join(str(part) for part in loc) or "__all__"

            msg = err.get("msg", "Invalid value")
            if msg.startswith("Value error, "):
                msg = msg[len("Value error, ") :]

            errors[field_name] = msg

        raise ConfigError(model_class.__name__, errors) from e


def derive_seeds(seed: int, count: int) -> list[int]:
    """Independent 64-bit child seeds of a master seed, one per task, in task order."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def derive_seed(seed: int, *key: int) -> int:
    """A 64-bit seed addressed by ``key`` under a master seed (order-independent of other keys)."""
    sequence = np.random.SeedSequence([int(seed), *(int(k) for k in key)])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
