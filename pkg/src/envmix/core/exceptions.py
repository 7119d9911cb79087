"""Error hierarchy shared by every envmix module."""

from typing import Dict


class EnvMixError(Exception):
    """Base class for all envmix errors."""

    pass


class ContractViolation(EnvMixError, ValueError):
    """Raised when inputs break a documented precondition (shapes, labels, empty data)."""

    pass


class NotPositiveDefiniteError(ContractViolation):
    """Raised when a matrix that must be positive definite is not."""

    def __init__(self, name: str, detail: str = "") -> None:
        self.name = name
        message = f"{name} is not symmetric positive definite"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class SingularMatrixError(EnvMixError):
    """Raised when a factorization fails even after ridge regularization."""

    def __init__(self, name: str, detail: str = "") -> None:
        self.name = name
        message = f"{name} is numerically singular"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class EmptyGroupError(EnvMixError):
    """Raised when a cluster has too few observations to be fitted."""

    def __init__(self, k: int, n_k: int, required: int) -> None:
        self.k = k
        self.n_k = n_k
        self.required = required
        super().__init__(
            f"cluster {k} has {n_k} observations, at least {required} required"
        )


class DataFormatError(EnvMixError):
    """Raised when an input file cannot be read as numeric data."""

    def __init__(
        self, message: str, file_path: str = "", line: int = 0, column: int = 0
    ):
        self.message = message
        self.file_path = file_path
        self.line = line
        self.column = column
        super().__init__(message)

    def __str__(self) -> str:
        if self.file_path and self.line:
            if self.column:
                return f"{self.file_path}:{self.line}:{self.column}: {self.message}"
            return f"{self.file_path}:{self.line}: {self.message}"
        if self.file_path:
            return f"{self.file_path}: {self.message}"
        return self.message


class ConfigError(EnvMixError, ValueError):
    """Raised when a configuration model fails validation."""

    def __init__(self, model_name: str, errors: Dict[str, str]) -> None:
        self.model_name = model_name
        self.errors = errors
        details = "; ".join(f"{field}: {msg}" for field, msg in errors.items())
        super().__init__(f"invalid {model_name}: {details}")
