"""CSV and JSON artifacts: data matrices, labels, fitted parameters and run manifests.

Labels are 1-based in files and 0-based in memory; conversion happens only here.
"""

from __future__ import annotations

import json
import logging
import math
import re
from pathlib import Path
from typing import Any, Dict, Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from envmix import __version__
from envmix.core.exceptions import DataFormatError
from envmix.core.linalg import FloatArray
from envmix.core.model import Dataset, Labels, MixtureParams, canonicalize
from envmix.fitting.icc import FitResult
from envmix.settings import run_timestamp

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
LABEL_COLUMN = "label"

Command = Literal["simulate", "fit", "select", "evaluate", "bench"]


class RunManifest(BaseModel):
    """Everything needed to re-run the command that produced an artifact."""

    model_config = ConfigDict(frozen=True)

    command: Command
    inputs: Dict[str, str] = {}
    output: str
    options: Dict[str, Any] = {}
    version: str = __version__
    timestamp: str

    @classmethod
    def create(
        cls,
        command: Command,
        output: Path | str,
        options: Dict[str, Any],
        inputs: Optional[Dict[str, Path | str]] = None,
    ) -> RunManifest:
        return cls(
            command=command,
            inputs={k: str(v) for k, v in (inputs or {}).items()},
            output=str(output),
            options=options,
            timestamp=run_timestamp(),
        )


_PARSER_LINE = re.compile(r"line (\d+)")


def _read_frame(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, float_precision="round_trip", skipinitialspace=True)
    except FileNotFoundError:
        raise DataFormatError("file not found", str(path))
    except pd.errors.EmptyDataError:
        raise DataFormatError("file is empty", str(path))
    except pd.errors.ParserError as e:
        match = _PARSER_LINE.search(str(e))
        line = int(match.group(1)) if match else 0
        raise DataFormatError(f"malformed CSV row ({e})", str(path), line)


def _numeric(frame: pd.DataFrame, path: Path) -> FloatArray:
    values = frame.apply(pd.to_numeric, errors="coerce")
    bad = values.isna().to_numpy() | ~np.isfinite(values.to_numpy(dtype=float))
    if bad.any():
        row, col = (int(i) for i in np.argwhere(bad)[0])
        raw = frame.iat[row, col]
        # header is line 1
        raise DataFormatError(
            f"expected a finite number in column {frame.columns[col]!r}, got {raw!r}",
            str(path),
            line=row + 2,
            column=col + 1,
        )
    return values.to_numpy(dtype=float)


def read_matrix(path: Path | str) -> FloatArray:
    """Read a numeric CSV with a header row into an n x d float matrix."""
    path = Path(path)
    frame = _read_frame(path)
    if frame.shape[0] == 0 or frame.shape[1] == 0:
        raise DataFormatError("no data rows", str(path))
    return _numeric(frame, path)


def write_matrix(path: Path | str, values: FloatArray, prefix: str) -> None:
    values = np.asarray(values, dtype=float)
    columns = [f"{prefix}{j + 1}" for j in range(values.shape[1])]
    pd.DataFrame(values, columns=columns).to_csv(
        path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
    )


def read_labels(path: Path | str, M: Optional[int] = None) -> Labels:
    """Read a one-column ``label`` CSV of 1-based labels as 0-based indices."""
    path = Path(path)
    frame = _read_frame(path)
    if frame.shape[1] != 1:
        raise DataFormatError(
            f"expected a single '{LABEL_COLUMN}' column, got {frame.shape[1]}", str(path), 1
        )
    raw = frame.iloc[:, 0]
    values = pd.to_numeric(raw, errors="coerce")
    upper = M if M is not None else np.inf
    for row, (text, value) in enumerate(zip(raw, values)):
        if pd.isna(value) or value != int(value) or not 1 <= value <= upper:
            bound = f"1..{M}" if M is not None else "a positive integer"
            raise DataFormatError(
                f"label must be {bound}, got {text!r}", str(path), line=row + 2, column=1
            )
    return values.to_numpy(dtype=np.int64) - 1


def write_labels(path: Path | str, labels: Labels) -> None:
    frame = pd.DataFrame({LABEL_COLUMN: np.asarray(labels, dtype=np.int64) + 1})
    frame.to_csv(path, index=False, lineterminator="\n")


def load_dataset(
    x_path: Path | str,
    y_path: Path | str,
    labels_path: Optional[Path | str] = None,
    M: Optional[int] = None,
) -> Dataset:
    X = read_matrix(x_path)
    Y = read_matrix(y_path)
    if X.shape[0] != Y.shape[0]:
        raise DataFormatError(
            f"{Y.shape[0]} data rows but {x_path} has {X.shape[0]}", str(y_path)
        )
    labels = None
    if labels_path is not None:
        labels = read_labels(labels_path, M)
        if labels.shape[0] != X.shape[0]:
            raise DataFormatError(
                f"{labels.shape[0]} labels for {X.shape[0]} observations", str(labels_path)
            )
    logger.info(f"Loaded n={X.shape[0]}, p={X.shape[1]}, r={Y.shape[1]}")
    return Dataset(X, Y, labels)


def write_dataset(directory: Path | str, data: Dataset) -> Dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"X": directory / "X.csv", "Y": directory / "Y.csv"}
    write_matrix(paths["X"], data.X, "x")
    write_matrix(paths["Y"], data.Y, "y")
    if data.true_labels is not None:
        paths["labels"] = directory / "labels.csv"
        write_labels(paths["labels"], data.true_labels)
    return paths


def theta_to_dict(theta: MixtureParams, canonical: bool = True) -> Dict[str, Any]:
    """Plain-list view of theta, with beta_k and the Frobenius norms of every Omega."""
    if canonical:
        theta = canonicalize(theta)
    return {
        "M": theta.M,
        "r": theta.r,
        "p": theta.p,
        "u": theta.u,
        "pi": theta.pi.tolist(),
        "mu": [g.mu.tolist() for g in theta.groups],
        "Gamma": theta.basis.Gamma.tolist(),
        "Gamma0": theta.basis.Gamma0.tolist(),
        "eta": [g.eta.tolist() for g in theta.groups],
        "Omega": [g.Omega.tolist() for g in theta.groups],
        "Omega0": theta.Omega0.tolist(),
        "beta": [b.tolist() for b in theta.betas()],
        "omega_norms": {
            "Omega": [float(np.linalg.norm(g.Omega)) for g in theta.groups],
            "Omega0": float(np.linalg.norm(theta.Omega0)),
        },
    }


def fit_to_dict(result: FitResult) -> Dict[str, Any]:
    return {
        "method": result.method,
        "theta": theta_to_dict(result.theta),
        "labels": (result.labels + 1).tolist(),
        "responsibilities": result.responsibilities.tolist(),
        "loglik": result.loglik,
        "loglik_trace": result.loglik_trace.tolist(),
        "converged": result.converged,
        "iterations": result.iterations,
        "best_iteration": result.best_iteration,
        "restarts": result.restarts,
        "seed_used": result.seed_used,
    }


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return _jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(path: Path | str, payload: Dict[str, Any], manifest: RunManifest) -> None:
    """Write ``payload`` with the manifest embedded; non-finite floats become null."""
    document = {"manifest": manifest.model_dump(mode="json"), **_jsonable(payload)}
    Path(path).write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")


def write_frame(path: Path | str, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
