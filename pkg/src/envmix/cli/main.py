"""Main CLI entry point."""

import functools
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, TypeVar

import numpy as np
import rich.panel
import rich_click as click
from rich.console import Console
from rich.markup import escape

from envmix import __version__
from envmix.config import (
    BenchConfig,
    BootstrapConfig,
    CvConfig,
    IccConfig,
    ScenarioConfig,
    TwoStageConfig,
    validate_config,
)
from envmix.core.exceptions import (
    ConfigError,
    ContractViolation,
    DataFormatError,
    EmptyGroupError,
    EnvMixError,
    NotPositiveDefiniteError,
    SingularMatrixError,
)
from envmix.logging import configure_logging

console = Console(stderr=True)

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4

click.rich_click.USE_RICH_MARKUP = True
click.rich_click.STYLE_HELPTEXT_FIRST = True
click.rich_click.STYLE_COMMANDS_TABLE_SHOW_LINES = False
click.rich_click.STYLE_COMMANDS_TABLE_PAD_EDGE = False
click.rich_click.STYLE_COMMANDS_TABLE_BOX = None
click.rich_click.STYLE_COMMANDS_TABLE_EXPAND = False
click.rich_click.STYLE_OPTIONS_TABLE_EXPAND = False
click.rich_click.STYLE_COMMANDS_TABLE_HEADER = "bold magenta"
click.rich_click.SHOW_ARGUMENTS = True
click.rich_click.GROUP_ARGUMENTS_OPTIONS = True
click.rich_click.STYLE_ERRORS_SUGGESTION = "magenta italic"
click.rich_click.ERRORS_SUGGESTION = "Try running 'envmix --help' for more information."
click.rich_click.STYLE_OPTIONS_TABLE_BOX = None
click.rich_click.STYLE_COMMANDS_PANEL_BOX = None
click.rich_click.STYLE_OPTIONS_PANEL_BOX = None

click.rich_click.STYLE_HEADER_TEXT = "bold cyan"
click.rich_click.STYLE_OPTION = "cyan"
click.rich_click.STYLE_SWITCH = "cyan"
click.rich_click.STYLE_METAVAR = "dim white"
click.rich_click.STYLE_USAGE_COMMAND = "cyan"
click.rich_click.STYLE_USAGE = "dim"

_ICC_OPTIONS = [
    "--seed",
    "--max-iter",
    "--burn-in",
    "--window",
    "--loglik-tol",
    "--n-starts",
    "--empty-cluster-policy",
    "--svd-components",
]

click.rich_click.OPTION_GROUPS = {
    "envmix": [{"name": "Global Flags", "options": ["--verbose", "--help", "--version"]}],
    **{
        f"envmix {command}": [
            {"name": "Fitting", "options": _ICC_OPTIONS},
        ]
        for command in ("fit", "select", "evaluate", "bench")
    },
}

click.rich_click.COMMAND_GROUPS = {
    "envmix": [
        {"name": "Data", "commands": ["simulate"]},
        {"name": "Estimation", "commands": ["fit", "select"]},
        {"name": "Evaluation", "commands": ["evaluate", "bench"]},
    ]
}

# rich-click wraps tables in Panels which default to expand=True
original_panel_init = rich.panel.Panel.__init__


def panel_init(self, *args, **kwargs):
    kwargs.setdefault("expand", False)
    original_panel_init(self, *args, **kwargs)


rich.panel.Panel.__init__ = panel_init  # type: ignore[method-assign]


class IntList(click.ParamType):
    """Comma-separated integers, e.g. ``1,2,3``."""

    name = "ints"

    def convert(self, value: Any, param: Optional[click.Parameter], ctx: Any) -> Tuple[int, ...]:
        if isinstance(value, tuple):
            return value
        text = str(value).strip()
        if not text:
            return ()
        try:
            return tuple(int(part) for part in text.split(","))
        except ValueError:
            self.fail(f"{value!r} is not a comma-separated list of integers", param, ctx)


class FloatList(click.ParamType):
    name = "floats"

    def convert(
        self, value: Any, param: Optional[click.Parameter], ctx: Any
    ) -> Optional[Tuple[float, ...]]:
        if value is None or isinstance(value, tuple):
            return value
        try:
            return tuple(float(part) for part in str(value).split(","))
        except ValueError:
            self.fail(f"{value!r} is not a comma-separated list of numbers", param, ctx)


class StrList(click.ParamType):
    name = "names"

    def convert(self, value: Any, param: Optional[click.Parameter], ctx: Any) -> Tuple[str, ...]:
        if isinstance(value, tuple):
            return value
        return tuple(part.strip() for part in str(value).split(",") if part.strip())


def exit_code_for(error: EnvMixError) -> int:
    if isinstance(error, ConfigError):
        return EXIT_USAGE
    if isinstance(error, DataFormatError):
        return EXIT_DATA
    if isinstance(error, (SingularMatrixError, EmptyGroupError, NotPositiveDefiniteError)):
        return EXIT_NUMERICAL
    if isinstance(error, ContractViolation):
        return EXIT_DATA
    return EXIT_NUMERICAL


F = TypeVar("F", bound=Callable[..., Any])


def handle_errors(func: F) -> F:
    """Report envmix errors on stderr and exit with the matching code."""

    @functools.wraps(func)
    def wrapper(*args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except EnvMixError as e:
            console.print(f"[bold red]error:[/] {escape(str(e))}")
            sys.exit(exit_code_for(e))

    return wrapper  # type: ignore[return-value]


def icc_options(func: F) -> F:
    """Options shared by every command that runs a fit."""
    options = [
        click.option("--seed", default=0, type=int, show_default=True, help="Master seed"),
        click.option("--max-iter", default=200, type=int, show_default=True),
        click.option("--burn-in", default=50, type=int, show_default=True),
        click.option("--window", default=10, type=int, show_default=True),
        click.option("--loglik-tol", default=1e-4, type=float, show_default=True),
        click.option(
            "--n-starts",
            default=5,
            type=int,
            show_default=True,
            help="Grassmann optimizer starts",
        ),
        click.option(
            "--empty-cluster-policy",
            type=click.Choice(["reassign", "restart"]),
            default="reassign",
            show_default=True,
        ),
        click.option(
            "--svd-components",
            default=3,
            type=int,
            show_default=True,
            help="SVD score columns of the two-stage method",
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _icc_config(options: Dict[str, Any]) -> IccConfig:
    return validate_config(
        {
            "seed": options["seed"],
            "max_iter": options["max_iter"],
            "burn_in": options["burn_in"],
            "window": options["window"],
            "loglik_tol": options["loglik_tol"],
            "n_starts": options["n_starts"],
            "empty_cluster_policy": options["empty_cluster_policy"],
        },
        IccConfig,
    )


def _two_stage_config(options: Dict[str, Any]) -> TwoStageConfig:
    return validate_config(
        {"svd_components": options["svd_components"], "seed": options["seed"]},
        TwoStageConfig,
    )


METHODS = click.Choice(["icc", "ols", "two-stage", "oracle"])


@click.group(
    help=f"""
[bold white on cyan] envmix [/] [bold cyan]v{__version__}[/] Mixtures of multivariate envelope regressions.

Run [bold cyan]envmix simulate --out data/[/] to draw a synthetic scenario.
Run [bold cyan]envmix fit --x X.csv --y Y.csv --M 2 --u 1[/] to fit a model.
"""
)
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True, help="-v for progress, -vv for debug output")
def cli(verbose: int) -> None:
    configure_logging(verbose, console)


@cli.command()
@click.option("--M", "M", default=2, type=int, show_default=True, help="Number of clusters")
@click.option("--n", default=300, type=int, show_default=True)
@click.option("--r", default=10, type=int, show_default=True, help="Response dimension")
@click.option("--p", default=20, type=int, show_default=True, help="Predictor dimension")
@click.option("--u", default=1, type=int, show_default=True, help="Envelope dimension")
@click.option("--proportions", type=FloatList(), default=None, help="e.g. 0.4,0.6")
@click.option("--seed", default=0, type=int, show_default=True)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@handle_errors
def simulate(**options: Any) -> None:
    """Generate X.csv, Y.csv, labels.csv and truth.json for a synthetic scenario."""
    from envmix.evaluation.simulate import generate_scenario
    from envmix.io import RunManifest, theta_to_dict, write_dataset, write_json

    out: Path = options.pop("out")
    cfg = validate_config(options, ScenarioConfig)
    sim = generate_scenario(cfg)
    write_dataset(out, sim.data)
    manifest = RunManifest.create("simulate", out, cfg.model_dump(mode="json"))
    write_json(
        out / "truth.json",
        {"theta": theta_to_dict(sim.truth, canonical=False), "metadata": sim.metadata},
        manifest,
    )
    sizes = ", ".join(str(s) for s in sim.metadata["group_sizes"])
    console.print(f"✅ Wrote n={cfg.n} observations (group sizes {sizes}) to [cyan]{out}[/]")


@cli.command()
@click.option("--x", "x_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--y", "y_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option(
    "--labels",
    "labels_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="True labels (needed by --method oracle)",
)
@click.option("--M", "M", default=2, type=int, show_default=True)
@click.option("--u", default=1, type=int, show_default=True)
@click.option("--method", type=METHODS, default="icc", show_default=True)
@click.option(
    "--out",
    type=click.Path(dir_okay=False, path_type=Path),
    default=Path("fit.json"),
    show_default=True,
)
@icc_options
@handle_errors
def fit(**options: Any) -> None:
    """Fit one model and write fit.json."""
    from envmix.fitting.baselines import fit_method
    from envmix.io import RunManifest, fit_to_dict, load_dataset, write_json

    icc = _icc_config(options)
    two_stage = _two_stage_config(options)
    M, u, method = options["M"], options["u"], options["method"]
    data = load_dataset(options["x_path"], options["y_path"], options["labels_path"], M)
    result = fit_method(method, data, M, u, icc, two_stage)

    manifest = RunManifest.create(
        "fit",
        options["out"],
        {
            "M": M,
            "u": u,
            "method": method,
            "icc": icc.model_dump(mode="json"),
            "two_stage": two_stage.model_dump(mode="json"),
        },
        {k: options[k] for k in ("x_path", "y_path", "labels_path") if options[k]},
    )
    write_json(options["out"], fit_to_dict(result), manifest)
    status = "converged" if result.converged else "[yellow]not converged[/]"
    console.print(
        f"✅ {method} fit (M={M}, u={u}) {status}, loglik={result.loglik:.4f} "
        f"→ [cyan]{options['out']}[/]"
    )


@cli.command()
@click.option("--x", "x_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--y", "y_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--M-grid", "M_grid", type=IntList(), default="1,2,3", show_default=True)
@click.option("--u-grid", "u_grid", type=IntList(), default="1,2,3", show_default=True)
@click.option("--count-pi", is_flag=True, help="Count the M - 1 free mixing proportions")
@click.option(
    "--out",
    type=click.Path(dir_okay=False, path_type=Path),
    default=Path("selection.json"),
    show_default=True,
)
@click.option(
    "--fits-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Also write one fit.json per grid cell here",
)
@icc_options
@handle_errors
def select(**options: Any) -> None:
    """BIC over an (M, u) grid; writes selection.json."""
    from envmix.fitting.selection import select_model
    from envmix.io import RunManifest, fit_to_dict, load_dataset, write_json

    icc = _icc_config(options)
    if not options["M_grid"] or not options["u_grid"]:
        raise ConfigError("grid", {"M_grid": "grids must not be empty"})
    data = load_dataset(options["x_path"], options["y_path"])
    report = select_model(
        data,
        options["M_grid"],
        options["u_grid"],
        icc,
        count_pi=options["count_pi"],
        keep_fits=options["fits_dir"] is not None,
    )
    manifest = RunManifest.create(
        "select",
        options["out"],
        {
            "M_grid": list(options["M_grid"]),
            "u_grid": list(options["u_grid"]),
            "count_pi": options["count_pi"],
            "icc": icc.model_dump(mode="json"),
        },
        {"x_path": options["x_path"], "y_path": options["y_path"]},
    )
    write_json(
        options["out"],
        {
            "n": report.n,
            "best": None if report.best is None else {"M": report.best[0], "u": report.best[1]},
            "grid": report.to_frame().to_dict("records"),
        },
        manifest,
    )
    fits_dir: Optional[Path] = options["fits_dir"]
    if fits_dir is not None:
        fits_dir.mkdir(parents=True, exist_ok=True)
        for cell in report.cells:
            if cell.fit is not None:
                path = fits_dir / f"fit_M{cell.M}_u{cell.u}.json"
                write_json(path, fit_to_dict(cell.fit), manifest)

    if report.best is None:
        console.print("[bold red]error:[/] every grid cell failed")
        sys.exit(EXIT_NUMERICAL)
    console.print(
        f"✅ BIC selects M={report.best[0]}, u={report.best[1]} → [cyan]{options['out']}[/]"
    )


@cli.command()
@click.option("--x", "x_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option("--y", "y_path", type=click.Path(dir_okay=False, path_type=Path), required=True)
@click.option(
    "--labels",
    "labels_path",
    type=click.Path(dir_okay=False, path_type=Path),
    default=None,
    help="True labels; enables fsr/nsr",
)
@click.option("--M", "M", default=2, type=int, show_default=True)
@click.option("--u", default=1, type=int, show_default=True)
@click.option("--method", type=METHODS, default="icc", show_default=True)
@click.option("--folds", default=5, type=int, show_default=True)
@click.option("--repeats", default=1, type=int, show_default=True)
@click.option("--B", "B", default=50, type=int, show_default=True, help="Bootstrap replicates")
@click.option("--no-bootstrap", is_flag=True)
@click.option(
    "--rule", type=click.Choice(["mixture", "max_pi"]), default="mixture", show_default=True
)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@icc_options
@handle_errors
def evaluate(**options: Any) -> None:
    """fsr/nsr, cross-validated prediction error and bootstrap SDs of one method."""
    from envmix.evaluation.bootstrap import bootstrap_se
    from envmix.evaluation.crossval import cv_prediction_error
    from envmix.evaluation.metrics import fsr_nsr
    from envmix.fitting.baselines import fit_method
    from envmix.io import RunManifest, fit_to_dict, load_dataset, write_json

    icc = _icc_config(options)
    two_stage = _two_stage_config(options)
    cv = validate_config(
        {
            "folds": options["folds"],
            "repeats": options["repeats"],
            "rule": options["rule"],
            "seed": options["seed"],
        },
        CvConfig,
    )
    boot = None
    if not options["no_bootstrap"]:
        boot = validate_config({"B": options["B"], "seed": options["seed"]}, BootstrapConfig)
    M, u, method = options["M"], options["u"], options["method"]
    data = load_dataset(options["x_path"], options["y_path"], options["labels_path"], M)

    result = fit_method(method, data, M, u, icc, two_stage)
    payload: Dict[str, Any] = {"fit": fit_to_dict(result)}
    if data.true_labels is not None:
        score = fsr_nsr(result.labels, data.true_labels, M)
        payload["classification"] = {
            "fsr": score.fsr,
            "nsr": score.nsr,
            "permutation": (score.permutation + 1).tolist(),
            "empty_clusters": [k + 1 for k in score.empty_clusters],
        }
    report = cv_prediction_error(
        data, M, u, cv.folds, cv.repeats, icc, cv.rule, method, two_stage, seed=cv.seed
    )
    payload["prediction"] = {
        "mean_error": report.mean_error,
        "sd_error": report.sd_error,
        "folds": report.folds,
        "repeats": report.repeats,
        "per_fold": report.per_fold,
        "failures": [f.__dict__ for f in report.failures],
    }
    if boot is not None:
        sds = bootstrap_se(
            data, M, u, boot.B, icc, method, two_stage, reference=result, seed=boot.seed
        )
        payload["bootstrap"] = {
            "B": sds.B,
            "n_success": sds.n_success,
            "failures": list(sds.failures),
            "group_mean_sd": sds.group_mean_sd,
            "per_element_sd": list(sds.per_element_sd),
        }

    out: Path = options["out"]
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.create(
        "evaluate",
        out,
        {
            "M": M,
            "u": u,
            "method": method,
            "icc": icc.model_dump(mode="json"),
            "cv": cv.model_dump(mode="json"),
            "bootstrap": None if boot is None else boot.model_dump(mode="json"),
        },
        {k: options[k] for k in ("x_path", "y_path", "labels_path") if options[k]},
    )
    write_json(out / "evaluation.json", payload, manifest)
    console.print(
        f"✅ {method}: CV error {report.mean_error:.4f} ({report.sd_error:.4f}) "
        f"→ [cyan]{out / 'evaluation.json'}[/]"
    )


@cli.command()
@click.option("--M", "Ms", type=IntList(), default="2,3", show_default=True)
@click.option("--n-grid", type=IntList(), default="300,600,900", show_default=True)
@click.option(
    "--curve-n",
    type=IntList(),
    default="",
    help="Sample sizes of the bootstrap SD curves (default: --n-grid), e.g. 300,600,900,1500,3000",
)
@click.option("--replicates", default=10, type=int, show_default=True)
@click.option(
    "--methods", type=StrList(), default="icc,ols,two-stage", show_default=True
)
@click.option("--u", default=1, type=int, show_default=True)
@click.option("--r", default=10, type=int, show_default=True)
@click.option("--p", default=20, type=int, show_default=True)
@click.option("--folds", default=5, type=int, show_default=True)
@click.option("--B", "B", default=50, type=int, show_default=True)
@click.option("--no-bootstrap", is_flag=True)
@click.option(
    "--rule", type=click.Choice(["mixture", "max_pi"]), default="mixture", show_default=True
)
@click.option("--out", type=click.Path(file_okay=False, path_type=Path), required=True)
@icc_options
@handle_errors
def bench(**options: Any) -> None:
    """Compare methods over replicate scenarios: table.csv, bootstrap_sd.csv, report.md."""
    from envmix.cli.report import render_bench_report
    from envmix.evaluation.bench import run_bench
    from envmix.io import RunManifest, write_frame, write_json

    icc = _icc_config(options)
    two_stage = _two_stage_config(options)
    cfg = validate_config(
        {
            "Ms": options["Ms"],
            "n_grid": options["n_grid"],
            "curve_n": options["curve_n"],
            "replicates": options["replicates"],
            "methods": options["methods"],
            "u": options["u"],
            "r": options["r"],
            "p": options["p"],
            "folds": options["folds"],
            "B": options["B"],
            "bootstrap": not options["no_bootstrap"],
            "rule": options["rule"],
            "seed": options["seed"],
            "icc": icc,
            "two_stage": two_stage,
        },
        BenchConfig,
    )
    result = run_bench(cfg)

    out: Path = options["out"]
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest.create("bench", out, cfg.model_dump(mode="json"))
    files: List[Tuple[str, Any]] = [
        ("table.csv", result.table),
        ("replicates.csv", result.replicates),
        ("bootstrap_sd.csv", result.bootstrap),
        ("sd_ratio.csv", result.sd_ratio),
    ]
    for name, frame in files:
        write_frame(out / name, frame)
    (out / "report.md").write_text(render_bench_report(result, manifest), encoding="utf-8")
    write_json(out / "bench.json", {"table": result.table.to_dict("records")}, manifest)
    console.print(
        f"✅ Bench finished: {len(result.replicates)} fits, "
        f"{int(np.sum(result.replicates['error'] != ''))} failures → [cyan]{out}[/]"
    )


if __name__ == "__main__":
    cli()
