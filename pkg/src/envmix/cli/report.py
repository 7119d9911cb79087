from typing import Any

import pandas as pd
from jinja2 import Environment, PackageLoader, StrictUndefined

from envmix.evaluation.bench import BenchResult
from envmix.io import RunManifest

# Markdown output, nothing to escape
_env = Environment(
    loader=PackageLoader("envmix", "templates"),
    autoescape=False,
    undefined=StrictUndefined,
    trim_blocks=True,
    lstrip_blocks=True,
)


def _fmt(value: Any, digits: int = 3) -> str:
    if value is None or (isinstance(value, float) and pd.isna(value)):
        return "NA"
    return f"{value:.{digits}f}"


_env.filters["fmt"] = _fmt


def render_bench_report(result: BenchResult, manifest: RunManifest) -> str:
    """Render src/envmix/templates/report.md.j2 for one bench run."""
    return _env.get_template("report.md.j2").render(
        manifest=manifest,
        table=result.table.to_dict("records"),
        bootstrap=result.bootstrap.to_dict("records"),
        sd_ratio=result.sd_ratio.to_dict("records"),
    )
