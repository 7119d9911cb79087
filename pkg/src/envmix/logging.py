import contextlib
import contextvars
import logging
from typing import Iterator, Optional

from rich.console import Console
from rich.logging import RichHandler

# Tag of the run currently executing in this context (method, grid cell, replicate)
run_tag_ctx: contextvars.ContextVar[Optional[str]] = contextvars.ContextVar(
    "run_tag_ctx", default=None
)


class RunTagFilter(logging.Filter):
    """
    Stamps every record with the run tag of the current context so that
    interleaved replicate and grid-cell logs stay attributable.
    """

    def filter(self, record: logging.LogRecord) -> bool:
        tag = run_tag_ctx.get()
        record.run_tag = tag or "-"
        if tag and not getattr(record, "_envmix_tagged", False):
            record.msg = f"[{tag}] {record.msg}"
            record._envmix_tagged = True
        return True


@contextlib.contextmanager
def run_context(tag: str) -> Iterator[None]:
    """Nest ``tag`` under the current run tag for the duration of the block."""
    parent = run_tag_ctx.get()
    token = run_tag_ctx.set(f"{parent}/{tag}" if parent else tag)
    try:
        yield
    finally:
        run_tag_ctx.reset(token)


_installed: Optional[logging.Handler] = None

_LEVELS = {0: logging.WARNING, 1: logging.INFO}


def configure_logging(verbosity: int = 0, console: Optional[Console] = None) -> None:
    """Install a rich stderr handler on the ``envmix`` logger (idempotent)."""
    global _installed
    root = logging.getLogger("envmix")
    level = _LEVELS.get(verbosity, logging.DEBUG)
    root.setLevel(level)
    if _installed is not None:
        _installed.setLevel(level)
        return
    handler = RichHandler(
        console=console or Console(stderr=True),
        show_path=False,
        rich_tracebacks=True,
    )
    handler.setLevel(level)
    handler.addFilter(RunTagFilter())
    root.addHandler(handler)
    _installed = handler
