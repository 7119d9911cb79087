import io
import logging

import pytest
from rich.console import Console

from envmix.logging import RunTagFilter, configure_logging, run_context, run_tag_ctx
from envmix.settings import THREADS_ENV, default_n_jobs, run_timestamp


def _record(msg: str) -> logging.LogRecord:
    return logging.LogRecord("envmix.test", logging.INFO, __file__, 1, msg, None, None)


def test_no_context_leaves_message_alone() -> None:
    record = _record("hello")
    assert RunTagFilter().filter(record)
    assert record.msg == "hello"
    assert record.run_tag == "-"


def test_nested_contexts_join_tags() -> None:
    with run_context("icc:M=2"):
        with run_context("cv0.1"):
            assert run_tag_ctx.get() == "icc:M=2/cv0.1"
            record = _record("fold done")
            RunTagFilter().filter(record)
        assert run_tag_ctx.get() == "icc:M=2"
    assert run_tag_ctx.get() is None
    assert record.msg == "[icc:M=2/cv0.1] fold done"


def test_records_are_tagged_once() -> None:
    with run_context("boot3"):
        record = _record("x")
        RunTagFilter().filter(record)
        RunTagFilter().filter(record)
    assert record.msg == "[boot3] x"


def test_context_is_restored_after_errors() -> None:
    with pytest.raises(RuntimeError):
        with run_context("rep0"):
            raise RuntimeError("boom")
    assert run_tag_ctx.get() is None


def test_verbosity_levels() -> None:
    console = Console(file=io.StringIO())
    configure_logging(0, console)
    assert logging.getLogger("envmix").level == logging.WARNING
    configure_logging(1, console)
    assert logging.getLogger("envmix").level == logging.INFO
    configure_logging(2, console)
    assert logging.getLogger("envmix").level == logging.DEBUG
    configure_logging(0, console)


@pytest.mark.parametrize("raw, expected", [(None, -1), ("4", 4), ("0", 1), ("x", -1)])
def test_thread_setting(monkeypatch: pytest.MonkeyPatch, raw, expected) -> None:
    if raw is None:
        monkeypatch.delenv(THREADS_ENV, raising=False)
    else:
        monkeypatch.setenv(THREADS_ENV, raw)
    assert default_n_jobs() == expected


def test_pinned_timestamp(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "86400")
    assert run_timestamp() == "1970-01-02T00:00:00+00:00"
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "soon")
    assert run_timestamp().endswith("+00:00")
