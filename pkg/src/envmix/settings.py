"""Process-level settings read from the environment."""

import logging
import os
from datetime import datetime, timezone

logger = logging.getLogger(__name__)

THREADS_ENV = "ENVMIX_THREADS"


def default_n_jobs() -> int:
    """joblib ``n_jobs`` honouring ENVMIX_THREADS (-1 means all cores)."""
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return -1
    try:
        value = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {THREADS_ENV}={raw!r}")
        return -1
    if value == 0:
        logger.warning(f"{THREADS_ENV}=0 is not a valid thread count, using 1")
        return 1
    return value


def run_timestamp() -> str:
    """UTC ISO timestamp; SOURCE_DATE_EPOCH pins it for reproducible artifacts."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        try:
            return datetime.fromtimestamp(int(epoch), tz=timezone.utc).isoformat()
        except ValueError:
            logger.warning(f"Ignoring invalid SOURCE_DATE_EPOCH={epoch!r}")
    return datetime.now(tz=timezone.utc).isoformat(timespec="seconds")
