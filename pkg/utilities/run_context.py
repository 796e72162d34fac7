"""
Run-id propagation for log records.

The experiment orchestrator binds the id of the run being executed; every
log line emitted while it is bound carries that id in ``%(run_id)s``.

Usage in LOGGING:
    "filters": {"run_id": {"()": "utilities.run_context.RunIdFilter"}}

Usage in code:
    with bind_run("dualls-b1000-s0"):
        run_stream(...)
"""

import logging
from contextlib import contextmanager


class RunIdFilter(logging.Filter):
    """Logging filter that injects the current run ID into log records."""

    def filter(self, record):
        record.run_id = current_run()
        return True


class _Local:
    """Process-local storage for the run ID; each worker process has its own."""
    __slots__ = ("run_id",)


_local = _Local()


def current_run() -> str:
    return getattr(_local, "run_id", "-")


@contextmanager
def bind_run(run_id: str):
    previous = current_run()
    _local.run_id = run_id
    try:
        yield run_id
    finally:
        _local.run_id = previous
