"""Shared plumbing for the ``continual_*`` management commands."""

import logging
from contextlib import contextmanager

from django.core.management.base import CommandError

from apps.continual.exceptions import ConfigurationError

logger = logging.getLogger("continual.commands")

EXIT_CONFIG = 1
EXIT_RUNTIME = 2


@contextmanager
def exit_codes(verb: str):
    """Map configuration problems to exit 1 and anything else to exit 2."""
    try:
        yield
    except CommandError:
        raise
    except ConfigurationError as exc:
        logger.error("continual.commands action=%s outcome=config_error error=%s", verb, exc)
        raise CommandError(f"invalid configuration: {exc}", returncode=EXIT_CONFIG) from exc
    except Exception as exc:
        logger.exception("continual.commands action=%s outcome=failed", verb)
        raise CommandError(f"{verb} failed: {type(exc).__name__}: {exc}", returncode=EXIT_RUNTIME) from exc
