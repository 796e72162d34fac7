"""
With these settings, tests run faster.
"""

import tempfile

from .base import *  # noqa: F403
from .base import LOGGING
from .base import env

# GENERAL
# ------------------------------------------------------------------------------
# https://docs.djangoproject.com/en/dev/ref/settings/#secret-key
SECRET_KEY = env(
    "DJANGO_SECRET_KEY",
    default="D2v0psJkydiZA3JaxCsQK33H20LJ3PCCUhvgy6ITAIF8h0Gos5qkjt4EnSQpkNKm",
)
# https://docs.djangoproject.com/en/dev/ref/settings/#test-runner
TEST_RUNNER = "django.test.runner.DiscoverRunner"

# DATABASE
# ------------------------------------------------------------------------------
DATABASES = {"default": {"ENGINE": "django.db.backends.sqlite3", "NAME": ":memory:"}}

# LOGGING
# ------------------------------------------------------------------------------
# Keep test output readable; assertLogs still sees every record.
LOGGING["loggers"]["continual"]["level"] = "WARNING"  # type: ignore[index]
LOGGING["loggers"]["continual.trainer"]["level"] = "WARNING"  # type: ignore[index]

# Your stuff...
# ------------------------------------------------------------------------------
CONTINUAL_OUTPUT_ROOT = tempfile.gettempdir()
CONTINUAL_CONFIG = {"WORKERS": 1}
