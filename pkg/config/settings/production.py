from .base import *  # noqa: F403
from .base import env

# GENERAL
# ------------------------------------------------------------------------------
# https://docs.djangoproject.com/en/dev/ref/settings/#secret-key
SECRET_KEY = env("DJANGO_SECRET_KEY")

# DATABASE
# ------------------------------------------------------------------------------
# Shared run index for a cluster of experiment hosts, e.g. postgres://...
DATABASES = {"default": env.db("DATABASE_URL")}

# Sentry error tracking
# ------------------------------------------------------------------------------
# Enabled only when SENTRY_DSN is set.
_SENTRY_DSN = env("SENTRY_DSN", default="")
if _SENTRY_DSN:
    import logging

    import sentry_sdk
    from sentry_sdk.integrations.django import DjangoIntegration
    from sentry_sdk.integrations.logging import LoggingIntegration

    sentry_sdk.init(
        dsn=_SENTRY_DSN,
        integrations=[
            DjangoIntegration(),
            # Failed runs are logged with logger.exception and become events.
            LoggingIntegration(level=logging.INFO, event_level=logging.ERROR),
        ],
        traces_sample_rate=env.float("SENTRY_TRACES_SAMPLE_RATE", default=0.0),
        environment=env("DJANGO_ENV", default="production"),
        send_default_pii=False,
    )
