# ruff: noqa: ERA001, E501
"""Base settings to build other settings files upon."""

from pathlib import Path

import environ

BASE_DIR = Path(__file__).resolve(strict=True).parent.parent.parent
env = environ.Env()

# -------------------- .env loading --------------------
READ_DOT_ENV_FILE = env.bool("DJANGO_READ_DOT_ENV_FILE", default=False)
if READ_DOT_ENV_FILE:
    if env("DJANGO_ENV", default="local") == "production":
        env.read_env(str(BASE_DIR / ".env.production"))
    else:
        env.read_env(str(BASE_DIR / ".env"))

# -------------------- General --------------------
SECRET_KEY = env("SECRET_KEY", default="dev-insecure-key")  # dev only
DEBUG = env.bool("DJANGO_DEBUG", False)

DJANGO_ENV = env("DJANGO_ENV", default=("production" if not DEBUG else "local"))
IS_PROD = DJANGO_ENV == "production"

TIME_ZONE = "UTC"
LANGUAGE_CODE = "en-us"
USE_I18N = False
USE_TZ = True

# -------------------- DB --------------------
# Run records only; the CSV files under CONTINUAL_OUTPUT_ROOT are the source of truth.
DATABASES = {
    "default": env.db("DATABASE_URL", default=f"sqlite:///{BASE_DIR / 'dualls.sqlite3'}"),
}
DATABASES["default"]["ATOMIC_REQUESTS"] = False
DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# -------------------- Apps --------------------
DJANGO_APPS = [
    "django.contrib.contenttypes",
]
LOCAL_APPS = [
    "apps.continual",
]
INSTALLED_APPS = DJANGO_APPS + LOCAL_APPS

# -------------------- Logging --------------------
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {"format": "%(levelname)s %(asctime)s %(name)s %(process)d run=%(run_id)s %(message)s"},
    },
    "filters": {
        "run_id": {"()": "utilities.run_context.RunIdFilter"},
        "step_sample": {
            "()": "utilities.logging_filters.StepSampleFilter",
            "every": env.int("CONTINUAL_TRACE_LOG_EVERY", default=100),
        },
    },
    "handlers": {
        "console": {
            "level": "DEBUG",
            "class": "logging.StreamHandler",
            "formatter": "verbose",
            "filters": ["run_id"],
        },
        "trace_console": {
            "level": "DEBUG",
            "class": "logging.StreamHandler",
            "formatter": "verbose",
            "filters": ["run_id", "step_sample"],
        },
    },
    "root": {"level": "WARNING", "handlers": ["console"]},
    "loggers": {
        "continual": {
            "handlers": ["console"],
            "level": env("CONTINUAL_LOG_LEVEL", default="INFO"),
            "propagate": False,
        },
        # Per-step records carry extra={"step": n}; only every Nth reaches the console.
        "continual.trainer": {
            "handlers": ["trace_console"],
            "level": env("CONTINUAL_LOG_LEVEL", default="INFO"),
            "propagate": False,
        },
    },
}

# -------------------- Continual learning engine --------------------
CONTINUAL_OUTPUT_ROOT = env("CONTINUAL_OUTPUT_ROOT", default=str(BASE_DIR / "runs"))
CONTINUAL_WORKERS = env.int("CONTINUAL_WORKERS", default=1)

# Override any key to tune the engine.
# See apps/continual/logic/config.py for defaults.
CONTINUAL_CONFIG = {
    "WORKERS": CONTINUAL_WORKERS,
    "TRACE_LOG_EVERY": env.int("CONTINUAL_TRACE_LOG_EVERY", default=100),
    # Uncomment to override defaults:
    # "BUFFER_BUDGET": 2000,
    # "SLOW_DECAY": 0.99,
    # "GOALS_K": 6,
}
