"""
Centralised path factory for experiment artifacts.

Import and call these functions instead of joining paths inline, so the
runner, the plot command and the tests always agree on where files live:

    <root>/<config-hash>/summary.csv
    <root>/<config-hash>/<trainer>-b<budget>-s<seed>/metrics.csv
"""

from pathlib import Path


def output_root(override: str | Path | None = None) -> Path:
    """Explicit override, else ``settings.CONTINUAL_OUTPUT_ROOT``."""
    if override:
        return Path(override)
    from django.conf import settings
    return Path(getattr(settings, "CONTINUAL_OUTPUT_ROOT", "runs"))


def experiment_dir(root: str | Path, config_hash: str) -> Path:
    return Path(root) / config_hash


def run_id(trainer: str, budget: int, seed: int) -> str:
    return f"{trainer}-b{budget}-s{seed}"


def run_dir(experiment: str | Path, rid: str) -> Path:
    return Path(experiment) / rid


# ── Per-run files ──────────────────────────────────────────────────────

def metrics_csv(run: Path) -> Path:
    return run / "metrics.csv"


def trace_csv(run: Path) -> Path:
    return run / "trace.csv"


def composition_csv(run: Path) -> Path:
    return run / "composition.csv"


def introspection_csv(run: Path) -> Path:
    return run / "introspection.csv"


def error_matrix_csv(run: Path, metric: str) -> Path:
    return run / f"error_matrix_{metric}.csv"


def record_json(run: Path) -> Path:
    """Run metadata, including wall time (kept out of the CSVs so they stay byte-stable)."""
    return run / "record.json"


def checkpoint_dir(run: Path) -> Path:
    return run / "checkpoints"


# ── Experiment-level files ─────────────────────────────────────────────

def summary_csv(experiment: Path) -> Path:
    return experiment / "summary.csv"


def joint_csv(experiment: Path) -> Path:
    return experiment / "joint_reference.csv"


def plots_dir(experiment: Path) -> Path:
    return experiment / "plots"
