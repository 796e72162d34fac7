"""
SVG figures from the files an experiment wrote.

Every figure is drawn from a plot-data CSV that is written next to it, so
what the figure shows can be checked against numbers on disk.
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from utilities import artifact_paths as paths  # noqa: E402
from utilities.enums import MetricEnum  # noqa: E402
from utilities.enums import PlotKindEnum  # noqa: E402
from utilities.enums import RunStatusEnum  # noqa: E402

logger = logging.getLogger("continual.plots")

plt.rcParams.update({"svg.fonttype": "none", "svg.hashsalt": "dualls"})

_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def _completed_runs(experiment: Path) -> list[Path]:
    runs = []
    for record in sorted(experiment.glob("*/record.json")):
        meta = json.loads(record.read_text(encoding="utf-8"))
        if meta.get("status") == RunStatusEnum.COMPLETED.value:
            runs.append(record.parent)
    return runs


# ── Figures ──────────────────────────────────────────────────────────────

def plot_task_curves(experiment: Path, runs: list[Path], out: Path) -> list[Path]:
    """Averaged error after each task, mean ± std across seeds, one line per (trainer, budget)."""
    frame = pd.concat([pd.read_csv(paths.metrics_csv(r)) for r in runs], ignore_index=True)
    joint_path = paths.joint_csv(experiment)
    joint = pd.read_csv(joint_path) if joint_path.exists() else None

    written = []
    for metric in MetricEnum:
        column = f"{metric.value}_ave"
        curves = (
            frame.groupby(["trainer", "buffer_budget", "task_index"])[column]
            .agg(mean="mean", std=lambda s: s.std(ddof=1) if len(s) > 1 else 0.0)
            .reset_index()
        )
        data_path = out / f"task_curves_{metric.value}.csv"
        curves.to_csv(data_path, index=False)

        fig, ax = plt.subplots(figsize=(7, 4.5))
        for (trainer, budget), group in curves.groupby(["trainer", "buffer_budget"], sort=False):
            x = group["task_index"].to_numpy()
            mean = group["mean"].to_numpy()
            std = group["std"].to_numpy()
            label = trainer if budget == 0 else f"{trainer} (M={budget})"
            ax.plot(x, mean, marker="o", label=label)
            ax.fill_between(x, mean - std, mean + std, alpha=0.2)
        if joint is not None and not joint.empty:
            level = joint.groupby("seed")[metric.value].mean().mean()
            ax.axhline(level, linestyle="--", color="black", linewidth=1, label="joint")
        ax.set_xlabel("tasks trained")
        ax.set_ylabel(f"{metric.value.upper()} (average over tasks)")
        ax.legend(fontsize=8)
        written.append(_save(fig, out / f"task_curves_{metric.value}.svg"))
    return written


def plot_error_matrices(runs: list[Path], out: Path) -> list[Path]:
    written = []
    for run in runs:
        for metric in MetricEnum:
            matrix = pd.read_csv(paths.error_matrix_csv(run, metric.value), index_col="after_task")
            values = matrix.to_numpy(dtype=np.float64)
            matrix.to_csv(out / f"error_matrix_{run.name}_{metric.value}.csv")

            fig, ax = plt.subplots(figsize=(1 + 0.7 * values.shape[1], 1 + 0.6 * values.shape[0]))
            im = ax.imshow(values, cmap="viridis")
            for i in range(values.shape[0]):
                for j in range(values.shape[1]):
                    if np.isfinite(values[i, j]):
                        ax.text(j, i, f"{values[i, j]:.2f}", ha="center", va="center", fontsize=7, color="white")
            ax.set_xticks(range(values.shape[1]), labels=[str(c) for c in matrix.columns])
            ax.set_yticks(range(values.shape[0]), labels=[str(i) for i in matrix.index])
            ax.set_xlabel("evaluated task")
            ax.set_ylabel("after training task")
            ax.set_title(f"{run.name} {metric.value.upper()}")
            fig.colorbar(im, ax=ax)
            written.append(_save(fig, out / f"error_matrix_{run.name}_{metric.value}.svg"))
    return written


def plot_buffer_composition(runs: list[Path], out: Path) -> list[Path]:
    written = []
    for run in runs:
        frame = pd.read_csv(paths.composition_csv(run))
        task_columns = [c for c in frame.columns if c.startswith("task_") and c != "task_index"]
        for buffer, group in frame.groupby("buffer", sort=True):
            group.to_csv(out / f"composition_{run.name}_{buffer}.csv", index=False)
            fig, ax = plt.subplots(figsize=(7, 4))
            ax.stackplot(
                group["step"].to_numpy(),
                *(group[c].to_numpy() for c in task_columns),
                labels=[c.removeprefix("task_") for c in task_columns],
            )
            ax.set_xlabel("step")
            ax.set_ylabel("entries")
            ax.set_title(f"{run.name} {buffer} buffer")
            ax.legend(title="task", fontsize=7, loc="upper left")
            written.append(_save(fig, out / f"composition_{run.name}_{buffer}.svg"))
    return written


def plot_loss_traces(runs: list[Path], out: Path) -> list[Path]:
    written = []
    for run in runs:
        trace = pd.read_csv(paths.trace_csv(run))
        data = trace[["step", "task_index", "stream_loss", "total_loss"]]
        data.to_csv(out / f"loss_trace_{run.name}.csv", index=False)

        fig, ax = plt.subplots(figsize=(8, 4))
        for task, group in data.groupby("task_index"):
            if task % 2 == 0:
                ax.axvspan(group["step"].min() - 0.5, group["step"].max() + 0.5, color="grey", alpha=0.12)
        ax.plot(data["step"], data["total_loss"], linewidth=0.8, label="total")
        ax.plot(data["step"], data["stream_loss"], linewidth=0.8, alpha=0.7, label="stream")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_title(run.name)
        ax.legend(fontsize=8)
        written.append(_save(fig, out / f"loss_trace_{run.name}.svg"))
    return written


_PLOTTERS = {
    PlotKindEnum.ERROR_MATRIX: plot_error_matrices,
    PlotKindEnum.BUFFER_COMPOSITION: plot_buffer_composition,
    PlotKindEnum.LOSS_TRACE: plot_loss_traces,
}


def emit_plots(experiment: str | Path, kinds: Iterable[str | PlotKindEnum] | None = None) -> list[Path]:
    """
    Draw the requested figures for the runs under ``experiment``.

    Unknown kinds are skipped with a warning; an experiment without completed
    runs writes nothing.
    """
    experiment = Path(experiment)
    requested: list[PlotKindEnum] = []
    for kind in kinds if kinds is not None else list(PlotKindEnum):
        try:
            requested.append(PlotKindEnum(kind))
        except ValueError:
            logger.warning(
                "continual.plots action=skip_kind kind=%s known=%s",
                kind,
                ",".join(k.value for k in PlotKindEnum),
            )

    runs = _completed_runs(experiment)
    if not runs:
        logger.warning("continual.plots action=no_records dir=%s", experiment)
        return []
    if not requested:
        return []

    out = paths.plots_dir(experiment)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for kind in requested:
        if kind is PlotKindEnum.TASK_CURVES:
            written += plot_task_curves(experiment, runs, out)
        else:
            written += _PLOTTERS[kind](runs, out)
    logger.info("continual.plots action=emit dir=%s files=%d", out, len(written))
    return written
