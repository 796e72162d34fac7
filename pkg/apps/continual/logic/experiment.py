"""
Experiment orchestration.

An experiment is the cross product trainers × buffer budgets × seeds.
Learners without a buffer (Vanilla) run once per seed at budget 0. Each run
writes its own directory; the summary and the database index are written
after every run has finished.

Runs share nothing mutable and derive all randomness from their seed, so a
worker pool never changes results.
"""

from __future__ import annotations

import json
import logging
import math
import time
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any

import pandas as pd
import yaml

from apps.continual.exceptions import ConfigurationError
from utilities import artifact_paths as paths
from utilities.enums import RunStatusEnum
from utilities.enums import TrainerKindEnum
from utilities.run_context import bind_run

from .harness import StreamResult
from .harness import run_joint_reference
from .harness import run_stream
from .schemas import ExperimentConfig
from .stream import TaskStream
from .stream import check_task_ranges

logger = logging.getLogger("continual.experiment")

_BUFFERLESS = {TrainerKindEnum.VANILLA}

METRIC_COLUMNS = [
    "run_id", "seed", "trainer", "buffer_budget", "task_index",
    "fde", "mr", "fde_bwt", "mr_bwt", "fde_ave", "mr_ave",
]


@dataclass(frozen=True)
class RunPlan:
    index: int
    trainer: TrainerKindEnum
    buffer_budget: int
    seed: int

    @property
    def run_id(self) -> str:
        return paths.run_id(self.trainer.value, self.buffer_budget, self.seed)


@dataclass
class RunRecord:
    run_id: str
    config_hash: str
    trainer: str
    seed: int
    buffer_budget: int
    status: str
    metric_rows: list[dict[str, Any]] = field(default_factory=list)
    wall_time_s: float = 0.0
    processed_samples: int = 0
    gradient_steps: int = 0
    output_dir: str = ""
    error_message: str = ""

    def final(self, key: str) -> float | None:
        if not self.metric_rows:
            return None
        value = self.metric_rows[-1].get(key)
        return None if value is None or (isinstance(value, float) and math.isnan(value)) else float(value)


def plan_runs(config: ExperimentConfig) -> list[RunPlan]:
    plans = []
    for trainer in config.trainers:
        budgets = [0] if trainer in _BUFFERLESS else config.buffer_budgets
        for budget in budgets:
            for seed in config.seeds:
                plans.append(RunPlan(len(plans), trainer, budget, seed))
    return plans


def validate_experiment(config: ExperimentConfig) -> list[RunPlan]:
    """Checks that need more than field validation; returns the run plan."""
    for spec in config.stream.tasks:
        if spec.kind == "synthetic":
            check_task_ranges(spec, config.predictor)
        elif not Path(spec.csv_path).is_file():
            raise ConfigurationError(f"task {spec.task_id}: csv file not found: {spec.csv_path}")
    return plan_runs(config)


# ── Per-run files ────────────────────────────────────────────────────────

def _write_run_files(run_dir: Path, plan: RunPlan, result: StreamResult, stream: TaskStream) -> list[dict]:
    run_dir.mkdir(parents=True, exist_ok=True)
    base = {"run_id": plan.run_id, "seed": plan.seed, "trainer": plan.trainer.value, "buffer_budget": plan.buffer_budget}

    metric_rows = result.metric_rows()
    pd.DataFrame([{**base, **row} for row in metric_rows], columns=METRIC_COLUMNS).to_csv(
        paths.metrics_csv(run_dir), index=False,
    )
    pd.DataFrame([r.as_row() for r in result.trace]).to_csv(paths.trace_csv(run_dir), index=False)

    task_ids = [spec.task_id for spec in stream.tasks]
    comp_rows = [
        {
            "step": snap["step"],
            "task_index": snap["task_index"],
            "buffer": snap["buffer"],
            **{f"task_{t}": snap["counts"].get(t, 0) for t in task_ids},
        }
        for snap in result.compositions
    ]
    pd.DataFrame(comp_rows, columns=["step", "task_index", "buffer", *(f"task_{t}" for t in task_ids)]).to_csv(
        paths.composition_csv(run_dir), index=False,
    )
    pd.DataFrame(result.introspection).to_csv(paths.introspection_csv(run_dir), index=False)

    labels = list(range(1, stream.n_tasks + 1))
    for matrix in (result.fde, result.mr):
        frame = pd.DataFrame(matrix.values, index=labels, columns=labels)
        frame.to_csv(paths.error_matrix_csv(run_dir, matrix.metric.value), index_label="after_task")
    return metric_rows


def execute_run(config_data: dict[str, Any], plan: RunPlan, experiment_dir: str) -> RunRecord:
    """Run one plan and write its files; failures are captured in the record."""
    config = ExperimentConfig.model_validate(config_data)
    run_dir = paths.run_dir(experiment_dir, plan.run_id)
    record = RunRecord(
        run_id=plan.run_id,
        config_hash=config.config_hash(),
        trainer=plan.trainer.value,
        seed=plan.seed,
        buffer_budget=plan.buffer_budget,
        status=RunStatusEnum.COMPLETED.value,
        output_dir=str(run_dir),
    )

    with bind_run(plan.run_id):
        started = time.perf_counter()
        try:
            stream = TaskStream(config.stream, seed=plan.seed, predictor=config.predictor)
            result = run_stream(
                plan.trainer,
                stream,
                config.hyper,
                plan.seed,
                predictor=config.predictor,
                budget=config.budget(plan.buffer_budget),
                goals_k=config.goals_k,
                extraction=config.goal_extraction,
                evaluation_role=config.evaluation_role,
                checkpoint_dir=paths.checkpoint_dir(run_dir) if config.checkpoint_every_task else None,
            )
            record.metric_rows = _write_run_files(run_dir, plan, result, stream)
            record.processed_samples = result.processed_samples
            record.gradient_steps = result.gradient_steps
        except Exception as exc:
            logger.exception("continual.experiment action=run_failed trainer=%s seed=%d", plan.trainer.value, plan.seed)
            record.status = RunStatusEnum.FAILED.value
            record.error_message = f"{type(exc).__name__}: {exc}"
        record.wall_time_s = time.perf_counter() - started

    run_dir.mkdir(parents=True, exist_ok=True)
    paths.record_json(run_dir).write_text(json.dumps(asdict(record), indent=2, sort_keys=True), encoding="utf-8")
    logger.info(
        "continual.experiment action=run_done run=%s status=%s fde_ave=%s wall_s=%.1f",
        plan.run_id,
        record.status,
        record.final("fde_ave"),
        record.wall_time_s,
    )
    return record


def _init_worker() -> None:
    import django

    django.setup()


# ── Summary ──────────────────────────────────────────────────────────────

def summarize(records: list[RunRecord], joint: pd.DataFrame | None = None) -> pd.DataFrame:
    """Mean ± std across seeds of the final-task aggregates, per (trainer, budget)."""
    rows = [
        {
            "trainer": r.trainer,
            "buffer_budget": r.buffer_budget,
            "ok": r.status == RunStatusEnum.COMPLETED.value,
            "fde_ave": r.final("fde_ave"),
            "mr_ave": r.final("mr_ave"),
            "fde_bwt": r.final("fde_bwt"),
            "mr_bwt": r.final("mr_bwt"),
            "processed_samples": r.processed_samples,
        }
        for r in records
    ]
    frame = pd.DataFrame(rows)
    columns = [
        "trainer", "buffer_budget", "n_runs", "n_failed",
        "fde_ave_mean", "fde_ave_std", "mr_ave_mean", "mr_ave_std",
        "fde_bwt_mean", "fde_bwt_std", "mr_bwt_mean", "mr_bwt_std",
        "processed_samples_mean", "processed_ratio_vs_vanilla",
    ]
    if frame.empty:
        return pd.DataFrame(columns=columns)

    out = []
    for (trainer, budget), group in frame.groupby(["trainer", "buffer_budget"], sort=False):
        ok = group[group["ok"]]
        entry = {"trainer": trainer, "buffer_budget": budget, "n_runs": len(group), "n_failed": int((~group["ok"]).sum())}
        for metric in ("fde_ave", "mr_ave", "fde_bwt", "mr_bwt"):
            values = ok[metric].astype(float)
            entry[f"{metric}_mean"] = values.mean() if len(values) else float("nan")
            entry[f"{metric}_std"] = values.std(ddof=1) if len(values) > 1 else 0.0
        entry["processed_samples_mean"] = float(ok["processed_samples"].mean()) if len(ok) else float("nan")
        out.append(entry)
    summary = pd.DataFrame(out)

    vanilla = summary[summary["trainer"] == TrainerKindEnum.VANILLA.value]["processed_samples_mean"]
    baseline = float(vanilla.iloc[0]) if len(vanilla) else float("nan")
    summary["processed_ratio_vs_vanilla"] = summary["processed_samples_mean"] / baseline

    if joint is not None and not joint.empty:
        per_seed = joint.groupby("seed")[["fde", "mr"]].mean()
        summary = pd.concat(
            [
                summary,
                pd.DataFrame(
                    [
                        {
                            "trainer": "joint",
                            "buffer_budget": 0,
                            "n_runs": len(per_seed),
                            "n_failed": 0,
                            "fde_ave_mean": per_seed["fde"].mean(),
                            "fde_ave_std": per_seed["fde"].std(ddof=1) if len(per_seed) > 1 else 0.0,
                            "mr_ave_mean": per_seed["mr"].mean(),
                            "mr_ave_std": per_seed["mr"].std(ddof=1) if len(per_seed) > 1 else 0.0,
                        },
                    ],
                ),
            ],
            ignore_index=True,
        )
    return summary[columns]


# ── Orchestrator ─────────────────────────────────────────────────────────

class ExperimentRunner:
    """Executes every planned run, then writes the summary and the run index."""

    def __init__(
        self,
        config: ExperimentConfig,
        output_root: str | Path | None = None,
        workers: int | None = None,
        persist: bool = True,
        on_run_complete: Callable[[RunRecord], None] | None = None,
    ):
        self.config = config
        self.config_hash = config.config_hash()
        self.output_root = paths.output_root(output_root or config.output_dir)
        self.workers = workers or config.workers
        self.persist = persist
        self.on_run_complete = on_run_complete

    @property
    def experiment_dir(self) -> Path:
        return paths.experiment_dir(self.output_root, self.config_hash)

    def run(self) -> list[RunRecord]:
        plans = validate_experiment(self.config)
        exp_dir = self.experiment_dir
        exp_dir.mkdir(parents=True, exist_ok=True)
        (exp_dir / "config.yaml").write_text(
            yaml.safe_dump(self.config.model_dump(mode="json", exclude={"output_dir", "workers"}), sort_keys=True),
            encoding="utf-8",
        )
        logger.info(
            "continual.experiment action=start config=%s runs=%d workers=%d dir=%s",
            self.config_hash,
            len(plans),
            self.workers,
            exp_dir,
        )

        data = self.config.model_dump(mode="json")
        records: list[RunRecord | None] = [None] * len(plans)
        if self.workers > 1 and len(plans) > 1:
            with ProcessPoolExecutor(max_workers=self.workers, initializer=_init_worker) as pool:
                futures = {pool.submit(execute_run, data, plan, str(exp_dir)): plan for plan in plans}
                for future, plan in futures.items():
                    records[plan.index] = self._collect(future.result())
        else:
            for plan in plans:
                records[plan.index] = self._collect(execute_run(data, plan, str(exp_dir)))

        done = [r for r in records if r is not None]
        joint = self._joint_reference() if self.config.joint_reference else None
        summarize(done, joint).to_csv(paths.summary_csv(exp_dir), index=False)
        if self.persist:
            persist_records(done)

        failed = sum(r.status == RunStatusEnum.FAILED.value for r in done)
        logger.info("continual.experiment action=finish config=%s runs=%d failed=%d", self.config_hash, len(done), failed)
        return done

    def _collect(self, record: RunRecord) -> RunRecord:
        if self.on_run_complete is not None:
            self.on_run_complete(record)
        return record

    def _joint_reference(self) -> pd.DataFrame:
        rows = []
        for seed in self.config.seeds:
            with bind_run(f"joint-s{seed}"):
                stream = TaskStream(self.config.stream, seed=seed, predictor=self.config.predictor)
                result = run_joint_reference(
                    stream,
                    self.config.hyper,
                    seed,
                    predictor=self.config.predictor,
                    epochs=self.config.joint_epochs,
                    goals_k=self.config.goals_k,
                    extraction=self.config.goal_extraction,
                )
            for j, (fde, mr) in enumerate(zip(result.fde, result.mr), start=1):
                rows.append({"seed": seed, "task_index": j, "fde": fde, "mr": mr})
        frame = pd.DataFrame(rows, columns=["seed", "task_index", "fde", "mr"])
        frame.to_csv(paths.joint_csv(self.experiment_dir), index=False)
        return frame


def persist_records(records: list[RunRecord]) -> None:
    """Upsert one ``ExperimentRun`` row per record."""
    from apps.continual.models import ExperimentRun

    for r in records:
        ExperimentRun.objects.update_or_create(
            config_hash=r.config_hash,
            run_id=r.run_id,
            defaults={
                "trainer": r.trainer,
                "seed": r.seed,
                "buffer_budget": r.buffer_budget,
                "status": r.status,
                "metric_rows": r.metric_rows,
                "final_fde_ave": r.final("fde_ave"),
                "final_mr_ave": r.final("mr_ave"),
                "final_fde_bwt": r.final("fde_bwt"),
                "final_mr_bwt": r.final("mr_bwt"),
                "wall_time_s": r.wall_time_s,
                "processed_samples": r.processed_samples,
                "gradient_steps": r.gradient_steps,
                "output_dir": r.output_dir,
                "error_message": r.error_message,
            },
        )


def run_experiment(config: ExperimentConfig, **kwargs) -> list[RunRecord]:
    return ExperimentRunner(config, **kwargs).run()
