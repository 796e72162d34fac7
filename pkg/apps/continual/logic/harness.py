"""
Stream harness: drives a learner through a ``TaskStream`` and fills the
error matrices.

The harness is the only place that knows where task boundaries are. After
each task it evaluates every test set with the learner's evaluation model
and snapshots buffer composition and gradient-direction statistics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from dataclasses import field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from apps.continual.exceptions import InputError
from utilities.enums import GoalExtractionEnum
from utilities.enums import LossKindEnum
from utilities.enums import MetricEnum
from utilities.enums import ModelRoleEnum
from utilities.enums import TrainerKindEnum

from .buffers import composition
from .buffers import direction_variance
from .buffers import mean_pairwise_cosine
from .config import cl_cfg
from .metrics import ErrorMatrix
from .metrics import averages
from .metrics import bwt
from .metrics import evaluate_samples
from .model import GoalPredictor
from .model import LossTerm
from .model import sgd_step
from .schemas import BufferBudget
from .schemas import HyperParams
from .schemas import PredictorConfig
from .stream import TaskStream
from .trainer import ContinualLearner
from .trainer import StepRecord
from .trainer import build_learner

logger = logging.getLogger("continual.trainer")

# Index of the evaluation generator in the per-run SeedSequence spawn; the
# learner uses the first four.
_EVAL_STREAM = 4


@dataclass
class StreamResult:
    kind: TrainerKindEnum
    seed: int
    params: dict[str, NDArray]
    fde: ErrorMatrix
    mr: ErrorMatrix
    trace: list[StepRecord]
    compositions: list[dict[str, Any]] = field(default_factory=list)
    introspection: list[dict[str, Any]] = field(default_factory=list)
    gradient_steps: int = 0
    processed_samples: int = 0

    def metric_rows(self) -> list[dict[str, Any]]:
        """One row per completed task c: current-task errors, BWT and averages."""
        rows = []
        for c in range(1, self.fde.n_tasks + 1):
            if not self.fde.filled[c - 1]:
                break
            rows.append(
                {
                    "task_index": c,
                    "fde": float(self.fde.values[c - 1, c - 1]),
                    "mr": float(self.mr.values[c - 1, c - 1]),
                    "fde_bwt": bwt(self.fde, c) if c >= 2 else None,
                    "mr_bwt": bwt(self.mr, c) if c >= 2 else None,
                    "fde_ave": averages(self.fde, c),
                    "mr_ave": averages(self.mr, c),
                },
            )
        return rows


def _sample_entries(entries: list, limit: int) -> list:
    if len(entries) <= limit:
        return list(entries)
    picks = np.linspace(0, len(entries) - 1, limit).round().astype(int)
    return [entries[i] for i in picks]


class StreamRunner:
    """Learner plus its position in the stream; resumable from a checkpoint."""

    def __init__(
        self,
        learner: ContinualLearner,
        stream: TaskStream,
        *,
        seed: int = 0,
        goals_k: int | None = None,
        extraction: GoalExtractionEnum = GoalExtractionEnum.TOP_K,
        evaluation_role: ModelRoleEnum = ModelRoleEnum.SLOW,
        checkpoint_dir: str | Path | None = None,
    ):
        if stream.n_tasks == 0:
            raise InputError("stream has no tasks")
        self.learner = learner
        self.stream = stream
        self.seed = seed
        self.goals_k = cl_cfg("GOALS_K") if goals_k is None else goals_k
        self.extraction = GoalExtractionEnum(extraction)
        self.evaluation_role = ModelRoleEnum(evaluation_role)
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.eval_rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(_EVAL_STREAM + 1)[_EVAL_STREAM])

        self.task_index = 0
        self.batch_offset = 0
        self.fde = ErrorMatrix(stream.n_tasks, MetricEnum.FDE)
        self.mr = ErrorMatrix(stream.n_tasks, MetricEnum.MR)
        self.trace: list[StepRecord] = []
        self.compositions: list[dict[str, Any]] = []
        self.introspection: list[dict[str, Any]] = []

    @property
    def finished(self) -> bool:
        return self.task_index >= self.stream.n_tasks

    # ------------------------------------------------------------------ run
    def run(self, max_steps: int | None = None) -> StreamResult | None:
        """
        Continue training; returns the result once the stream is exhausted,
        or ``None`` if ``max_steps`` stopped it first.
        """
        batch_size = self.learner.hyper.stream_batch
        taken = 0
        while not self.finished:
            for batch in self.stream.task_batches(self.task_index, batch_size, start=self.batch_offset):
                if max_steps is not None and taken >= max_steps:
                    return None
                record = self.learner.step(batch)
                record.task_index = self.task_index + 1
                self.trace.append(record)
                self._snapshot_composition(record.step)
                self.batch_offset += 1
                taken += 1
            self._finish_task()
        return self.result()

    def _snapshot_composition(self, step: int) -> None:
        for name, buf in self.learner.buffers().items():
            self.compositions.append(
                {"step": step, "task_index": self.task_index + 1, "buffer": name, "counts": composition(buf)},
            )

    def _finish_task(self) -> None:
        params = self.learner.evaluation_params(self.evaluation_role)
        fde_row, mr_row = [], []
        for j in range(self.stream.n_tasks):
            result = evaluate_samples(
                self.learner.model, params, self.stream.test(j), self.goals_k, self.extraction, self.eval_rng,
            )
            fde_row.append(result.fde)
            mr_row.append(result.mr)
        self.fde.record_row(self.task_index, fde_row)
        self.mr.record_row(self.task_index, mr_row)
        self._introspect_buffers()

        c = self.task_index + 1
        if cl_cfg("ENABLE_TRAINER_LOGGING"):
            logger.info(
                "continual.trainer kind=%s action=task_done task=%d/%d fde_ave=%.4f mr_ave=%.4f processed=%d",
                self.learner.kind.value,
                c,
                self.stream.n_tasks,
                averages(self.fde, c),
                averages(self.mr, c),
                self.learner.processed_samples,
            )

        self.task_index += 1
        self.batch_offset = 0
        if self.checkpoint_dir is not None:
            self.checkpoint(self.checkpoint_dir / f"task-{c:02d}.ckpt")

    def _introspect_buffers(self) -> None:
        limit = cl_cfg("INTROSPECTION_SAMPLE")
        for name, buf in self.learner.buffers().items():
            entries = _sample_entries(buf.entries, limit)
            grads = self.learner.model.per_sample_grads(self.learner.theta_w, [e.sample for e in entries])
            self.introspection.append(
                {
                    "task_index": self.task_index + 1,
                    "buffer": name,
                    "size": len(buf),
                    "capacity": buf.capacity,
                    "direction_variance": direction_variance(grads) if len(entries) else float("nan"),
                    "mean_pairwise_cosine": mean_pairwise_cosine(grads) if len(entries) else float("nan"),
                },
            )

    def result(self) -> StreamResult:
        return StreamResult(
            kind=self.learner.kind,
            seed=self.seed,
            params={role: theta.copy() for role, theta in self.learner.params().items()},
            fde=self.fde,
            mr=self.mr,
            trace=self.trace,
            compositions=self.compositions,
            introspection=self.introspection,
            gradient_steps=self.learner.step_count,
            processed_samples=self.learner.processed_samples,
        )

    # ------------------------------------------------------------ persistence
    def state_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "task_index": self.task_index,
            "batch_offset": self.batch_offset,
            "goals_k": self.goals_k,
            "extraction": self.extraction.value,
            "evaluation_role": self.evaluation_role.value,
            "eval_rng_state": self.eval_rng.bit_generator.state,
            "fde": self.fde.values.copy(),
            "mr": self.mr.values.copy(),
            "filled": self.fde.filled.copy(),
            "trace": [r.as_row() for r in self.trace],
            "compositions": self.compositions,
            "introspection": self.introspection,
            "learner": self.learner.state_dict(),
        }

    def load_state_dict(self, state: dict[str, Any]) -> None:
        self.task_index = int(state["task_index"])
        self.batch_offset = int(state["batch_offset"])
        self.eval_rng.bit_generator.state = state["eval_rng_state"]
        self.fde.values = np.array(state["fde"], dtype=np.float64)
        self.mr.values = np.array(state["mr"], dtype=np.float64)
        self.fde.filled = np.array(state["filled"], dtype=bool)
        self.mr.filled = self.fde.filled.copy()
        self.trace = [_record_from_row(row) for row in state["trace"]]
        self.compositions = list(state["compositions"])
        self.introspection = list(state["introspection"])
        self.learner.load_state_dict(state["learner"])

    def checkpoint(self, path: str | Path) -> Path:
        from .checkpoint import save_runner

        return save_runner(self, path)

    @classmethod
    def restore(
        cls,
        path: str | Path,
        stream: TaskStream | None = None,
        predictor: PredictorConfig | None = None,
        hyper: HyperParams | None = None,
        budget: BufferBudget | None = None,
    ) -> StreamRunner:
        from .checkpoint import load_runner

        return load_runner(path, stream, predictor, hyper, budget)


def _record_from_row(row: dict[str, Any]) -> StepRecord:
    row = dict(row)
    raw = row.pop("draw_composition", "") or ""
    counts = {int(k): int(v) for k, v in (pair.split(":") for pair in raw.split(";") if pair)}
    return StepRecord(**row, draw_composition=counts)


# ═════════════════════════════════════════════════════════════════════════
# Entry points
# ═════════════════════════════════════════════════════════════════════════

def run_stream(
    kind: TrainerKindEnum | str,
    stream: TaskStream,
    hyper: HyperParams,
    seed: int = 0,
    *,
    predictor: PredictorConfig | None = None,
    budget: BufferBudget | None = None,
    goals_k: int | None = None,
    extraction: GoalExtractionEnum = GoalExtractionEnum.TOP_K,
    evaluation_role: ModelRoleEnum = ModelRoleEnum.SLOW,
    checkpoint_dir: str | Path | None = None,
) -> StreamResult:
    """One single-pass run of a learner over the whole stream."""
    if stream.n_tasks == 0:
        raise InputError("stream has no tasks")
    model = GoalPredictor(predictor or stream.predictor)
    learner = build_learner(kind, model, hyper, budget, seed)
    runner = StreamRunner(
        learner,
        stream,
        seed=seed,
        goals_k=goals_k,
        extraction=extraction,
        evaluation_role=evaluation_role,
        checkpoint_dir=checkpoint_dir,
    )
    return runner.run()


@dataclass
class JointResult:
    fde: list[float]
    mr: list[float]
    gradient_steps: int

    @property
    def fde_ave(self) -> float:
        return float(np.mean(self.fde))

    @property
    def mr_ave(self) -> float:
        return float(np.mean(self.mr))


def run_joint_reference(
    stream: TaskStream,
    hyper: HyperParams,
    seed: int = 0,
    *,
    predictor: PredictorConfig | None = None,
    epochs: int | None = None,
    goals_k: int | None = None,
    extraction: GoalExtractionEnum = GoalExtractionEnum.TOP_K,
) -> JointResult:
    """
    i.i.d. reference: the same predictor trained on the shuffled union of all
    tasks, evaluated once on every test set.
    """
    if stream.n_tasks == 0:
        raise InputError("stream has no tasks")
    epochs = cl_cfg("JOINT_EPOCHS") if epochs is None else epochs
    goals_k = cl_cfg("GOALS_K") if goals_k is None else goals_k
    model = GoalPredictor(predictor or stream.predictor)
    streams = np.random.SeedSequence(seed).spawn(_EVAL_STREAM + 1)
    params = model.init_params(np.random.default_rng(streams[0]))
    rng = np.random.default_rng(streams[1])
    eval_rng = np.random.default_rng(streams[_EVAL_STREAM])

    pool = [s for t in range(stream.n_tasks) for s in stream.train(t)]
    steps = 0
    for _ in range(epochs):
        order = rng.permutation(len(pool))
        for start in range(0, len(pool), hyper.stream_batch):
            batch = [pool[i] for i in order[start: start + hyper.stream_batch]]
            grad = model.objective(params, [LossTerm(LossKindEnum.FOCAL, batch)]).grad
            params = sgd_step(params, grad, hyper.lr)
            steps += 1

    fde, mr = [], []
    for j in range(stream.n_tasks):
        result = evaluate_samples(model, params, stream.test(j), goals_k, extraction, eval_rng)
        fde.append(result.fde)
        mr.append(result.mr)
    logger.info(
        "continual.trainer kind=joint action=reference_done fde_ave=%.4f mr_ave=%.4f steps=%d",
        float(np.mean(fde)),
        float(np.mean(mr)),
        steps,
    )
    return JointResult(fde, mr, steps)
