"""Builders shared by the continual-learning tests."""

import factory
import numpy as np
from factory.django import DjangoModelFactory

from apps.continual.logic.buffers import BufferEntry
from apps.continual.logic.schemas import HyperParams
from apps.continual.logic.schemas import PredictorConfig
from apps.continual.logic.schemas import StreamConfig
from apps.continual.logic.schemas import TaskSpec
from apps.continual.logic.types import Heatmap
from apps.continual.logic.types import Sample
from apps.continual.models import ExperimentRun
from utilities.enums import RunStatusEnum
from utilities.enums import TrainerKindEnum

# 6×6 cells of 4 m: goals must stay within 12 m of the target.
SMALL_PREDICTOR = {
    "grid_l": 6,
    "grid_w": 6,
    "cell_size": 4.0,
    "hidden_widths": (8,),
    "n_agents": 2,
    "agent_features": 7,
    "map_features": 8,
}


def small_predictor(**overrides) -> PredictorConfig:
    return PredictorConfig(**{**SMALL_PREDICTOR, **overrides})


def small_hyper(**overrides) -> HyperParams:
    defaults = {"lr": 0.05, "stream_batch": 4, "replay_reservoir": 4, "replay_diversity": 4}
    return HyperParams(**{**defaults, **overrides})


def small_tasks(n_tasks: int = 3, n_train: int = 24, n_test: int = 8, noise: float = 0.3) -> list[TaskSpec]:
    turns = (0.0, 30.0, -30.0, 60.0)
    return [
        TaskSpec(
            task_id=t,
            n_train=n_train,
            n_test=n_test,
            rotation_deg=90.0 * t,
            turn_deg=turns[t % len(turns)],
            speed_range=(0.5 + 0.5 * t, 1.5 + 0.5 * t),
            agent_count_range=(1, 2),
            noise_scale=noise,
        )
        for t in range(n_tasks)
    ]


def small_stream_config(**kwargs) -> StreamConfig:
    return StreamConfig(tasks=small_tasks(**kwargs))


def small_experiment(**overrides) -> dict:
    """Plain mapping accepted by ``parse_experiment_config``; Σ n_train = 72."""
    data = {
        "name": "tiny",
        "trainers": ["dualls", "vanilla"],
        "predictor": dict(SMALL_PREDICTOR, hidden_widths=[8]),
        "hyper": {"lr": 0.05, "stream_batch": 4, "replay_reservoir": 4, "replay_diversity": 4},
        "stream": {"tasks": [t.model_dump(mode="json") for t in small_tasks()]},
        "buffer_budgets": [20],
        "allowed_budgets": [20],
        "score_batch": 4,
        "goals_k": 3,
        "seeds": [0],
        "plots": [],
    }
    data.update(overrides)
    return data


def make_sample(goal=(2.0, 0.0), velocity=(1.0, 0.0), task: int = 0, n_agents: int = 2) -> Sample:
    dynamic = np.zeros((n_agents, 7))
    dynamic[0] = [0.0, 0.0, velocity[0], velocity[1], velocity[0], velocity[1], 1.0]
    return Sample(dynamic, np.zeros(8), np.asarray(goal, dtype=float), float(np.hypot(*velocity)), _task_id=task)


def uniform_heatmap(shape=(2, 2)) -> Heatmap:
    return Heatmap(np.full(shape, 1.0 / (shape[0] * shape[1])), (-4.0, -4.0), 4.0)


def make_entry(index: int, task: int = 0, sample: Sample | None = None, score: float | None = None) -> BufferEntry:
    return BufferEntry(sample or make_sample(task=task), uniform_heatmap(), index, score)


class ExperimentRunFactory(DjangoModelFactory):
    class Meta:
        model = ExperimentRun

    run_id = factory.Sequence(lambda n: f"dualls-b1000-s{n}")
    config_hash = "0123456789abcdef"
    trainer = TrainerKindEnum.DUAL_LS.value
    seed = factory.Sequence(int)
    buffer_budget = 1000
    status = RunStatusEnum.COMPLETED.value
    metric_rows = factory.LazyFunction(
        lambda: [{"task_index": 1, "fde": 2.0, "mr": 0.5, "fde_bwt": None, "mr_bwt": None, "fde_ave": 2.0, "mr_ave": 0.5}],
    )
    final_fde_ave = 2.0
    final_mr_ave = 0.5
