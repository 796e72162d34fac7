"""
Validated configuration objects for experiments.

Experiment files are YAML documents parsed into ``ExperimentConfig``.
Unset fields fall back to ``cl_cfg`` defaults, so a file may be as small as::

    trainers: [dualls, vanilla]
    seeds: [0, 1, 2]

Validation problems surface as ``ConfigurationError`` listing every
offending field path.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel
from pydantic import ConfigDict
from pydantic import Field
from pydantic import ValidationError
from pydantic import field_validator
from pydantic import model_validator

from apps.continual.exceptions import ConfigurationError
from utilities.enums import GoalExtractionEnum
from utilities.enums import ModelRoleEnum
from utilities.enums import TrainerKindEnum

from .config import cl_cfg

_FROZEN = ConfigDict(frozen=True, extra="forbid")

# Per-task turn applied by the synthetic scenario family (degrees).
_SYNTHETIC_TURNS = (0.0, 30.0, -30.0, 60.0, -60.0, 90.0, -90.0, 45.0)


# ═════════════════════════════════════════════════════════════════════════
# Predictor
# ═════════════════════════════════════════════════════════════════════════

class PredictorConfig(BaseModel):
    """Shape and loss settings of the heatmap goal predictor."""

    model_config = _FROZEN

    grid_l: int = Field(default_factory=lambda: cl_cfg("GRID_L"), ge=2)
    grid_w: int = Field(default_factory=lambda: cl_cfg("GRID_W"), ge=2)
    cell_size: float = Field(default_factory=lambda: cl_cfg("CELL_SIZE"), gt=0)
    hidden_widths: tuple[int, ...] = Field(default_factory=lambda: tuple(cl_cfg("HIDDEN_WIDTHS")))
    focal_gamma: float = Field(default_factory=lambda: cl_cfg("FOCAL_GAMMA"), ge=0)
    target_sigma: float = Field(default_factory=lambda: cl_cfg("TARGET_SIGMA"), gt=0)
    kl_floor: float = Field(default_factory=lambda: cl_cfg("KL_FLOOR"), gt=0, le=1e-3)
    init_scale: float = Field(default_factory=lambda: cl_cfg("INIT_SCALE"), ge=0)
    n_agents: int = Field(default_factory=lambda: cl_cfg("N_AGENTS"), ge=1)
    agent_features: int = Field(default_factory=lambda: cl_cfg("AGENT_FEATURES"), ge=1)
    map_features: int = Field(default_factory=lambda: cl_cfg("MAP_FEATURES"), ge=1)

    @field_validator("hidden_widths")
    @classmethod
    def _positive_widths(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value or any(w < 1 for w in value):
            raise ValueError("hidden_widths must list at least one positive width")
        return value

    @property
    def input_dim(self) -> int:
        return self.n_agents * self.agent_features + self.map_features

    @property
    def n_cells(self) -> int:
        return self.grid_l * self.grid_w

    @property
    def grid_origin(self) -> tuple[float, float]:
        """Lower-left corner of the window, centred on the target agent."""
        return (-self.grid_l * self.cell_size / 2.0, -self.grid_w * self.cell_size / 2.0)


# ═════════════════════════════════════════════════════════════════════════
# Learner hyper-parameters
# ═════════════════════════════════════════════════════════════════════════

class HyperParams(BaseModel):
    """Optimisation, EMA and replay settings shared by every learner."""

    model_config = _FROZEN

    lr: float = Field(default_factory=lambda: cl_cfg("LEARNING_RATE"), gt=0)
    fast_decay: float = Field(default_factory=lambda: cl_cfg("FAST_DECAY"), ge=0, lt=1)
    slow_decay: float = Field(default_factory=lambda: cl_cfg("SLOW_DECAY"), ge=0, lt=1)
    fast_update_prob: float = Field(default_factory=lambda: cl_cfg("FAST_UPDATE_PROB"), ge=0, le=1)
    slow_update_prob: float = Field(default_factory=lambda: cl_cfg("SLOW_UPDATE_PROB"), ge=0, le=1)
    alpha_reservoir: float = Field(default_factory=lambda: cl_cfg("ALPHA_RESERVOIR"), ge=0)
    beta_reservoir: float = Field(default_factory=lambda: cl_cfg("BETA_RESERVOIR"), ge=0)
    alpha_diversity: float = Field(default_factory=lambda: cl_cfg("ALPHA_DIVERSITY"), ge=0)
    beta_diversity: float = Field(default_factory=lambda: cl_cfg("BETA_DIVERSITY"), ge=0)
    stream_batch: int = Field(default_factory=lambda: cl_cfg("STREAM_BATCH"), ge=1)
    replay_reservoir: int = Field(default_factory=lambda: cl_cfg("REPLAY_RESERVOIR"), ge=0)
    replay_diversity: int = Field(default_factory=lambda: cl_cfg("REPLAY_DIVERSITY"), ge=0)

    @model_validator(mode="after")
    def _finite(self) -> HyperParams:
        for name, value in self.model_dump().items():
            if isinstance(value, float) and not math.isfinite(value):
                raise ValueError(f"{name} must be finite")
        return self


class BufferBudget(BaseModel):
    """Total replay memory and how a dual-buffer learner splits it."""

    model_config = _FROZEN

    total: int = Field(default_factory=lambda: cl_cfg("BUFFER_BUDGET"), ge=0)
    reservoir_share: float = Field(default_factory=lambda: cl_cfg("RESERVOIR_SHARE"), ge=0, le=1)
    score_batch: int = Field(default_factory=lambda: cl_cfg("SCORE_BATCH"), ge=1)

    def split(self, kind: TrainerKindEnum) -> tuple[int, int]:
        """Return ``(reservoir_capacity, diversity_capacity)`` for a learner kind."""
        if kind is TrainerKindEnum.DUAL_LS:
            reservoir = int(round(self.total * self.reservoir_share))
            return reservoir, self.total - reservoir
        if kind in (TrainerKindEnum.DER, TrainerKindEnum.AGEM):
            return self.total, 0
        if kind is TrainerKindEnum.GSS:
            return 0, self.total
        return 0, 0


# ═════════════════════════════════════════════════════════════════════════
# Stream
# ═════════════════════════════════════════════════════════════════════════

class TaskSpec(BaseModel):
    """One scenario of the domain-incremental stream."""

    model_config = _FROZEN

    task_id: int = Field(ge=0)
    kind: Literal["synthetic", "csv"] = "synthetic"
    csv_path: str | None = None
    n_train: int = Field(default_factory=lambda: cl_cfg("SYNTHETIC_TRAIN"), ge=1)
    n_test: int = Field(default_factory=lambda: cl_cfg("SYNTHETIC_TEST"), ge=1)
    rotation_deg: float = 0.0
    turn_deg: float = 0.0
    speed_range: tuple[float, float] = (1.0, 4.0)
    agent_count_range: tuple[int, int] = (1, 4)
    noise_scale: float = 0.5
    heading_jitter_deg: float = 15.0

    @model_validator(mode="after")
    def _csv_needs_path(self) -> TaskSpec:
        if self.kind == "csv" and not self.csv_path:
            raise ValueError("csv tasks need csv_path")
        return self

    def distribution_key(self) -> tuple:
        """Parameters that define the task's sample distribution."""
        return (
            self.kind,
            self.csv_path,
            self.rotation_deg,
            self.turn_deg,
            self.speed_range,
            self.agent_count_range,
            self.noise_scale,
            self.heading_jitter_deg,
        )


def default_synthetic_tasks(
    n_tasks: int | None = None,
    n_train: int | None = None,
    n_test: int | None = None,
) -> list[TaskSpec]:
    """
    The default benchmark: rotations 0°, 45°, … with shifted speed ranges so
    consecutive scenarios have distinguishable speed distributions.
    """
    n_tasks = n_tasks if n_tasks is not None else cl_cfg("SYNTHETIC_TASKS")
    n_train = n_train if n_train is not None else cl_cfg("SYNTHETIC_TRAIN")
    n_test = n_test if n_test is not None else cl_cfg("SYNTHETIC_TEST")
    n_agents = cl_cfg("N_AGENTS")

    tasks = []
    for t in range(n_tasks):
        low = 1.0 + 0.8 * (t % 8)
        tasks.append(
            TaskSpec(
                task_id=t,
                n_train=n_train,
                n_test=n_test,
                rotation_deg=(45.0 * t) % 360.0,
                turn_deg=_SYNTHETIC_TURNS[t % len(_SYNTHETIC_TURNS)],
                speed_range=(low, low + 3.0),
                agent_count_range=(1, n_agents),
            ),
        )
    return tasks


class CsvSchema(BaseModel):
    """Column names and timing of an external trajectory table."""

    model_config = _FROZEN

    case_id: str = "case_id"
    agent_id: str = "track_id"
    timestamp: str = "timestamp_ms"
    x: str = "x"
    y: str = "y"
    vx: str = "vx"
    vy: str = "vy"
    target_flag: str = "is_target"
    frame_rate_hz: int = Field(default_factory=lambda: cl_cfg("CSV_FRAME_RATE_HZ"), ge=1)
    history_seconds: float = Field(default_factory=lambda: cl_cfg("HISTORY_SECONDS"), gt=0)
    horizon_seconds: float = Field(default_factory=lambda: cl_cfg("HORIZON_SECONDS"), gt=0)
    stride_frames: int = Field(default_factory=lambda: cl_cfg("CSV_STRIDE_FRAMES"), ge=1)

    @property
    def columns(self) -> list[str]:
        return [self.case_id, self.agent_id, self.timestamp, self.x, self.y, self.vx, self.vy, self.target_flag]

    @property
    def history_frames(self) -> int:
        return int(round(self.history_seconds * self.frame_rate_hz))

    @property
    def horizon_frames(self) -> int:
        return int(round(self.horizon_seconds * self.frame_rate_hz))


class StreamConfig(BaseModel):
    model_config = _FROZEN

    tasks: list[TaskSpec] = Field(default_factory=default_synthetic_tasks, min_length=1)
    csv_schema: CsvSchema = Field(default_factory=CsvSchema)

    @model_validator(mode="after")
    def _distinct_tasks(self) -> StreamConfig:
        keys = [task.distribution_key() for task in self.tasks]
        if len(set(keys)) != len(keys):
            raise ValueError("every task must differ from the others in at least one distribution parameter")
        ids = [task.task_id for task in self.tasks]
        if len(set(ids)) != len(ids):
            raise ValueError("task ids must be unique")
        return self

    @property
    def total_train(self) -> int:
        return sum(task.n_train for task in self.tasks)


# ═════════════════════════════════════════════════════════════════════════
# Experiment
# ═════════════════════════════════════════════════════════════════════════

class ExperimentConfig(BaseModel):
    """Everything needed to reproduce a set of runs."""

    model_config = _FROZEN

    name: str = "experiment"
    trainers: list[TrainerKindEnum] = Field(default_factory=lambda: [TrainerKindEnum.DUAL_LS], min_length=1)
    hyper: HyperParams = Field(default_factory=HyperParams)
    predictor: PredictorConfig = Field(default_factory=PredictorConfig)
    stream: StreamConfig = Field(default_factory=StreamConfig)
    buffer_budgets: list[int] = Field(default_factory=lambda: [cl_cfg("BUFFER_BUDGET")], min_length=1)
    allowed_budgets: list[int] = Field(default_factory=list)
    reservoir_share: float = Field(default_factory=lambda: cl_cfg("RESERVOIR_SHARE"), ge=0, le=1)
    score_batch: int = Field(default_factory=lambda: cl_cfg("SCORE_BATCH"), ge=1)
    goals_k: int = Field(default_factory=lambda: cl_cfg("GOALS_K"), ge=1)
    goal_extraction: GoalExtractionEnum = Field(
        default_factory=lambda: GoalExtractionEnum(cl_cfg("GOAL_EXTRACTION")),
    )
    evaluation_role: ModelRoleEnum = Field(default_factory=lambda: ModelRoleEnum(cl_cfg("EVALUATION_ROLE")))
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    joint_reference: bool = False
    joint_epochs: int = Field(default_factory=lambda: cl_cfg("JOINT_EPOCHS"), ge=1)
    checkpoint_every_task: bool = False
    plots: list[str] = Field(default_factory=lambda: ["task_curves", "error_matrix", "buffer_composition", "loss_trace"])
    output_dir: str | None = None
    workers: int = Field(default_factory=lambda: cl_cfg("WORKERS"), ge=1)

    @model_validator(mode="after")
    def _check_budgets(self) -> ExperimentConfig:
        allowed = set(cl_cfg("ALLOWED_BUFFER_BUDGETS")) | set(self.allowed_budgets)
        ceiling = cl_cfg("MAX_BUDGET_FRACTION") * self.stream.total_train
        for budget in self.buffer_budgets:
            if budget not in allowed:
                raise ValueError(f"buffer budget {budget} not in allowed set {sorted(allowed)}")
            if budget >= ceiling:
                raise ValueError(
                    f"buffer budget {budget} must stay well below the stream size "
                    f"(< {ceiling:g} of {self.stream.total_train} training samples)",
                )
        if self.goals_k > self.predictor.n_cells:
            raise ValueError(f"goals_k={self.goals_k} exceeds the {self.predictor.n_cells} heatmap cells")
        return self

    def budget(self, total: int) -> BufferBudget:
        return BufferBudget(total=total, reservoir_share=self.reservoir_share, score_batch=self.score_batch)

    def config_hash(self) -> str:
        """Stable hash of the canonical config (output location and pool size excluded)."""
        payload = self.model_dump(mode="json", exclude={"output_dir", "workers"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


# ── Loading ──────────────────────────────────────────────────────────────

def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_experiment_config(data: dict) -> ExperimentConfig:
    """Validate a plain mapping into an ``ExperimentConfig``."""
    if not isinstance(data, dict):
        raise ConfigurationError("experiment config must be a mapping at the top level")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(_format_validation_error(exc)) from exc


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a YAML experiment file."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config file {path} is not valid YAML: {exc}") from exc
    return parse_experiment_config(raw or {})
