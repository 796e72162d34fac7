"""
Domain-incremental task streams.

Two sources of samples:

* ``generate_synthetic``: a seeded scenario family where the target agent's
  goal is its velocity, turned by a per-task angle and scaled by the
  horizon, plus noise. Tasks differ in heading rotation, turn and speed range.
* ``load_csv``: windows external trajectory tables into
  (history → goal after the horizon) samples.

``TaskStream`` materializes tasks lazily and hands training batches to the
harness strictly in task order; a batch never spans two tasks.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator
from collections.abc import Sequence
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from apps.continual.exceptions import ConfigurationError
from apps.continual.exceptions import InputError

from .config import cl_cfg
from .schemas import CsvSchema
from .schemas import PredictorConfig
from .schemas import StreamConfig
from .schemas import TaskSpec
from .types import Sample
from .types import task_of

logger = logging.getLogger("continual.stream")

__all__ = [
    "CsvIngest",
    "TaskStream",
    "check_task_ranges",
    "closed_form_goal",
    "generate_synthetic",
    "load_csv",
    "stream_batches",
    "task_of",
]

# Spread of the non-target agents around the target (metres).
_NEIGHBOUR_SPREAD = 20.0


def _fit(vector: NDArray, size: int) -> NDArray:
    """Truncate or zero-pad to ``size``."""
    out = np.zeros(size)
    n = min(size, vector.size)
    out[:n] = vector[:n]
    return out


def _rotation(deg: float) -> NDArray:
    rad = np.deg2rad(deg)
    c, s = np.cos(rad), np.sin(rad)
    return np.array([[c, -s], [s, c]])


# ═════════════════════════════════════════════════════════════════════════
# Synthetic scenarios
# ═════════════════════════════════════════════════════════════════════════

def check_task_ranges(spec: TaskSpec, predictor: PredictorConfig) -> None:
    """Reject generator settings that cannot produce a valid sample."""
    lo, hi = spec.speed_range
    if lo < 0 or hi <= lo:
        raise ConfigurationError(f"task {spec.task_id}: speed range {spec.speed_range} is degenerate")
    a_lo, a_hi = spec.agent_count_range
    if a_lo < 1 or a_hi < a_lo or a_hi > predictor.n_agents:
        raise ConfigurationError(
            f"task {spec.task_id}: agent count range {spec.agent_count_range} must lie in [1, {predictor.n_agents}]",
        )
    if spec.noise_scale < 0 or spec.heading_jitter_deg < 0:
        raise ConfigurationError(f"task {spec.task_id}: noise scale and heading jitter must be non-negative")
    if predictor.agent_features < 4 or predictor.map_features < 2:
        raise ConfigurationError("synthetic scenarios need at least 4 agent features and 2 map features")
    reach = hi * cl_cfg("HORIZON_SECONDS")
    half_extent = min(predictor.grid_l, predictor.grid_w) * predictor.cell_size / 2.0
    if reach >= half_extent:
        raise ConfigurationError(
            f"task {spec.task_id}: goals travel up to {reach:.1f} m, beyond the {half_extent:.1f} m grid half-extent",
        )


def closed_form_goal(sample: Sample, horizon: float | None = None) -> NDArray[np.float64]:
    """Noise-free synthetic goal: target velocity turned by the encoded angle, times the horizon."""
    horizon = cl_cfg("HORIZON_SECONDS") if horizon is None else horizon
    cos_t, sin_t = sample.static_features[0], sample.static_features[1]
    turn = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    return horizon * turn @ sample.dynamic_features[0, 2:4]


def _synthetic_sample(spec: TaskSpec, predictor: PredictorConfig, rng: np.random.Generator) -> Sample:
    history = cl_cfg("HISTORY_SECONDS")
    horizon = cl_cfg("HORIZON_SECONDS")
    lo, hi = spec.speed_range

    heading = np.deg2rad(spec.rotation_deg + rng.uniform(-spec.heading_jitter_deg, spec.heading_jitter_deg))
    speed = rng.uniform(lo, hi)
    velocity = speed * np.array([np.cos(heading), np.sin(heading)])

    dynamic = np.zeros((predictor.n_agents, predictor.agent_features))
    dynamic[0] = _fit(np.array([0.0, 0.0, *velocity, *(velocity * history), 1.0]), predictor.agent_features)

    n_present = int(rng.integers(spec.agent_count_range[0], spec.agent_count_range[1] + 1))
    for row in range(1, n_present):
        pos = rng.uniform(-_NEIGHBOUR_SPREAD, _NEIGHBOUR_SPREAD, size=2)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        vel = rng.uniform(lo, hi) * np.array([np.cos(angle), np.sin(angle)])
        dynamic[row] = _fit(np.array([*pos, *vel, *(vel * history), 1.0]), predictor.agent_features)

    turn = np.deg2rad(spec.turn_deg)
    rot = np.deg2rad(spec.rotation_deg)
    # Road geometry and local density only; generator settings stay hidden.
    static = _fit(
        np.array([np.cos(turn), np.sin(turn), np.cos(rot), np.sin(rot), n_present / predictor.n_agents, 1.0]),
        predictor.map_features,
    )

    goal = horizon * _rotation(spec.turn_deg) @ velocity
    if spec.noise_scale > 0:
        goal = goal + rng.normal(0.0, spec.noise_scale, size=2)
        half_l = predictor.grid_l * predictor.cell_size / 2.0
        half_w = predictor.grid_w * predictor.cell_size / 2.0
        goal = np.clip(goal, [-half_l, -half_w], [half_l, half_w])
    return Sample(dynamic, static, goal, speed, _task_id=spec.task_id)


def generate_synthetic(
    spec: TaskSpec,
    seed: int,
    predictor: PredictorConfig | None = None,
) -> tuple[list[Sample], list[Sample]]:
    """Train and test samples of one synthetic task; pure in ``(spec, seed)``."""
    predictor = predictor or PredictorConfig()
    check_task_ranges(spec, predictor)
    rng = np.random.default_rng(np.random.SeedSequence([seed, spec.task_id]))
    train = [_synthetic_sample(spec, predictor, rng) for _ in range(spec.n_train)]
    test = [_synthetic_sample(spec, predictor, rng) for _ in range(spec.n_test)]
    return train, test


# ═════════════════════════════════════════════════════════════════════════
# CSV ingestion
# ═════════════════════════════════════════════════════════════════════════

class CsvIngest(NamedTuple):
    samples: list[Sample]
    skipped_rows: int
    off_grid_windows: int = 0


def _truthy(series: pd.Series) -> pd.Series:
    return series.astype(float) != 0.0


def _read_table(path: Path, schema: CsvSchema) -> tuple[pd.DataFrame, int]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    missing = [c for c in schema.columns if c not in frame.columns]
    if missing:
        raise InputError(f"{path}: header is missing columns {missing}")
    frame = frame[schema.columns]
    if frame.empty:
        return frame, 0

    numeric = frame.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    bad = numeric.isna().any(axis=1)
    skipped = int(bad.sum())
    if skipped:
        logger.warning("continual.stream action=csv_skip path=%s skipped_rows=%d", path, skipped)
    return numeric[~bad].reset_index(drop=True), skipped


def _case_samples(
    case: pd.DataFrame,
    schema: CsvSchema,
    predictor: PredictorConfig,
    task_id: int,
) -> tuple[list[Sample], int]:
    """Windows of one case, plus how many were dropped for a goal beyond the grid."""
    s = schema
    target = case[_truthy(case[s.target_flag])].sort_values(s.timestamp)
    if target.empty:
        return [], 0
    others = case[~_truthy(case[s.target_flag])]
    positions = target[[s.x, s.y]].to_numpy()
    velocities = target[[s.vx, s.vy]].to_numpy()
    stamps = target[s.timestamp].to_numpy()

    H, G = s.history_frames, s.horizon_frames
    half = np.array([predictor.grid_l, predictor.grid_w]) * predictor.cell_size / 2.0
    samples = []
    off_grid = 0
    for start in range(0, len(target) - H - G + 1, s.stride_frames):
        now = start + H - 1
        origin = positions[now]
        goal = positions[now + G] - origin
        if np.any(np.abs(goal) > half):
            off_grid += 1
            continue

        dynamic = np.zeros((predictor.n_agents, predictor.agent_features))
        history = positions[now] - positions[start]
        dynamic[0] = _fit(np.array([0.0, 0.0, *velocities[now], *history, 1.0]), predictor.agent_features)

        current = others[others[s.timestamp] == stamps[now]]
        if not current.empty and predictor.n_agents > 1:
            rel = current[[s.x, s.y]].to_numpy() - origin
            order = np.argsort(np.hypot(rel[:, 0], rel[:, 1]), kind="stable")[: predictor.n_agents - 1]
            past = others[others[s.timestamp] == stamps[start]].set_index(s.agent_id)
            for row, idx in enumerate(order, start=1):
                agent = current.iloc[idx]
                moved = np.zeros(2)
                if agent[s.agent_id] in past.index:
                    before = past.loc[[agent[s.agent_id]]].iloc[0]
                    moved = np.array([agent[s.x] - before[s.x], agent[s.y] - before[s.y]])
                dynamic[row] = _fit(
                    np.array([*rel[idx], agent[s.vx], agent[s.vy], *moved, 1.0]),
                    predictor.agent_features,
                )

        static = np.zeros(predictor.map_features)
        speed = float(np.hypot(*velocities[now]))
        samples.append(Sample(dynamic, static, goal, speed, _task_id=task_id))
    return samples, off_grid


def load_csv(
    path: str | Path,
    schema: CsvSchema | None = None,
    predictor: PredictorConfig | None = None,
    task_id: int = -1,
) -> CsvIngest:
    """
    Window every case of a trajectory table into samples.

    Rows with a missing or non-numeric field are dropped and counted in
    ``skipped_rows``; windows whose goal lands beyond the grid are dropped
    and counted in ``off_grid_windows``. A header-only file yields no
    samples and no skips.
    """
    path = Path(path)
    schema = schema or CsvSchema()
    predictor = predictor or PredictorConfig()
    if not path.exists():
        raise InputError(f"CSV file not found: {path}")

    table, skipped = _read_table(path, schema)
    samples: list[Sample] = []
    off_grid = 0
    for _, case in table.groupby(schema.case_id, sort=True):
        windows, dropped = _case_samples(case, schema, predictor, task_id)
        samples.extend(windows)
        off_grid += dropped

    if off_grid:
        logger.warning("continual.stream action=csv_off_grid path=%s off_grid_windows=%d", path, off_grid)
    logger.info(
        "continual.stream action=csv_load path=%s samples=%d skipped_rows=%d off_grid_windows=%d",
        path,
        len(samples),
        skipped,
        off_grid,
    )
    return CsvIngest(samples, skipped, off_grid)


# ═════════════════════════════════════════════════════════════════════════
# Stream
# ═════════════════════════════════════════════════════════════════════════

class TaskStream:
    """Ordered tasks with lazily materialized, seeded train/test splits."""

    def __init__(
        self,
        tasks: Sequence[TaskSpec] | StreamConfig,
        seed: int = 0,
        predictor: PredictorConfig | None = None,
        csv_schema: CsvSchema | None = None,
    ):
        if isinstance(tasks, StreamConfig):
            csv_schema = csv_schema or tasks.csv_schema
            tasks = tasks.tasks
        self.tasks = list(tasks)
        self.seed = seed
        self.predictor = predictor or PredictorConfig()
        self.csv_schema = csv_schema or CsvSchema()
        self._cache: dict[int, tuple[list[Sample], list[Sample]]] = {}

    def __len__(self) -> int:
        return len(self.tasks)

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def _shuffle_rng(self, spec: TaskSpec) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, spec.task_id, 1]))

    def _materialize(self, index: int) -> tuple[list[Sample], list[Sample]]:
        if index in self._cache:
            return self._cache[index]
        spec = self.tasks[index]
        if spec.kind == "synthetic":
            train, test = generate_synthetic(spec, self.seed, self.predictor)
        else:
            ingest = load_csv(spec.csv_path, self.csv_schema, self.predictor, spec.task_id)
            pool = [ingest.samples[i] for i in self._shuffle_rng(spec).permutation(len(ingest.samples))]
            train, test = pool[: spec.n_train], pool[spec.n_train: spec.n_train + spec.n_test]
            if not train or not test:
                raise InputError(
                    f"task {spec.task_id}: {spec.csv_path} yields {len(ingest.samples)} samples, "
                    "not enough for a train and a test split",
                )

        order = self._shuffle_rng(spec).permutation(len(train))
        train = [train[i] for i in order]
        self._cache[index] = (train, test)
        logger.debug(
            "continual.stream action=materialize task=%d train=%d test=%d",
            spec.task_id,
            len(train),
            len(test),
        )
        return train, test

    def train(self, index: int) -> list[Sample]:
        return self._materialize(index)[0]

    def test(self, index: int) -> list[Sample]:
        return self._materialize(index)[1]

    def task_batches(self, index: int, batch_size: int, start: int = 0) -> Iterator[list[Sample]]:
        """Training batches of one task, beginning at batch number ``start``."""
        if batch_size < 1:
            raise InputError(f"batch size must be >= 1, got {batch_size}")
        data = self.train(index)
        for offset in range(start * batch_size, len(data), batch_size):
            yield data[offset: offset + batch_size]

    def n_batches(self, index: int, batch_size: int) -> int:
        return -(-len(self.train(index)) // batch_size)

    @property
    def total_train(self) -> int:
        return sum(spec.n_train for spec in self.tasks)


def stream_batches(stream: TaskStream, batch_size: int) -> Iterator[list[Sample]]:
    """All training batches, task by task; a batch never mixes tasks."""
    for index in range(stream.n_tasks):
        yield from stream.task_batches(index, batch_size)
