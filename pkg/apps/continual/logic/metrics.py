"""
Evaluation maths: goal extraction, FDE, miss rate, error matrix, BWT.

Task indices passed to ``bwt`` and ``averages`` are 1-based, matching how
results are reported ("after training through task c").
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from apps.continual.exceptions import ConfigurationError
from apps.continual.exceptions import InputError
from apps.continual.exceptions import UndefinedMetricError
from utilities.enums import GoalExtractionEnum
from utilities.enums import MetricEnum

from .config import cl_cfg
from .types import Heatmap
from .types import ParamVector
from .types import Sample

MR_LOW_SPEED = 1.4
MR_HIGH_SPEED = 11.0


# ═════════════════════════════════════════════════════════════════════════
# Goal extraction
# ═════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True, eq=False)
class GoalSet:
    """K goal positions, most probable first."""

    positions: NDArray[np.float64]
    probabilities: NDArray[np.float64]

    def __len__(self) -> int:
        return self.positions.shape[0]


def _pick_cells(
    probs: NDArray, k: int, mode: GoalExtractionEnum, rng: np.random.Generator | None,
) -> NDArray[np.intp]:
    """Flat cell indices per row, ordered by descending probability (ties: lower index)."""
    n, cells = probs.shape
    if k > cells:
        raise ConfigurationError(f"cannot extract {k} goals from a {cells}-cell heatmap")
    if k < 1:
        raise ConfigurationError(f"goal count must be >= 1, got {k}")

    if mode is GoalExtractionEnum.TOP_K:
        return np.argsort(-probs, axis=1, kind="stable")[:, :k]

    if rng is None:
        raise ConfigurationError("sampled goal extraction needs a random generator")
    picks = np.empty((n, k), dtype=np.intp)
    for r in range(n):
        p = probs[r]
        support = int(np.count_nonzero(p))
        drawn = rng.choice(cells, size=min(k, support), replace=False, p=p / p.sum())
        if drawn.size < k:
            rest = np.setdiff1d(np.arange(cells), drawn)[: k - drawn.size]
            drawn = np.concatenate([drawn, rest])
        picks[r] = drawn[np.lexsort((drawn, -p[drawn]))]
    return picks


def _cell_centers(flat: NDArray, shape: tuple[int, int], origin, cell_size: float) -> NDArray:
    i, j = np.divmod(flat, shape[1])
    return np.stack(
        [origin[0] + (i + 0.5) * cell_size, origin[1] + (j + 0.5) * cell_size],
        axis=-1,
    )


def extract_goals_batch(
    probs: NDArray,
    shape: tuple[int, int],
    origin,
    cell_size: float,
    k: int,
    mode: GoalExtractionEnum = GoalExtractionEnum.TOP_K,
    rng: np.random.Generator | None = None,
) -> tuple[NDArray, NDArray]:
    """Goal positions (n, K, 2) and their probabilities (n, K) for row-wise flattened heatmaps."""
    probs = np.atleast_2d(probs)
    picks = _pick_cells(probs, k, GoalExtractionEnum(mode), rng)
    return _cell_centers(picks, shape, origin, cell_size), np.take_along_axis(probs, picks, axis=1)


def extract_goals(
    h: Heatmap,
    k: int | None = None,
    mode: GoalExtractionEnum = GoalExtractionEnum.TOP_K,
    rng: np.random.Generator | None = None,
) -> GoalSet:
    k = cl_cfg("GOALS_K") if k is None else k
    positions, probs = extract_goals_batch(
        h.values.reshape(1, -1), h.shape, h.grid_origin, h.cell_size, k, mode, rng,
    )
    return GoalSet(positions[0], probs[0])


# ═════════════════════════════════════════════════════════════════════════
# Per-sample errors
# ═════════════════════════════════════════════════════════════════════════

def _positions(goals) -> NDArray:
    return goals.positions if isinstance(goals, GoalSet) else np.asarray(goals, dtype=np.float64)


def fde(goals: GoalSet | NDArray, truth) -> float:
    """Smallest Euclidean distance from any goal to the truth."""
    diff = _positions(goals).reshape(-1, 2) - np.asarray(truth, dtype=np.float64)
    return float(np.min(np.hypot(diff[:, 0], diff[:, 1])))


def mr_threshold(v: float | NDArray) -> float | NDArray:
    """Longitudinal half-length of the miss box: 1 m when slow, 2 m when fast, linear between."""
    speeds = np.asarray(v, dtype=np.float64)
    if np.any(speeds < 0):
        raise InputError(f"speed must be non-negative, got {v}")
    ramp = 1.0 + (speeds - MR_LOW_SPEED) / (MR_HIGH_SPEED - MR_LOW_SPEED)
    out = np.where(speeds < MR_LOW_SPEED, 1.0, np.where(speeds > MR_HIGH_SPEED, 2.0, ramp))
    return float(out) if out.ndim == 0 else out


def _miss_mask(goals: NDArray, truths: NDArray, headings: NDArray, speeds: NDArray) -> NDArray[np.bool_]:
    """goals (n, K, 2), truths (n, 2), headings (n, 2), speeds (n,) → (n, K)."""
    norms = np.hypot(headings[:, 0], headings[:, 1])
    if np.any(norms == 0):
        raise InputError("heading must be a non-zero vector")
    unit = headings / norms[:, None]
    normal = np.stack([-unit[:, 1], unit[:, 0]], axis=1)
    offset = goals - truths[:, None, :]
    lon = np.einsum("nkd,nd->nk", offset, unit)
    lat = np.einsum("nkd,nd->nk", offset, normal)
    lateral = cl_cfg("LATERAL_HALF_WIDTH")
    return (np.abs(lat) > lateral) | (np.abs(lon) > mr_threshold(speeds)[:, None])


def miss(goal, truth, heading, v: float) -> bool:
    """True when the goal falls outside the heading-aligned box around the truth."""
    mask = _miss_mask(
        np.asarray(goal, dtype=np.float64).reshape(1, 1, 2),
        np.asarray(truth, dtype=np.float64).reshape(1, 2),
        np.asarray(heading, dtype=np.float64).reshape(1, 2),
        np.atleast_1d(np.asarray(v, dtype=np.float64)),
    )
    return bool(mask[0, 0])


def mr_task(
    predictions: Sequence[GoalSet] | NDArray,
    truths: Sequence | NDArray,
    speeds: Sequence[float] | NDArray,
    headings: Sequence | NDArray,
) -> float:
    """Fraction of all predicted goals (K per sample) that miss."""
    n = len(predictions)
    if not (n == len(truths) == len(speeds) == len(headings)):
        raise InputError(
            f"misaligned inputs: {n} predictions, {len(truths)} truths, {len(speeds)} speeds, {len(headings)} headings",
        )
    if n == 0:
        raise InputError("miss rate needs at least one sample")
    goals = np.stack([_positions(p) for p in predictions])
    mask = _miss_mask(
        goals,
        np.asarray(truths, dtype=np.float64).reshape(n, 2),
        np.asarray(headings, dtype=np.float64).reshape(n, 2),
        np.asarray(speeds, dtype=np.float64).reshape(n),
    )
    return float(mask.mean())


# ═════════════════════════════════════════════════════════════════════════
# Task evaluation
# ═════════════════════════════════════════════════════════════════════════

class TaskEvaluation(NamedTuple):
    fde: float
    mr: float
    sample_fde: NDArray[np.float64]
    sample_miss: NDArray[np.float64]


def evaluate_samples(
    model,
    params: ParamVector,
    samples: Sequence[Sample],
    k: int,
    mode: GoalExtractionEnum = GoalExtractionEnum.TOP_K,
    rng: np.random.Generator | None = None,
) -> TaskEvaluation:
    """FDE and MR of one test set; both read the same extracted goals."""
    if not samples:
        raise InputError("cannot evaluate an empty test set")
    probs = model.probabilities(params, samples)
    goals, _ = extract_goals_batch(probs, model.grid_shape, model.origin, model.config.cell_size, k, mode, rng)
    truths = np.stack([s.goal for s in samples])
    diff = goals - truths[:, None, :]
    sample_fde = np.min(np.hypot(diff[..., 0], diff[..., 1]), axis=1)
    mask = _miss_mask(
        goals,
        truths,
        np.stack([s.heading for s in samples]),
        np.array([s.speed for s in samples]),
    )
    sample_miss = mask.mean(axis=1)
    return TaskEvaluation(float(sample_fde.mean()), float(mask.mean()), sample_fde, sample_miss)


# ═════════════════════════════════════════════════════════════════════════
# Error matrix & aggregates
# ═════════════════════════════════════════════════════════════════════════

class ErrorMatrix:
    """R[i, j]: error on task j after training through task i (0-based storage)."""

    def __init__(self, n_tasks: int, metric: MetricEnum):
        if n_tasks < 1:
            raise InputError("error matrix needs at least one task")
        self.metric = MetricEnum(metric)
        self.values = np.full((n_tasks, n_tasks), np.nan)
        self.filled = np.zeros(n_tasks, dtype=bool)

    @property
    def n_tasks(self) -> int:
        return self.values.shape[0]

    def record_row(self, i: int, row: Sequence[float]) -> None:
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (self.n_tasks,):
            raise InputError(f"row must have {self.n_tasks} entries, got {row.shape}")
        if np.any(row < 0):
            raise InputError("errors must be non-negative")
        if i > 0 and not self.filled[i - 1]:
            raise InputError(f"row {i} recorded before row {i - 1}")
        self.values[i] = row
        self.filled[i] = True

    def row(self, c: int) -> NDArray[np.float64]:
        """Row after task ``c`` (1-based)."""
        if not 1 <= c <= self.n_tasks or not self.filled[c - 1]:
            raise UndefinedMetricError(f"row {c} of the {self.metric.value} matrix is not filled")
        return self.values[c - 1]

    @classmethod
    def from_values(cls, values, metric: MetricEnum) -> ErrorMatrix:
        values = np.asarray(values, dtype=np.float64)
        matrix = cls(values.shape[0], metric)
        for i, row in enumerate(values):
            if np.all(np.isfinite(row)):
                matrix.record_row(i, row)
        return matrix

    @classmethod
    def from_sample_errors(cls, errors: Sequence[Sequence[NDArray]], metric: MetricEnum) -> ErrorMatrix:
        """``errors[i][j]`` holds per-sample errors on task j after task i."""
        return cls.from_values([[float(np.mean(e)) for e in row] for row in errors], metric)

    def to_list(self) -> list[list[float | None]]:
        return [[None if np.isnan(v) else float(v) for v in row] for row in self.values]


def bwt(R: ErrorMatrix, c: int) -> float:
    """Mean increase of past-task error after training through task ``c`` (1-based, c ≥ 2)."""
    if c < 2:
        raise UndefinedMetricError(f"backward transfer needs at least two tasks, got c={c}")
    row = R.row(c)
    diagonal = np.array([R.row(i)[i - 1] for i in range(1, c)])
    return float(np.mean(row[: c - 1] - diagonal))


def averages(R: ErrorMatrix, c: int) -> float:
    """Mean error over every task after training through task ``c`` (1-based)."""
    return float(np.mean(R.row(c)))
