"""
Core value types shared by the predictor, buffers and metrics.

``Sample`` deliberately hides its task label: trainers only see features,
goal, speed and heading. The harness and metrics read the label through
``task_of``.
"""

from __future__ import annotations

from dataclasses import dataclass
from dataclasses import field

import numpy as np
from numpy.typing import NDArray

from apps.continual.exceptions import InputError

ParamVector = NDArray[np.float64]

_NORMALIZATION_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Probability mass over an l×w grid; ``values[i, j]`` has i along x."""

    values: NDArray[np.float64]
    grid_origin: tuple[float, float]
    cell_size: float

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 2 or values.shape[1] < 2:
            raise InputError(f"heatmap must be at least 2x2, got shape {values.shape}")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise InputError("heatmap cells must be finite and non-negative")
        total = float(values.sum())
        if abs(total - 1.0) > _NORMALIZATION_TOL:
            raise InputError(f"heatmap mass must sum to 1, got {total:.9f}")
        object.__setattr__(self, "values", values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def cell_center(self, i: int, j: int) -> NDArray[np.float64]:
        return np.array(
            [
                self.grid_origin[0] + (i + 0.5) * self.cell_size,
                self.grid_origin[1] + (j + 0.5) * self.cell_size,
            ],
        )

    def cell_of(self, point) -> tuple[int, int]:
        """Grid cell containing ``point``; the far edge belongs to the last cell."""
        return locate_cell(point, self.grid_origin, self.cell_size, self.shape)


def locate_cell(point, origin, cell_size: float, shape: tuple[int, int]) -> tuple[int, int]:
    x, y = float(point[0]), float(point[1])
    l, w = shape
    fx = (x - origin[0]) / cell_size
    fy = (y - origin[1]) / cell_size
    if not (0.0 <= fx <= l and 0.0 <= fy <= w):
        raise InputError(f"goal ({x:.3f}, {y:.3f}) lies outside the heatmap grid")
    return min(int(np.floor(fx)), l - 1), min(int(np.floor(fy)), w - 1)


@dataclass(frozen=True, eq=False)
class Sample:
    """
    One observation of the stream.

    dynamic_features: (d_v, d_s) agent rows, target agent first.
    static_features:  (d_e,) map encoding.
    goal:             target position after the horizon, metres, target-centred frame.
    """

    dynamic_features: NDArray[np.float64]
    static_features: NDArray[np.float64]
    goal: NDArray[np.float64]
    speed: float
    _task_id: int = field(default=-1, repr=False)

    def __post_init__(self) -> None:
        dynamic = np.asarray(self.dynamic_features, dtype=np.float64)
        static = np.asarray(self.static_features, dtype=np.float64).reshape(-1)
        goal = np.asarray(self.goal, dtype=np.float64).reshape(-1)
        if dynamic.ndim != 2 or dynamic.shape[0] < 1 or dynamic.shape[1] < 1:
            raise InputError(f"dynamic features must be a non-empty matrix, got shape {dynamic.shape}")
        if static.size < 1:
            raise InputError("static features must be non-empty")
        if goal.shape != (2,):
            raise InputError(f"goal must be a 2-D point, got shape {goal.shape}")
        if not self.speed >= 0:
            raise InputError(f"speed must be non-negative, got {self.speed}")
        object.__setattr__(self, "dynamic_features", dynamic)
        object.__setattr__(self, "static_features", static)
        object.__setattr__(self, "goal", goal)
        object.__setattr__(self, "speed", float(self.speed))

    @property
    def features(self) -> NDArray[np.float64]:
        """Flattened model input: dynamic rows then map encoding."""
        return np.concatenate([self.dynamic_features.reshape(-1), self.static_features])

    @property
    def heading(self) -> NDArray[np.float64]:
        """Unit velocity of the target agent; +x when it is standing still."""
        velocity = self.dynamic_features[0, 2:4] if self.dynamic_features.shape[1] >= 4 else np.zeros(2)
        norm = float(np.hypot(velocity[0], velocity[1]))
        if self.speed < 1e-6 or norm < 1e-12:
            return np.array([1.0, 0.0])
        return velocity / norm


def task_of(sample: Sample) -> int:
    """Hidden task label; read only by the harness, metrics and introspection."""
    return sample._task_id
