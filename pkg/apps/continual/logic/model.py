"""
Heatmap goal predictor.

A fully connected tanh network maps the flattened sample features to
l·w logits; a softmax over cells gives the goal heatmap. Parameters live in
one flat float64 vector so EMA averaging, SGD and gradient cosines work on
plain arrays.

Backward pass is written out by hand, layer by layer:

    z_k = a_{k-1} W_k + b_k        a_k = tanh(z_k)   (hidden layers)
    logits = a_{L-1} W_L + b_L     heatmap = softmax(logits)

Every loss used by the learners is expressed through ``LossTerm`` and
evaluated by ``GoalPredictor.objective`` in a single forward/backward pass.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray
from scipy.special import log_softmax
from scipy.special import softmax

from apps.continual.exceptions import ConfigurationError
from apps.continual.exceptions import InputError
from apps.continual.exceptions import InternalError
from utilities.enums import LossKindEnum

from .schemas import PredictorConfig
from .types import Heatmap
from .types import ParamVector
from .types import Sample
from .types import locate_cell

_TINY = 1e-300


# ═════════════════════════════════════════════════════════════════════════
# Parameter layout
# ═════════════════════════════════════════════════════════════════════════

class ParamLayout:
    """Offsets of each (W, b) pair inside the flat parameter vector."""

    def __init__(self, dims: Sequence[int]):
        self.dims = tuple(int(d) for d in dims)
        self.slices: list[tuple[slice, tuple[int, int], slice]] = []
        offset = 0
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            w = slice(offset, offset + fan_in * fan_out)
            offset = w.stop
            b = slice(offset, offset + fan_out)
            offset = b.stop
            self.slices.append((w, (fan_in, fan_out), b))
        self.size = offset

    def unpack(self, params: ParamVector) -> list[tuple[NDArray, NDArray]]:
        if params.shape != (self.size,):
            raise InternalError(f"parameter vector has length {params.shape}, expected {self.size}")
        return [(params[w].reshape(shape), params[b]) for w, shape, b in self.slices]


# ═════════════════════════════════════════════════════════════════════════
# Losses on heatmaps
# ═════════════════════════════════════════════════════════════════════════

def _grid(h) -> NDArray[np.float64]:
    return np.asarray(h.values if isinstance(h, Heatmap) else h, dtype=np.float64)


def kl_divergence(teacher, student, floor: float = 1e-8) -> float:
    """KL(teacher ‖ student) with both sides clamped below at ``floor``."""
    t = _grid(teacher)
    s = _grid(student)
    if t.shape != s.shape:
        raise InputError(f"KL shape mismatch: teacher {t.shape} vs student {s.shape}")
    t = np.maximum(t, floor)
    s = np.maximum(s, floor)
    return float(np.sum(t * (np.log(t) - np.log(s))))


def _focal_from_probs(
    probs: NDArray, log_probs: NDArray, targets: NDArray, gamma: float,
) -> NDArray[np.float64]:
    """Per-row −Σ y (1−p)^γ log p."""
    weight = np.power(np.maximum(1.0 - probs, 0.0), gamma) if gamma else 1.0
    return -np.sum(targets * weight * log_probs, axis=1)


def _focal_logit_grad(probs: NDArray, log_probs: NDArray, targets: NDArray, gamma: float) -> NDArray:
    # u_c = p_c ∂ℓ/∂p_c; softmax chain rule gives dz = u − p Σu
    if gamma:
        one_minus = np.maximum(1.0 - probs, _TINY)
        u = -targets * (one_minus**gamma - gamma * probs * one_minus ** (gamma - 1.0) * log_probs)
    else:
        u = -targets
    return u - probs * u.sum(axis=1, keepdims=True)


def _kl_terms(teachers: NDArray, probs: NDArray, floor: float) -> tuple[NDArray, NDArray]:
    t = np.maximum(teachers, floor)
    s = np.maximum(probs, floor)
    losses = np.sum(t * (np.log(t) - np.log(s)), axis=1)
    u = np.where(probs > floor, -t, 0.0)
    return losses, u - probs * u.sum(axis=1, keepdims=True)


@dataclass
class LossTerm:
    """
    One weighted component of a training objective.

    The term contributes ``weight · mean_i loss_i`` over ``samples``. KL terms
    need ``teachers``: one flattened probability grid per sample.
    """

    kind: LossKindEnum
    samples: Sequence[Sample]
    weight: float = 1.0
    teachers: NDArray | None = None

    @property
    def active(self) -> bool:
        return len(self.samples) > 0 and self.weight != 0.0


class ObjectiveValue(NamedTuple):
    loss: float
    grad: ParamVector
    term_losses: tuple[float, ...]


# ═════════════════════════════════════════════════════════════════════════
# Predictor
# ═════════════════════════════════════════════════════════════════════════

class GoalPredictor:
    """Stateless predictor: every method takes the parameter vector explicitly."""

    def __init__(self, config: PredictorConfig):
        self.config = config
        self.layout = ParamLayout([config.input_dim, *config.hidden_widths, config.n_cells])
        self.grid_shape = (config.grid_l, config.grid_w)
        self.origin = config.grid_origin

    @property
    def n_params(self) -> int:
        return self.layout.size

    def init_params(self, rng: np.random.Generator) -> ParamVector:
        params = np.zeros(self.layout.size)
        for w, (fan_in, fan_out), _ in self.layout.slices:
            scale = self.config.init_scale / np.sqrt(fan_in)
            params[w] = rng.normal(0.0, scale, size=fan_in * fan_out)
        return params

    # ── Features & targets ───────────────────────────────────────────────

    def design_matrix(self, samples: Sequence[Sample]) -> NDArray[np.float64]:
        X = np.stack([s.features for s in samples])
        if X.shape[1] != self.config.input_dim:
            raise ConfigurationError(
                f"sample has {X.shape[1]} features, predictor expects {self.config.input_dim} "
                f"({self.config.n_agents}×{self.config.agent_features} + {self.config.map_features})",
            )
        return X

    def target(self, goal) -> NDArray[np.float64]:
        """Gaussian splat centred on the goal's cell, flattened, summing to 1."""
        ci, cj = locate_cell(goal, self.origin, self.config.cell_size, self.grid_shape)
        di = np.arange(self.config.grid_l)[:, None] - ci
        dj = np.arange(self.config.grid_w)[None, :] - cj
        splat = np.exp(-(di**2 + dj**2) / (2.0 * self.config.target_sigma**2))
        splat /= splat.sum()
        return splat.reshape(-1)

    def targets(self, samples: Sequence[Sample]) -> NDArray[np.float64]:
        return np.stack([self.target(s.goal) for s in samples])

    # ── Forward ──────────────────────────────────────────────────────────

    def _forward(self, params: ParamVector, X: NDArray) -> tuple[list[NDArray], NDArray]:
        layers = self.layout.unpack(params)
        activations = [X]
        a = X
        for W, b in layers[:-1]:
            a = np.tanh(a @ W + b)
            activations.append(a)
        W, b = layers[-1]
        return activations, a @ W + b

    def logits(self, params: ParamVector, samples: Sequence[Sample]) -> NDArray[np.float64]:
        return self._forward(params, self.design_matrix(samples))[1]

    def probabilities(self, params: ParamVector, samples: Sequence[Sample]) -> NDArray[np.float64]:
        """Row-wise flattened heatmaps, shape (n, l·w)."""
        return softmax(self.logits(params, samples), axis=1)

    def to_heatmap(self, probs: NDArray) -> Heatmap:
        return Heatmap(probs.reshape(self.grid_shape), self.origin, self.config.cell_size)

    def forward(self, params: ParamVector, sample: Sample) -> Heatmap:
        return self.to_heatmap(self.probabilities(params, [sample])[0])

    def predict(self, params: ParamVector, samples: Sequence[Sample]) -> list[Heatmap]:
        return [self.to_heatmap(p) for p in self.probabilities(params, samples)]

    # ── Losses ───────────────────────────────────────────────────────────

    def focal_loss(self, pred: Heatmap, goal) -> float:
        p = pred.values.reshape(1, -1)
        y = self.target(goal).reshape(1, -1)
        log_p = np.log(np.maximum(p, _TINY))
        return float(_focal_from_probs(p, log_p, y, self.config.focal_gamma)[0])

    def kl_divergence(self, teacher, student) -> float:
        return kl_divergence(teacher, student, self.config.kl_floor)

    def sample_losses(self, params: ParamVector, samples: Sequence[Sample]) -> tuple[NDArray, NDArray]:
        """Flattened heatmaps and per-sample focal losses."""
        z = self.logits(params, samples)
        log_p = log_softmax(z, axis=1)
        p = np.exp(log_p)
        return p, _focal_from_probs(p, log_p, self.targets(samples), self.config.focal_gamma)

    # ── Objective & gradients ────────────────────────────────────────────

    def _row_terms(self, z: NDArray, term: LossTerm) -> tuple[NDArray, NDArray]:
        log_p = log_softmax(z, axis=1)
        p = np.exp(log_p)
        if term.kind is LossKindEnum.FOCAL:
            y = self.targets(term.samples)
            gamma = self.config.focal_gamma
            return _focal_from_probs(p, log_p, y, gamma), _focal_logit_grad(p, log_p, y, gamma)
        if term.teachers is None or len(term.teachers) != len(term.samples):
            raise InternalError("KL term needs one teacher heatmap per sample")
        teachers = np.asarray(term.teachers, dtype=np.float64).reshape(len(term.samples), -1)
        if teachers.shape[1] != p.shape[1]:
            raise InputError(f"KL shape mismatch: teacher {teachers.shape[1]} cells vs student {p.shape[1]}")
        return _kl_terms(teachers, p, self.config.kl_floor)

    def _backward(self, params: ParamVector, activations: list[NDArray], dz: NDArray) -> ParamVector:
        layers = self.layout.unpack(params)
        grad = np.empty(self.layout.size)
        for k in range(len(layers) - 1, -1, -1):
            w_slice, _, b_slice = self.layout.slices[k]
            a_prev = activations[k]
            grad[w_slice] = (a_prev.T @ dz).reshape(-1)
            grad[b_slice] = dz.sum(axis=0)
            if k:
                dz = (dz @ layers[k][0].T) * (1.0 - a_prev**2)
        return grad

    def objective(self, params: ParamVector, terms: Sequence[LossTerm]) -> ObjectiveValue:
        """
        Weighted sum of term means and its gradient, in one backward pass.

        ``term_losses`` holds each term's weighted contribution, aligned with
        ``terms`` (0.0 for empty or zero-weight terms, which are skipped).
        """
        active = [t for t in terms if t.active]
        if not active:
            return ObjectiveValue(0.0, np.zeros(self.layout.size), tuple(0.0 for _ in terms))

        samples = [s for t in active for s in t.samples]
        activations, z = self._forward(params, self.design_matrix(samples))

        contributions: dict[int, float] = {}
        dz = np.empty_like(z)
        start = 0
        for term in active:
            stop = start + len(term.samples)
            losses, dz_rows = self._row_terms(z[start:stop], term)
            coef = term.weight / len(term.samples)
            contributions[id(term)] = coef * float(losses.sum())
            dz[start:stop] = coef * dz_rows
            start = stop

        term_losses = tuple(contributions.get(id(t), 0.0) for t in terms)
        return ObjectiveValue(sum(term_losses), self._backward(params, activations, dz), term_losses)

    def grad(
        self,
        params: ParamVector,
        batch: Sequence[Sample],
        kind: LossKindEnum = LossKindEnum.FOCAL,
        teachers: NDArray | None = None,
    ) -> ParamVector:
        """Gradient of the mean batch loss."""
        if not batch:
            raise InputError("gradient needs a non-empty batch")
        return self.objective(params, [LossTerm(kind, batch, 1.0, teachers)]).grad

    def per_sample_grads(self, params: ParamVector, samples: Sequence[Sample]) -> NDArray[np.float64]:
        """Focal-loss gradient of each sample separately, shape (n, P)."""
        n = len(samples)
        if n == 0:
            return np.zeros((0, self.layout.size))
        activations, z = self._forward(params, self.design_matrix(samples))
        log_p = log_softmax(z, axis=1)
        p = np.exp(log_p)
        dz = _focal_logit_grad(p, log_p, self.targets(samples), self.config.focal_gamma)

        layers = self.layout.unpack(params)
        grads = np.empty((n, self.layout.size))
        for k in range(len(layers) - 1, -1, -1):
            w_slice, _, b_slice = self.layout.slices[k]
            a_prev = activations[k]
            grads[:, w_slice] = np.einsum("ni,nj->nij", a_prev, dz).reshape(n, -1)
            grads[:, b_slice] = dz
            if k:
                dz = (dz @ layers[k][0].T) * (1.0 - a_prev**2)
        return grads


def sgd_step(params: ParamVector, grad: ParamVector, lr: float) -> ParamVector:
    if params.shape != grad.shape:
        raise InternalError(f"sgd_step length mismatch: params {params.shape} vs grad {grad.shape}")
    if lr < 0:
        raise InternalError(f"learning rate must be non-negative, got {lr}")
    return params - lr * grad
