"""
Online task-free learners.

Every learner consumes the stream one batch at a time and performs exactly
one SGD step on the working parameters per batch. None of them ever reads
a sample's task label.

    VanillaLearner   plain SGD on the incoming batch
    DERLearner       reservoir replay, distilling stored insertion-time heatmaps
    GSSLearner       gradient-diversity replay on ground-truth goals
    AGEMLearner      reservoir replay as a gradient constraint
    DualLSLearner    reservoir + diversity replay, fast/slow EMA teachers

``build_learner`` maps a ``TrainerKindEnum`` to the right class.
"""

from __future__ import annotations

import logging
from abc import ABC
from abc import abstractmethod
from collections.abc import Sequence
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from typing import Any

import numpy as np
from numpy.typing import NDArray

from apps.continual.exceptions import InputError
from apps.continual.exceptions import InternalError
from utilities.enums import LossKindEnum
from utilities.enums import ModelRoleEnum
from utilities.enums import TrainerKindEnum

from .buffers import BufferEntry
from .buffers import DiversityBuffer
from .buffers import ReservoirBuffer
from .buffers import composition
from .buffers import sample_joint
from .model import GoalPredictor
from .model import LossTerm
from .model import sgd_step
from .schemas import BufferBudget
from .schemas import HyperParams
from .types import Heatmap
from .types import ParamVector
from .types import Sample

logger = logging.getLogger("continual.trainer")

# Spawn order of per-run generator streams; init first so every learner
# kind starts from the same weights for a given seed.
_INIT, _LEARNER, _RESERVOIR, _DIVERSITY = range(4)


# ═════════════════════════════════════════════════════════════════════════
# Pure update rules
# ═════════════════════════════════════════════════════════════════════════

def ema_update(target: ParamVector, source: ParamVector, decay: float) -> ParamVector:
    """decay·target + (1 − decay)·source."""
    if target.shape != source.shape:
        raise InternalError(f"ema_update length mismatch: {target.shape} vs {source.shape}")
    if not 0.0 <= decay <= 1.0:
        raise InternalError(f"EMA decay must lie in [0, 1], got {decay}")
    return decay * target + (1.0 - decay) * source


def select_teachers(
    model: GoalPredictor,
    samples: Sequence[Sample],
    theta_f: ParamVector,
    theta_s: ParamVector,
) -> tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """
    Per-sample teacher grids from whichever EMA model has the smaller focal
    loss; ties go to the slow model. Returns ``(teachers, used_fast)``.
    """
    if not samples:
        return np.zeros((0, model.config.n_cells)), np.zeros(0, dtype=bool)
    p_fast, loss_fast = model.sample_losses(theta_f, samples)
    p_slow, loss_slow = model.sample_losses(theta_s, samples)
    used_fast = loss_fast < loss_slow
    return np.where(used_fast[:, None], p_fast, p_slow), used_fast


def select_teacher(model: GoalPredictor, sample: Sample, theta_f: ParamVector, theta_s: ParamVector) -> Heatmap:
    teachers, _ = select_teachers(model, [sample], theta_f, theta_s)
    return model.to_heatmap(teachers[0])


def project_gradient(g: ParamVector, g_ref: ParamVector) -> tuple[ParamVector, bool]:
    """A-GEM projection; returns ``(g_tilde, fired)``. ``g`` is returned untouched when not fired."""
    if g.shape != g_ref.shape:
        raise InternalError(f"projection length mismatch: {g.shape} vs {g_ref.shape}")
    ref_sq = float(g_ref @ g_ref)
    dot = float(g @ g_ref)
    if ref_sq == 0.0 or dot >= 0.0:
        return g, False
    return g - (dot / ref_sq) * g_ref, True


def vanilla_step(model: GoalPredictor, params: ParamVector, batch: Sequence[Sample], lr: float) -> ParamVector:
    return sgd_step(params, model.grad(params, batch), lr)


# ═════════════════════════════════════════════════════════════════════════
# Step trace
# ═════════════════════════════════════════════════════════════════════════

@dataclass
class StepRecord:
    step: int
    stream_loss: float
    reservoir_loss: float = 0.0
    diversity_loss: float = 0.0
    total_loss: float = 0.0
    fast_updated: bool = False
    slow_updated: bool = False
    fast_teachers: int = 0
    slow_teachers: int = 0
    projected: bool = False
    replay_drawn: int = 0
    processed_samples: int = 0
    reservoir_size: int = 0
    diversity_size: int = 0
    draw_composition: dict[int, int] = field(default_factory=dict)
    # Filled in by the harness; learners never see task boundaries.
    task_index: int = 0

    def as_row(self) -> dict[str, Any]:
        row = asdict(self)
        row["draw_composition"] = ";".join(f"{k}:{v}" for k, v in sorted(self.draw_composition.items()))
        return row


# ═════════════════════════════════════════════════════════════════════════
# Learners
# ═════════════════════════════════════════════════════════════════════════

class ContinualLearner(ABC):
    """Working parameters, replay buffers and the bookkeeping every learner shares."""

    kind: TrainerKindEnum

    def __init__(
        self,
        model: GoalPredictor,
        hyper: HyperParams,
        budget: BufferBudget | None = None,
        seed: int = 0,
    ):
        self.model = model
        self.hyper = hyper
        self.budget = budget or BufferBudget(total=0)
        streams = np.random.SeedSequence(seed).spawn(4)
        self.theta_w = model.init_params(np.random.default_rng(streams[_INIT]))
        self.rng = np.random.default_rng(streams[_LEARNER])

        res_cap, div_cap = self.budget.split(self.kind)
        self.reservoir = self._make_reservoir(res_cap, streams[_RESERVOIR])
        self.diversity = self._make_diversity(div_cap, streams[_DIVERSITY])

        self.step_count = 0
        self.seen_samples = 0
        self.processed_samples = 0

    def _make_reservoir(self, capacity: int, seq: np.random.SeedSequence) -> ReservoirBuffer | None:
        return None

    def _make_diversity(self, capacity: int, seq: np.random.SeedSequence) -> DiversityBuffer | None:
        return None

    # -------------------------------------------------------------- stepping
    def step(self, batch: Sequence[Sample]) -> StepRecord:
        if not batch:
            raise InputError("learner step needs a non-empty batch")
        self.step_count += 1
        record = self._step(list(batch))
        self.seen_samples += len(batch)
        self.processed_samples += len(batch) + record.replay_drawn
        record.processed_samples = self.processed_samples
        record.reservoir_size = len(self.reservoir) if self.reservoir is not None else 0
        record.diversity_size = len(self.diversity) if self.diversity is not None else 0
        logger.debug(
            "continual.trainer kind=%s action=step step=%d loss=%.5f replay=%d",
            self.kind.value,
            self.step_count,
            record.total_loss,
            record.replay_drawn,
            extra={"step": self.step_count},
        )
        return record

    @abstractmethod
    def _step(self, batch: list[Sample]) -> StepRecord: ...

    def _entries_for(self, batch: list[Sample], probs: NDArray) -> list[BufferEntry]:
        entries = []
        for offset, (sample, p) in enumerate(zip(batch, probs)):
            entries.append(BufferEntry(sample, self.model.to_heatmap(p), self.seen_samples + offset + 1))
        return entries

    def _diversity_grads(self, samples: Sequence[Sample]) -> NDArray:
        return self.model.per_sample_grads(self.theta_w, samples)

    # ----------------------------------------------------------- evaluation
    def evaluation_params(self, role: ModelRoleEnum = ModelRoleEnum.SLOW) -> ParamVector:
        """Baselines only have working weights."""
        return self.theta_w

    def buffers(self) -> dict[str, ReservoirBuffer | DiversityBuffer]:
        found: dict[str, ReservoirBuffer | DiversityBuffer] = {}
        if self.reservoir is not None:
            found["reservoir"] = self.reservoir
        if self.diversity is not None:
            found["diversity"] = self.diversity
        return found

    # ---------------------------------------------------------------- state
    def params(self) -> dict[str, ParamVector]:
        return {ModelRoleEnum.WORKING.value: self.theta_w}

    def state_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "params": {role: theta.copy() for role, theta in self.params().items()},
            "rng_state": self.rng.bit_generator.state,
            "step_count": self.step_count,
            "seen_samples": self.seen_samples,
            "processed_samples": self.processed_samples,
            "buffers": {name: buf.state_dict() for name, buf in self.buffers().items()},
        }

    def load_state_dict(self, state: dict[str, Any]) -> None:
        if state["kind"] != self.kind.value:
            raise InternalError(f"state belongs to {state['kind']}, not {self.kind.value}")
        for role, theta in state["params"].items():
            setattr(self, f"theta_{role[0]}", np.array(theta, dtype=np.float64))
        self.rng.bit_generator.state = state["rng_state"]
        self.step_count = int(state["step_count"])
        self.seen_samples = int(state["seen_samples"])
        self.processed_samples = int(state["processed_samples"])
        for name, buf in self.buffers().items():
            buf.load_state_dict(state["buffers"][name])


class VanillaLearner(ContinualLearner):
    kind = TrainerKindEnum.VANILLA

    def _step(self, batch: list[Sample]) -> StepRecord:
        result = self.model.objective(self.theta_w, [LossTerm(LossKindEnum.FOCAL, batch)])
        self.theta_w = sgd_step(self.theta_w, result.grad, self.hyper.lr)
        return StepRecord(self.step_count, result.loss, total_loss=result.loss)


class _ReservoirBacked(ContinualLearner):
    def _make_reservoir(self, capacity, seq):
        return ReservoirBuffer(capacity, np.random.default_rng(seq))


class DERLearner(_ReservoirBacked):
    kind = TrainerKindEnum.DER

    def _step(self, batch: list[Sample]) -> StepRecord:
        drawn = self.reservoir.sample(self.hyper.replay_reservoir, self.rng)
        replay = [e.sample for e in drawn]
        stored = np.stack([e.teacher_heatmap.values.reshape(-1) for e in drawn]) if drawn else None
        probs = self.model.probabilities(self.theta_w, batch)

        result = self.model.objective(
            self.theta_w,
            [
                LossTerm(LossKindEnum.FOCAL, batch),
                LossTerm(LossKindEnum.KL, replay, self.hyper.alpha_reservoir, stored),
                LossTerm(LossKindEnum.FOCAL, replay, self.hyper.beta_reservoir),
            ],
        )
        self.theta_w = sgd_step(self.theta_w, result.grad, self.hyper.lr)

        for entry in self._entries_for(batch, probs):
            self.reservoir.offer(entry)

        stream, kl, ce = result.term_losses
        return StepRecord(
            self.step_count,
            stream,
            reservoir_loss=kl + ce,
            total_loss=result.loss,
            replay_drawn=len(drawn),
            draw_composition=composition(drawn),
        )


class AGEMLearner(_ReservoirBacked):
    kind = TrainerKindEnum.AGEM

    def _step(self, batch: list[Sample]) -> StepRecord:
        drawn = self.reservoir.sample(self.hyper.replay_reservoir, self.rng)
        probs = self.model.probabilities(self.theta_w, batch)
        result = self.model.objective(self.theta_w, [LossTerm(LossKindEnum.FOCAL, batch)])
        g, projected = result.grad, False
        ref_loss = 0.0
        if drawn:
            ref = self.model.objective(self.theta_w, [LossTerm(LossKindEnum.FOCAL, [e.sample for e in drawn])])
            ref_loss = ref.loss
            g, projected = project_gradient(g, ref.grad)
        self.theta_w = sgd_step(self.theta_w, g, self.hyper.lr)

        for entry in self._entries_for(batch, probs):
            self.reservoir.offer(entry)

        return StepRecord(
            self.step_count,
            result.loss,
            reservoir_loss=ref_loss,
            total_loss=result.loss,
            projected=projected,
            replay_drawn=len(drawn),
            draw_composition=composition(drawn),
        )


class GSSLearner(ContinualLearner):
    kind = TrainerKindEnum.GSS

    def _make_diversity(self, capacity, seq):
        return DiversityBuffer(capacity, self.budget.score_batch, np.random.default_rng(seq))

    def _step(self, batch: list[Sample]) -> StepRecord:
        drawn = self.diversity.sample(self.hyper.replay_diversity, self.rng)
        probs = self.model.probabilities(self.theta_w, batch)
        result = self.model.objective(
            self.theta_w,
            [
                LossTerm(LossKindEnum.FOCAL, batch),
                LossTerm(LossKindEnum.FOCAL, [e.sample for e in drawn], self.hyper.beta_diversity),
            ],
        )
        self.theta_w = sgd_step(self.theta_w, result.grad, self.hyper.lr)

        for entry in self._entries_for(batch, probs):
            self.diversity.offer(entry, self._diversity_grads)

        stream, replay = result.term_losses
        return StepRecord(
            self.step_count,
            stream,
            diversity_loss=replay,
            total_loss=result.loss,
            replay_drawn=len(drawn),
            draw_composition=composition(drawn),
        )


class DualLSLearner(ContinualLearner):
    """
    Working model trained on stream + dual replay; fast and slow models are
    stochastic EMA shadows of it and act as per-sample distillation teachers.
    """

    kind = TrainerKindEnum.DUAL_LS

    def __init__(self, model, hyper, budget=None, seed=0):
        super().__init__(model, hyper, budget, seed)
        self.theta_f = self.theta_w.copy()
        self.theta_s = self.theta_w.copy()

    def _make_reservoir(self, capacity, seq):
        return ReservoirBuffer(capacity, np.random.default_rng(seq))

    def _make_diversity(self, capacity, seq):
        return DiversityBuffer(capacity, self.budget.score_batch, np.random.default_rng(seq))

    def _step(self, batch: list[Sample]) -> StepRecord:
        h = self.hyper

        # ── Step 1: replay draw ──────────────────────────────────────────
        from_res, from_div = sample_joint(self.reservoir, self.diversity, h.replay_reservoir, h.replay_diversity, self.rng)
        res_samples = [e.sample for e in from_res]
        div_samples = [e.sample for e in from_div]

        # ── Step 2: teacher per replay sample ────────────────────────────
        teachers, used_fast = select_teachers(self.model, res_samples + div_samples, self.theta_f, self.theta_s)
        res_teachers, div_teachers = teachers[: len(res_samples)], teachers[len(res_samples):]

        # ── Step 3: objective and SGD on the working model ───────────────
        probs = self.model.probabilities(self.theta_w, batch)
        result = self.model.objective(
            self.theta_w,
            [
                LossTerm(LossKindEnum.FOCAL, batch),
                LossTerm(LossKindEnum.KL, res_samples, h.alpha_reservoir, res_teachers),
                LossTerm(LossKindEnum.FOCAL, res_samples, h.beta_reservoir),
                LossTerm(LossKindEnum.KL, div_samples, h.alpha_diversity, div_teachers),
                LossTerm(LossKindEnum.FOCAL, div_samples, h.beta_diversity),
            ],
        )
        self.theta_w = sgd_step(self.theta_w, result.grad, h.lr)

        # ── Step 4: stochastic EMA of fast / slow ────────────────────────
        u_fast, u_slow = self.rng.random(2)
        fast_updated = bool(u_fast < h.fast_update_prob)
        slow_updated = bool(u_slow < h.slow_update_prob)
        if fast_updated:
            self.theta_f = ema_update(self.theta_f, self.theta_w, h.fast_decay)
        if slow_updated:
            self.theta_s = ema_update(self.theta_s, self.theta_w, h.slow_decay)

        # ── Step 5: buffer maintenance ───────────────────────────────────
        for entry in self._entries_for(batch, probs):
            self.reservoir.offer(entry)
            self.diversity.offer(entry, self._diversity_grads)

        stream, kl_r, ce_r, kl_d, ce_d = result.term_losses
        n_fast = int(used_fast.sum())
        return StepRecord(
            self.step_count,
            stream,
            reservoir_loss=kl_r + ce_r,
            diversity_loss=kl_d + ce_d,
            total_loss=result.loss,
            fast_updated=fast_updated,
            slow_updated=slow_updated,
            fast_teachers=n_fast,
            slow_teachers=len(used_fast) - n_fast,
            replay_drawn=len(from_res) + len(from_div),
            draw_composition=composition(from_res + from_div),
        )

    def evaluation_params(self, role: ModelRoleEnum = ModelRoleEnum.SLOW) -> ParamVector:
        return {
            ModelRoleEnum.WORKING: self.theta_w,
            ModelRoleEnum.FAST: self.theta_f,
            ModelRoleEnum.SLOW: self.theta_s,
        }[ModelRoleEnum(role)]

    def params(self) -> dict[str, ParamVector]:
        return {
            ModelRoleEnum.WORKING.value: self.theta_w,
            ModelRoleEnum.FAST.value: self.theta_f,
            ModelRoleEnum.SLOW.value: self.theta_s,
        }


LEARNERS: dict[TrainerKindEnum, type[ContinualLearner]] = {
    TrainerKindEnum.VANILLA: VanillaLearner,
    TrainerKindEnum.DER: DERLearner,
    TrainerKindEnum.GSS: GSSLearner,
    TrainerKindEnum.AGEM: AGEMLearner,
    TrainerKindEnum.DUAL_LS: DualLSLearner,
}


def build_learner(
    kind: TrainerKindEnum | str,
    model: GoalPredictor,
    hyper: HyperParams,
    budget: BufferBudget | None = None,
    seed: int = 0,
) -> ContinualLearner:
    return LEARNERS[TrainerKindEnum(kind)](model, hyper, budget, seed)
