"""
Dual replay memory.

``ReservoirBuffer`` keeps every stream item with equal probability
capacity/n. ``DiversityBuffer`` greedily keeps samples whose loss gradients
point in different directions: a newcomer is scored by its best cosine
similarity against a few stored samples and, once the buffer is full, only
enters by evicting a high-similarity resident.

Both buffers own a seeded ``numpy`` generator, so a given seed and offer
sequence always yields the same contents.
"""

from __future__ import annotations

import logging
from collections import Counter
from collections.abc import Callable
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Any
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray

from .types import Heatmap
from .types import Sample
from .types import task_of

logger = logging.getLogger("continual.buffers")

INITIAL_SCORE = 0.1

GradFn = Callable[[Sequence[Sample]], NDArray[np.float64]]


@dataclass(frozen=True, eq=False)
class BufferEntry:
    sample: Sample
    teacher_heatmap: Heatmap
    insertion_index: int
    score_q: float | None = None


class Admission(NamedTuple):
    """Outcome of one offer: where the entry went and which slot was contested."""

    admitted: bool
    slot: int | None = None
    candidate: int | None = None
    score: float | None = None


# ═════════════════════════════════════════════════════════════════════════
# Shared plumbing
# ═════════════════════════════════════════════════════════════════════════

class _ReplayBuffer:
    kind = "buffer"

    def __init__(self, capacity: int, rng: np.random.Generator):
        if capacity < 0:
            raise ValueError(f"capacity must be non-negative, got {capacity}")
        self.capacity = int(capacity)
        self.rng = rng
        self.entries: list[BufferEntry] = []
        self.seen_count = 0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def is_full(self) -> bool:
        return len(self.entries) >= self.capacity

    def sample(self, k: int, rng: np.random.Generator) -> list[BufferEntry]:
        """Up to ``k`` distinct entries, uniformly without replacement."""
        k = min(int(k), len(self.entries))
        if k <= 0:
            return []
        picks = rng.choice(len(self.entries), size=k, replace=False)
        return [self.entries[i] for i in picks]

    # -------------------------------------------------------------- state
    def state_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "capacity": self.capacity,
            "seen_count": self.seen_count,
            "entries": list(self.entries),
            "rng_state": self.rng.bit_generator.state,
        }

    def load_state_dict(self, state: dict[str, Any]) -> None:
        self.capacity = int(state["capacity"])
        self.seen_count = int(state["seen_count"])
        self.entries = list(state["entries"])
        self.rng.bit_generator.state = state["rng_state"]


# ═════════════════════════════════════════════════════════════════════════
# Reservoir
# ═════════════════════════════════════════════════════════════════════════

class ReservoirBuffer(_ReplayBuffer):
    kind = "reservoir"

    def offer(self, entry: BufferEntry) -> Admission:
        self.seen_count += 1
        if self.capacity == 0:
            return Admission(False)
        if len(self.entries) < self.capacity:
            self.entries.append(entry)
            return Admission(True, len(self.entries) - 1)

        j = int(self.rng.integers(0, self.seen_count))
        if j < self.capacity:
            self.entries[j] = entry
            logger.debug(
                "continual.buffers action=reservoir_replace slot=%d seen=%d",
                j,
                self.seen_count,
                extra={"step": self.seen_count},
            )
            return Admission(True, j, j)
        return Admission(False)


# ═════════════════════════════════════════════════════════════════════════
# Gradient diversity
# ═════════════════════════════════════════════════════════════════════════

def _unit_rows(grads: NDArray) -> NDArray:
    grads = np.atleast_2d(np.asarray(grads, dtype=np.float64))
    norms = np.linalg.norm(grads, axis=1)
    keep = norms > 0
    return grads[keep] / norms[keep, None]


def diversity_score(grad_new: NDArray, reference_grads: Sequence[NDArray] | NDArray) -> float:
    """Max cosine similarity against the references, plus 1; zero-norm vectors are skipped."""
    g = np.asarray(grad_new, dtype=np.float64)
    g_norm = float(np.linalg.norm(g))
    refs = _unit_rows(reference_grads) if len(reference_grads) else np.zeros((0, g.size))
    if g_norm == 0.0 or refs.shape[0] == 0:
        return INITIAL_SCORE
    cosines = np.clip(refs @ (g / g_norm), -1.0, 1.0)
    return float(cosines.max()) + 1.0


class DiversityBuffer(_ReplayBuffer):
    kind = "diversity"

    def __init__(self, capacity: int, score_batch_size: int, rng: np.random.Generator):
        super().__init__(capacity, rng)
        if score_batch_size < 1:
            raise ValueError(f"score batch size must be >= 1, got {score_batch_size}")
        self.score_batch_size = int(score_batch_size)

    @property
    def scores(self) -> NDArray[np.float64]:
        return np.array([e.score_q for e in self.entries], dtype=np.float64)

    def score(self, sample: Sample, grad_fn: GradFn) -> float:
        """Similarity score of ``sample`` against a random handful of residents."""
        if not self.entries:
            return INITIAL_SCORE
        picks = self.rng.integers(0, len(self.entries), size=self.score_batch_size)
        refs = [self.entries[i].sample for i in np.unique(picks)]
        grads = grad_fn([sample, *refs])
        return diversity_score(grads[0], grads[1:])

    def offer(self, entry: BufferEntry, grad_fn: GradFn) -> Admission:
        if self.capacity == 0:
            self.seen_count += 1
            return Admission(False)
        return self.offer_scored(entry, self.score(entry.sample, grad_fn))

    def offer_scored(self, entry: BufferEntry, q_new: float) -> Admission:
        """Admit an already-scored entry following the two-stage replacement rule."""
        self.seen_count += 1
        if self.capacity == 0:
            return Admission(False, score=q_new)
        scored = BufferEntry(entry.sample, entry.teacher_heatmap, entry.insertion_index, float(q_new))

        # ── Fill phase ───────────────────────────────────────────────────
        if len(self.entries) < self.capacity:
            self.entries.append(scored)
            return Admission(True, len(self.entries) - 1, score=q_new)

        # ── Saturated: too similar to something already stored ──────────
        if q_new >= 1.0:
            return Admission(False, score=q_new)

        # ── Victim draw ∝ q_i, then replace w.p. q_i / (q_i + q_n) ────────
        scores = self.scores
        total = float(scores.sum())
        u = self.rng.random()
        if total > 0.0:
            cdf = np.cumsum(scores)
            victim = int(np.clip(np.searchsorted(cdf, u * total, side="right"), 0, len(scores) - 1))
        else:
            victim = int(u * len(scores))
        q_i = float(scores[victim])
        denom = q_i + q_new
        r = self.rng.random()
        if denom > 0.0 and r < q_i / denom:
            self.entries[victim] = scored
            logger.debug(
                "continual.buffers action=diversity_replace slot=%d q_old=%.4f q_new=%.4f",
                victim,
                q_i,
                q_new,
                extra={"step": self.seen_count},
            )
            return Admission(True, victim, victim, q_new)
        return Admission(False, None, victim, q_new)

    def state_dict(self) -> dict[str, Any]:
        state = super().state_dict()
        state["score_batch_size"] = self.score_batch_size
        return state

    def load_state_dict(self, state: dict[str, Any]) -> None:
        super().load_state_dict(state)
        self.score_batch_size = int(state.get("score_batch_size", self.score_batch_size))


# ═════════════════════════════════════════════════════════════════════════
# Joint sampling & introspection
# ═════════════════════════════════════════════════════════════════════════

def sample_joint(
    res: ReservoirBuffer | None,
    div: DiversityBuffer | None,
    k_r: int,
    k_d: int,
    rng: np.random.Generator,
) -> tuple[list[BufferEntry], list[BufferEntry]]:
    from_res = res.sample(k_r, rng) if res is not None else []
    from_div = div.sample(k_d, rng) if div is not None else []
    return from_res, from_div


def composition(buf: _ReplayBuffer | Sequence[BufferEntry] | None) -> dict[int, int]:
    """Entry count per hidden task id."""
    if buf is None:
        return {}
    entries = buf.entries if isinstance(buf, _ReplayBuffer) else buf
    return dict(sorted(Counter(task_of(e.sample) for e in entries).items()))


def mean_pairwise_cosine(grads: NDArray) -> float:
    """Mean cosine similarity over distinct pairs of non-zero gradients."""
    units = _unit_rows(grads)
    n = units.shape[0]
    if n < 2:
        return float("nan")
    gram = units @ units.T
    return float((gram.sum() - np.trace(gram)) / (n * (n - 1)))


def direction_variance(grads: NDArray) -> float:
    """Spread of gradient directions: 1 − ‖mean unit gradient‖²."""
    units = _unit_rows(grads)
    if units.shape[0] == 0:
        return float("nan")
    mean = units.mean(axis=0)
    return float(1.0 - mean @ mean)
