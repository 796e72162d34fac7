"""
Versioned msgpack checkpoints of a ``StreamRunner``.

Layout::

    {"format": "dualls-checkpoint", "version": 1, "payload": {...}}

Arrays are packed as (dtype, shape, raw bytes) so parameter vectors
round-trip bitwise. Generator states carry 128-bit integers and are
stored as JSON text.
"""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any

import msgpack
import numpy as np

from apps.continual.exceptions import CheckpointError

from .buffers import BufferEntry
from .model import GoalPredictor
from .schemas import BufferBudget
from .schemas import CsvSchema
from .schemas import HyperParams
from .schemas import PredictorConfig
from .schemas import TaskSpec
from .types import Heatmap
from .types import Sample
from .types import task_of

logger = logging.getLogger("continual.checkpoint")

FORMAT = "dualls-checkpoint"
VERSION = 1

_TAG = "__t__"


# ── Encoding ─────────────────────────────────────────────────────────────

def _encode(obj: Any) -> Any:
    if isinstance(obj, np.ndarray):
        return {_TAG: "nd", "dtype": obj.dtype.str, "shape": list(obj.shape), "data": obj.tobytes()}
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Sample):
        return {
            _TAG: "sample",
            "dynamic": obj.dynamic_features,
            "static": obj.static_features,
            "goal": obj.goal,
            "speed": obj.speed,
            "task": task_of(obj),
        }
    if isinstance(obj, Heatmap):
        return {_TAG: "heatmap", "values": obj.values, "origin": list(obj.grid_origin), "cell": obj.cell_size}
    if isinstance(obj, BufferEntry):
        return {
            _TAG: "entry",
            "sample": obj.sample,
            "teacher": obj.teacher_heatmap,
            "index": obj.insertion_index,
            "score": obj.score_q,
        }
    raise TypeError(f"cannot checkpoint object of type {type(obj).__name__}")


def _decode(obj: dict) -> Any:
    tag = obj.get(_TAG)
    if tag is None:
        return obj
    if tag == "nd":
        return np.frombuffer(obj["data"], dtype=np.dtype(obj["dtype"])).reshape(obj["shape"]).copy()
    if tag == "sample":
        return Sample(obj["dynamic"], obj["static"], obj["goal"], obj["speed"], _task_id=obj["task"])
    if tag == "heatmap":
        return Heatmap(obj["values"], tuple(obj["origin"]), obj["cell"])
    if tag == "entry":
        return BufferEntry(obj["sample"], obj["teacher"], obj["index"], obj["score"])
    if tag == "rng":
        return json.loads(obj["json"])
    raise CheckpointError(f"unknown checkpoint record type {tag!r}")


def _wrap_rng_states(obj: Any) -> Any:
    """Replace every ``*rng_state`` value by its JSON text."""
    if isinstance(obj, dict):
        return {
            k: ({_TAG: "rng", "json": json.dumps(v)} if str(k).endswith("rng_state") else _wrap_rng_states(v))
            for k, v in obj.items()
        }
    if isinstance(obj, list):
        return [_wrap_rng_states(v) for v in obj]
    return obj


# ── Save / load ──────────────────────────────────────────────────────────

def save_checkpoint(payload: dict[str, Any], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = msgpack.packb(
        {"format": FORMAT, "version": VERSION, "payload": _wrap_rng_states(payload)},
        default=_encode,
        use_bin_type=True,
    )
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    logger.info("continual.checkpoint action=save path=%s bytes=%d", path, len(blob))
    return path


def load_checkpoint(path: str | Path) -> dict[str, Any]:
    """Validated payload of a checkpoint file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        doc = msgpack.unpackb(raw, object_hook=_decode, raw=False, strict_map_key=False)
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"checkpoint {path} is corrupt: {exc}") from exc

    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointError(
            f"checkpoint {path} has version {doc.get('version')}, this build reads version {VERSION}",
        )
    payload = doc.get("payload")
    if not isinstance(payload, dict) or "runner" not in payload:
        raise CheckpointError(f"checkpoint {path} has no runner state")
    return payload


def save_runner(runner, path: str | Path) -> Path:
    learner = runner.learner
    payload = {
        "kind": learner.kind.value,
        "predictor": learner.model.config.model_dump(mode="json"),
        "hyper": learner.hyper.model_dump(mode="json"),
        "budget": learner.budget.model_dump(mode="json"),
        "stream": {
            "seed": runner.stream.seed,
            "tasks": [t.model_dump(mode="json") for t in runner.stream.tasks],
            "csv_schema": runner.stream.csv_schema.model_dump(mode="json"),
        },
        "runner": runner.state_dict(),
    }
    return save_checkpoint(payload, path)


def load_runner(
    path: str | Path,
    stream=None,
    predictor: PredictorConfig | None = None,
    hyper: HyperParams | None = None,
    budget: BufferBudget | None = None,
):
    """Rebuild a runner from disk; collaborators not passed in come from the checkpoint."""
    from .harness import StreamRunner
    from .stream import TaskStream
    from .trainer import build_learner

    payload = load_checkpoint(path)
    try:
        predictor = predictor or PredictorConfig.model_validate(payload["predictor"])
        hyper = hyper or HyperParams.model_validate(payload["hyper"])
        budget = budget or BufferBudget.model_validate(payload["budget"])
        state = payload["runner"]
        if stream is None:
            spec = payload["stream"]
            stream = TaskStream(
                [TaskSpec.model_validate(t) for t in spec["tasks"]],
                seed=spec["seed"],
                predictor=predictor,
                csv_schema=CsvSchema.model_validate(spec["csv_schema"]),
            )
        learner = build_learner(payload["kind"], GoalPredictor(predictor), hyper, budget, state["seed"])
        runner = StreamRunner(
            learner,
            stream,
            seed=state["seed"],
            goals_k=state["goals_k"],
            extraction=state["extraction"],
            evaluation_role=state["evaluation_role"],
        )
        runner.load_state_dict(state)
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} is incomplete: {exc}") from exc

    logger.info(
        "continual.checkpoint action=restore path=%s kind=%s task=%d batch=%d",
        path,
        payload["kind"],
        runner.task_index,
        runner.batch_offset,
    )
    return runner


def describe_buffers(payload: dict[str, Any]) -> list[dict[str, Any]]:
    """Size, capacity, composition and score statistics of each stored buffer."""
    rows = []
    for name, state in payload["runner"]["learner"]["buffers"].items():
        entries: list[BufferEntry] = state["entries"]
        counts: dict[int, int] = {}
        for entry in entries:
            counts[task_of(entry.sample)] = counts.get(task_of(entry.sample), 0) + 1
        scores = np.array([e.score_q for e in entries if e.score_q is not None], dtype=np.float64)
        rows.append(
            {
                "buffer": name,
                "size": len(entries),
                "capacity": state["capacity"],
                "seen": state["seen_count"],
                "composition": dict(sorted(counts.items())),
                "score_min": float(scores.min()) if scores.size else None,
                "score_mean": float(scores.mean()) if scores.size else None,
                "score_max": float(scores.max()) if scores.size else None,
            },
        )
    return rows
