"""
Centralized defaults for the continual-learning engine.

Every tunable is sourced from Django settings (``CONTINUAL_CONFIG``) with
defaults so experiments run without any settings entry. Experiment files
override these per run; see ``schemas.py``.

Usage::

    from apps.continual.logic.config import cl_cfg
    lr = cl_cfg("LEARNING_RATE")
"""

from django.conf import settings

_DEFAULTS = {
    # ── Predictor ────────────────────────────────────────────────────
    "GRID_L": 16,
    "GRID_W": 16,
    "CELL_SIZE": 4.0,                # metres per cell → 64 m × 64 m window
    "HIDDEN_WIDTHS": (64, 64),
    "FOCAL_GAMMA": 2.0,
    "TARGET_SIGMA": 1.0,             # Gaussian splat width, in cells
    "KL_FLOOR": 1e-8,
    "INIT_SCALE": 1.0,               # weight init std multiplier (× 1/sqrt(fan_in))

    # ── Feature layout ───────────────────────────────────────────────
    "N_AGENTS": 4,                   # d_v
    "AGENT_FEATURES": 7,             # d_s: x, y, vx, vy, dx_hist, dy_hist, present
    "MAP_FEATURES": 8,               # d_e

    # ── Working-model optimisation ───────────────────────────────────
    "LEARNING_RATE": 1e-2,
    "STREAM_BATCH": 8,
    "REPLAY_RESERVOIR": 8,           # k_r
    "REPLAY_DIVERSITY": 8,           # k_d

    # ── Long/short-term models ───────────────────────────────────────
    "FAST_DECAY": 0.9,               # α_F
    "SLOW_DECAY": 0.95,              # α_S
    "FAST_UPDATE_PROB": 0.9,         # p_F
    "SLOW_UPDATE_PROB": 0.1,         # p_S
    "EVALUATION_ROLE": "slow",

    # ── Replay loss weights ──────────────────────────────────────────
    "ALPHA_RESERVOIR": 0.5,          # α_1
    "BETA_RESERVOIR": 0.5,           # β_1
    "ALPHA_DIVERSITY": 0.5,          # α_2
    "BETA_DIVERSITY": 0.5,           # β_2

    # ── Buffers ──────────────────────────────────────────────────────
    "BUFFER_BUDGET": 1000,
    "RESERVOIR_SHARE": 0.5,
    "SCORE_BATCH": 8,                # B in the diversity score
    "ALLOWED_BUFFER_BUDGETS": (500, 1000, 2000, 4000),
    "MAX_BUDGET_FRACTION": 0.5,      # budget must stay below this share of Σ n_train

    # ── Evaluation ───────────────────────────────────────────────────
    "GOALS_K": 6,
    "GOAL_EXTRACTION": "top_k",
    "LATERAL_HALF_WIDTH": 1.0,       # metres
    "INTROSPECTION_SAMPLE": 64,      # buffer entries scored at each task boundary

    # ── Synthetic benchmark ──────────────────────────────────────────
    "SYNTHETIC_TASKS": 8,
    "SYNTHETIC_TRAIN": 2000,
    "SYNTHETIC_TEST": 500,
    "HISTORY_SECONDS": 1.0,
    "HORIZON_SECONDS": 3.0,

    # ── CSV ingestion ────────────────────────────────────────────────
    "CSV_FRAME_RATE_HZ": 10,
    "CSV_STRIDE_FRAMES": 1,

    # ── Orchestration ────────────────────────────────────────────────
    "WORKERS": 1,
    "JOINT_EPOCHS": 1,

    # ── Observability ────────────────────────────────────────────────
    "ENABLE_TRAINER_LOGGING": True,
    "TRACE_LOG_EVERY": 100,
}


def cl_cfg(key: str):
    """
    Return ``settings.CONTINUAL_CONFIG[key]`` if present,
    otherwise fall back to the built-in default.
    """
    overrides = getattr(settings, "CONTINUAL_CONFIG", {})
    try:
        return overrides[key]
    except KeyError:
        return _DEFAULTS[key]
