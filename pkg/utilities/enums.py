from enum import Enum


class TrainerKindEnum(Enum):
    """Online learners runnable under the single-pass task-free protocol."""

    DUAL_LS = "dualls"
    VANILLA = "vanilla"
    DER = "der"
    GSS = "gss"
    AGEM = "agem"


class ModelRoleEnum(Enum):
    """Parameter sets kept by a learner."""

    WORKING = "working"
    FAST = "fast"
    SLOW = "slow"


class MetricEnum(Enum):
    FDE = "fde"
    MR = "mr"


class LossKindEnum(Enum):
    FOCAL = "focal"
    KL = "kl"


class GoalExtractionEnum(Enum):
    """How K goals are read off a heatmap."""

    TOP_K = "top_k"
    SAMPLE = "sample"


class PlotKindEnum(Enum):
    TASK_CURVES = "task_curves"
    ERROR_MATRIX = "error_matrix"
    BUFFER_COMPOSITION = "buffer_composition"
    LOSS_TRACE = "loss_trace"


class RunStatusEnum(Enum):
    COMPLETED = "completed"
    FAILED = "failed"
