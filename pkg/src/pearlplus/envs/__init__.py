from .base import MPH, EnvError, StepResult, TaskEnv, TaskSpec
from .merge import (
    ACCEL,
    ACTION_NAMES,
    CRUISE,
    DECEL,
    LEFT,
    RIGHT,
    HighwayMergeEnv,
    MergeConfig,
    RewardConfig,
    merge_reward,
)
from .point import PointConfig, PointVelocityEnv
from .tasks import (
    MergeTaskRanges,
    make_env,
    read_trace_csv,
    sample_task,
    sample_tasks,
    trace_row,
    write_trace_csv,
)
from .traffic import (
    HidasDecision,
    HidasParams,
    IdmParams,
    braking_between,
    classify_risk,
    hidas_decision,
    hidas_quantities,
    idm_accel,
    min_braking,
)

__all__ = [
    "ACCEL", "ACTION_NAMES", "CRUISE", "DECEL", "LEFT", "RIGHT", "MPH",
    "EnvError", "HidasDecision", "HidasParams", "HighwayMergeEnv", "IdmParams",
    "MergeConfig", "MergeTaskRanges", "PointConfig", "PointVelocityEnv",
    "RewardConfig", "StepResult", "TaskEnv", "TaskSpec",
    "braking_between", "classify_risk", "hidas_decision", "hidas_quantities",
    "idm_accel", "make_env", "merge_reward", "min_braking", "read_trace_csv",
    "sample_task", "sample_tasks", "trace_row", "write_trace_csv",
]
