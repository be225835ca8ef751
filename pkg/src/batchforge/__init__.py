"""batchforge: deterministic multi-scale batch schedules, sample filtering,
and training-cost accounting."""

from .analysis import (
    CostReport,
    MemoryProxy,
    UpdateCount,
    UpdateSimulation,
    compare_strategies,
    count_updates,
    input_memory_proxy,
    simulate_updates,
)
from .core import (
    BatchRounding,
    ConfigValidationError,
    Registry,
    Resolution,
    ResolutionSet,
    SamplerConfig,
    Strategy,
    ensure_valid,
    lookup_strategy,
    register_strategy,
    validate_config,
)
from .presets import load_preset, preset_names
from .rng import SeededRng, StreamKey, rng_draw_choice
from .samplers import (
    BatchPlan,
    EpochSchedule,
    VideoClipSpec,
    plan_epoch,
    plan_msc_fbs,
    plan_msc_vbs,
    plan_ssc_fbs,
    plan_video_vbs,
    scaled_batch_size,
    shard_for_rank,
)
from .set_training import SetConfig, SetState
from .trainer import (
    PooledLinearModel,
    RunReport,
    TrainerConfig,
    cosine_lr,
    ema_update,
    label_smoothed_ce,
    make_synthetic_task,
    sgd_momentum_step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BatchPlan",
    "BatchRounding",
    "ConfigValidationError",
    "CostReport",
    "EpochSchedule",
    "MemoryProxy",
    "PooledLinearModel",
    "Registry",
    "Resolution",
    "ResolutionSet",
    "RunReport",
    "SamplerConfig",
    "SeededRng",
    "SetConfig",
    "SetState",
    "Strategy",
    "StreamKey",
    "TrainerConfig",
    "UpdateCount",
    "UpdateSimulation",
    "VideoClipSpec",
    "compare_strategies",
    "cosine_lr",
    "count_updates",
    "ema_update",
    "ensure_valid",
    "input_memory_proxy",
    "label_smoothed_ce",
    "load_preset",
    "lookup_strategy",
    "make_synthetic_task",
    "plan_epoch",
    "plan_msc_fbs",
    "plan_msc_vbs",
    "plan_ssc_fbs",
    "plan_video_vbs",
    "preset_names",
    "register_strategy",
    "rng_draw_choice",
    "scaled_batch_size",
    "sgd_momentum_step",
    "shard_for_rank",
    "simulate_updates",
    "train",
    "validate_config",
]
