"""Desk-scale lab for inversion and text-driven editing of conditional
rectified-flow models over engineered synthetic distributions."""

from .autodiff import AdamState, StepLossSpec, step_loss_and_grad
from .checkpoint import (
    load_checkpoint,
    load_null_schedule,
    save_checkpoint,
    save_null_schedule,
)
from .core import (
    Condition,
    TimeGrid,
    VelocityField,
    embed_condition,
    eval_velocity,
    init_field,
)
from .dataset import Anchor, DatasetSpec, default_spec, sample_pair
from .diagnostics import (
    DiversityReport,
    avg_pairwise_cosine_distance,
    diversity_ratio,
    l1_reconstruction,
    norm_trace_stats,
    run_prompt_type_experiment,
    run_reconstruction_table,
    run_sink_experiment,
)
from .editing import EditRequest, EditResult, edit
from .nti import NTIConfig, NullSchedule, nti_optimize
from .sampler import GuidanceConfig, Trajectory, euler_step, guided_velocity, invert, sample
from .training import Checkpoint, TrainConfig, flow_matching_loss, train

__all__ = [name for name in dir() if not name.startswith("_")]
