"""Text-driven editing: unconditional inversion, optional null optimization,
then resampling under the edit condition with the optimized schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EMPTY_TOKEN
from .dataset import DatasetSpec
from .errors import ConfigError, LatentExplosionError
from .nti import NTIConfig, NullSchedule, nti_optimize
from .sampler import GuidanceConfig, Trajectory, invert, sample
from .training import Checkpoint


@dataclass(frozen=True)
class EditRequest:
    source: np.ndarray
    edit_token: int
    use_nti: bool = True
    guidance: GuidanceConfig = GuidanceConfig()
    nti: NTIConfig = NTIConfig()
    seed: int = 0

    def __post_init__(self):
        src = np.asarray(self.source, dtype=np.float64)
        if not np.all(np.isfinite(src)):
            raise ConfigError("source latent must be finite")
        object.__setattr__(self, "source", src)


@dataclass(frozen=True)
class EditResult:
    edited: np.ndarray
    reconstruction: np.ndarray
    inversion_trajectory: Trajectory
    edited_trajectory: Trajectory
    reconstruction_trajectory: Trajectory
    reconstruction_l1: float
    source_mode: str
    target_mode: str | None
    edited_mode: str
    implausible: bool
    is_reconstruction: bool
    structure_distance: float
    null_schedule: NullSchedule | None


def nearest_mode(spec: DatasetSpec, z: np.ndarray) -> tuple[str, np.ndarray]:
    """Label and mean of the dataset mode closest to z."""
    best_label, best_mode, best_dist = "", None, np.inf
    for anchor_name, token, mode in spec.all_modes():
        dist = float(np.linalg.norm(z - mode))
        if dist < best_dist:
            best_label, best_mode, best_dist = f"{anchor_name}/{token}", mode, dist
    return best_label, best_mode


def edit(ckpt: Checkpoint, request: EditRequest) -> EditResult:
    """Run the full pipeline; deterministic for a fixed (checkpoint, request).

    An edit token of 0 is a reconstruction request: the edited branch then
    samples under the empty condition and (without NTI) is bitwise identical
    to the reconstruction branch.
    """
    field, spec = ckpt.field, ckpt.spec
    empty = ckpt.condition(EMPTY_TOKEN)
    try:
        inversion = invert(field, request.source, empty, request.guidance)
    except LatentExplosionError as exc:
        raise LatentExplosionError(exc.step, f"edit/inversion:{exc.direction}", exc.limit) from exc
    z1 = inversion.final

    schedule = None
    if request.use_nti:
        schedule, recon, recon_traj = nti_optimize(field, inversion, empty, request.nti)
    else:
        recon_traj = sample(field, z1, empty, request.guidance)
        recon = recon_traj.final

    edit_cond = ckpt.condition(request.edit_token)
    try:
        edited_traj = sample(field, z1, edit_cond, request.guidance, schedule)
    except LatentExplosionError as exc:
        raise LatentExplosionError(exc.step, f"edit/resample:{exc.direction}", exc.limit) from exc
    edited = edited_traj.final

    source_label, source_mu = nearest_mode(spec, request.source)
    edited_label, _ = nearest_mode(spec, edited)
    trained = request.edit_token in spec.trained_tokens()
    if trained:
        target_mu = spec.mode_of(request.edit_token)
        target_label = f"{spec.anchor_of(request.edit_token).name}/{request.edit_token}"
    else:
        target_mu, target_label = None, None

    # Pose-preservation proxy: distance from the source once the shift along
    # the source->target mode offset is projected out.
    offset = edited - request.source
    if target_mu is not None and not np.array_equal(target_mu, source_mu):
        axis = target_mu - source_mu
        axis = axis / np.linalg.norm(axis)
        offset = offset - np.dot(offset, axis) * axis
    structure_distance = float(np.linalg.norm(offset))

    is_reconstruction = request.edit_token == EMPTY_TOKEN
    implausible = (not is_reconstruction) and edited_label not in {source_label, target_label}

    return EditResult(
        edited=edited,
        reconstruction=recon,
        inversion_trajectory=inversion,
        edited_trajectory=edited_traj,
        reconstruction_trajectory=recon_traj,
        reconstruction_l1=float(np.mean(np.abs(recon - request.source))),
        source_mode=source_label,
        target_mode=target_label,
        edited_mode=edited_label,
        implausible=implausible,
        is_reconstruction=is_reconstruction,
        structure_distance=structure_distance,
        null_schedule=schedule,
    )


def edit_result_json(request: EditRequest, result: EditResult) -> dict:
    """JSON-serializable record: request echo, metrics, classification, flags."""
    return {
        "request": {
            "edit_token": request.edit_token,
            "use_nti": request.use_nti,
            "guidance": request.guidance.guidance,
            "steps": request.guidance.steps,
            "inner_steps": request.nti.inner_steps,
            "nti_lr": request.nti.lr,
            "seed": request.seed,
        },
        "reconstruction_l1": result.reconstruction_l1,
        "structure_distance": result.structure_distance,
        "source_mode": result.source_mode,
        "target_mode": result.target_mode,
        "edited_mode": result.edited_mode,
        "implausible": result.implausible,
        "is_reconstruction": result.is_reconstruction,
        "edited_latent": [float(x) for x in result.edited],
        "reconstruction_latent": [float(x) for x in result.reconstruction],
    }
