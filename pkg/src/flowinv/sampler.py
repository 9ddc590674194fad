"""CFG-guided Euler integration in both directions, with trajectory recording.

Inversion integrates 0 -> 1 (data to noise), sampling 1 -> 0. Both directions
share one uniform grid (the sampling grid is the reversed inversion grid
bitwise), each step evaluates the guided velocity at the current point, and
every trajectory records the dimension-normalized velocity norm alongside the
latent, which is the raw material for the OOD diagnostics.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .core import (
    BACKWARD,
    EMPTY_TOKEN,
    FORWARD,
    Condition,
    TimeGrid,
    VelocityField,
    forward_input,
    mlp_forward,
)
from .errors import ConfigError, LatentExplosionError, ShapeMismatchError

EXPLOSION_LIMIT = 1e6


@dataclass(frozen=True)
class GuidanceConfig:
    guidance: float = 5.0
    steps: int = 50

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if not np.isfinite(self.guidance):
            raise ConfigError("guidance scale must be finite")


@dataclass(frozen=True)
class Trajectory:
    """N+1 records (t_i, z_i, normalized ||v_i||); v_i is the guided velocity
    evaluated at record i (records 0..N-1 are the velocities the steps used).

    final_compensation is the integrator's accumulated rounding error at the
    endpoint (see _dd_add); feeding it back into the opposite direction makes
    constant-field round trips bit-exact.
    """

    direction: str
    times: np.ndarray
    latents: np.ndarray
    velocity_norms: np.ndarray
    final_compensation: np.ndarray | None = None

    @property
    def final(self) -> np.ndarray:
        return self.latents[-1]

    @property
    def n_steps(self) -> int:
        return self.times.size - 1


def guided_velocity(
    field: VelocityField,
    z: np.ndarray,
    t: float,
    cond: Condition,
    uncond_embedding: np.ndarray | None = None,
    guidance: float = 5.0,
) -> np.ndarray:
    """v_uncond + w * (v_cond - v_uncond); exactly two network evaluations.

    The unconditional branch runs on table row 0 unless an optimized null
    embedding is supplied.
    """
    uncond = field.embeddings[EMPTY_TOKEN] if uncond_embedding is None else uncond_embedding
    v_u = mlp_forward(field, forward_input(field, z, t, uncond))
    v_c = mlp_forward(field, forward_input(field, z, t, cond.embedding))
    return v_u + guidance * (v_c - v_u)


def euler_step(z: np.ndarray, t: float, t_next: float, v: np.ndarray) -> np.ndarray:
    """z + (t_next - t) * v; the signed dt covers both directions."""
    return z + (t_next - t) * v


def _dd_add(hi: np.ndarray, lo: np.ndarray, delta: np.ndarray):
    """Double-double accumulation: (hi, lo) <- (hi + lo) + delta.

    Knuth TwoSum keeps the rounding error of every Euler update, so hi + lo
    tracks the exact running sum to ~2^-105 relative error. A forward pass
    followed by the mirrored backward pass then cancels term by term, which is
    what makes constant-field inversion round trips bitwise exact.
    """
    s = hi + delta
    bb = s - hi
    err = (hi - (s - bb)) + (delta - bb)
    v = lo + err
    hi2 = s + v
    bb2 = hi2 - s
    lo2 = (s - (hi2 - bb2)) + (v - bb2)
    return hi2, lo2


def _check(z: np.ndarray, step: int, direction: str) -> None:
    if not np.all(np.isfinite(z)) or np.any(np.abs(z) > EXPLOSION_LIMIT):
        raise LatentExplosionError(step=step, direction=direction, limit=EXPLOSION_LIMIT)


def _integrate(
    field: VelocityField,
    z_start: np.ndarray,
    cond: Condition,
    cfg: GuidanceConfig,
    grid: TimeGrid,
    uncond_for_step,
    start_compensation: np.ndarray | None = None,
) -> Trajectory:
    z = np.asarray(z_start, dtype=np.float64)
    if z.shape != (field.d,):
        raise ShapeMismatchError(f"latent shape {z.shape} != ({field.d},)")
    _check(z, 0, grid.direction)
    comp = (np.zeros(field.d) if start_compensation is None
            else np.asarray(start_compensation, dtype=np.float64).copy())
    sqrt_d = np.sqrt(field.d)
    times = grid.points
    latents = np.empty((grid.n_steps + 1, field.d))
    norms = np.empty(grid.n_steps + 1)
    for i in range(grid.n_steps):
        v = guided_velocity(field, z, times[i], cond, uncond_for_step(i), cfg.guidance)
        latents[i] = z
        norms[i] = np.linalg.norm(v) / sqrt_d
        z, comp = _dd_add(z, comp, (times[i + 1] - times[i]) * v)
        _check(z, i + 1, grid.direction)
    latents[-1] = z
    # Terminal record: velocity evaluated at the endpoint (not used for stepping).
    v_end = guided_velocity(
        field, z, times[-1], cond, uncond_for_step(grid.n_steps - 1), cfg.guidance
    )
    norms[-1] = np.linalg.norm(v_end) / sqrt_d
    return Trajectory(direction=grid.direction, times=times.copy(),
                      latents=latents, velocity_norms=norms,
                      final_compensation=comp)


def invert(
    field: VelocityField,
    z0: np.ndarray,
    cond: Condition,
    cfg: GuidanceConfig,
    start_compensation: np.ndarray | None = None,
) -> Trajectory:
    """Euler steps from t=0 to t=1; the final record is the noise latent z1."""
    grid = TimeGrid.uniform(cfg.steps, FORWARD)
    return _integrate(field, z0, cond, cfg, grid, lambda i: None, start_compensation)


def sample(
    field: VelocityField,
    z1: np.ndarray,
    cond: Condition,
    cfg: GuidanceConfig,
    null_schedule=None,
    start_compensation: np.ndarray | None = None,
) -> Trajectory:
    """Euler steps from t=1 to t=0; the final record is the reconstruction.

    With a null schedule, step i's unconditional branch runs on schedule
    entry i instead of table row 0. Passing an inversion trajectory's
    final_compensation resumes that integrator state exactly.
    """
    if null_schedule is not None and null_schedule.embeddings.shape[0] != cfg.steps:
        raise ShapeMismatchError(
            f"null schedule has {null_schedule.embeddings.shape[0]} entries, grid has {cfg.steps}"
        )
    grid = TimeGrid.uniform(cfg.steps, BACKWARD)
    if null_schedule is None:
        pick = lambda i: None
    else:
        pick = lambda i: null_schedule.embeddings[min(i, cfg.steps - 1)]
    return _integrate(field, z1, cond, cfg, grid, pick, start_compensation)


def dump_trajectories(csv_path, sidecar_path, runs) -> None:
    """CSV (run_id, direction, step, t, velocity_norm) + JSON latents keyed (run_id, step)."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["run_id", "direction", "step", "t", "velocity_norm"])
        for run_id, traj in runs:
            for i in range(traj.times.size):
                writer.writerow(
                    [run_id, traj.direction, i, repr(float(traj.times[i])),
                     repr(float(traj.velocity_norms[i]))]
                )
    sidecar = {
        run_id: {str(i): [float(x) for x in traj.latents[i]] for i in range(traj.times.size)}
        for run_id, traj in runs
    }
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, sort_keys=True)
