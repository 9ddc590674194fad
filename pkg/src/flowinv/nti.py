"""Null-embedding optimization along a recorded inversion trajectory.

Sampling replays the inversion grid in reverse. At each step an optimizable
unconditional embedding (warm-started from the previous step, step 0 from
table row 0) is tuned with Adam so that the guided Euler step from the current
latent lands on the reference latent for that time. Velocities are evaluated
at the reference point the step is aiming for, i.e. each reverse step is the
backward-Euler inverse of the forward step it undoes: when the conditional
branch is the empty prompt and the null embedding is untouched, the guided
step reproduces the recorded inversion step exactly and the optimization sits
at a zero-gradient fixpoint.

The returned schedule is what sampling deploys (the optimized embedding feeds
the unconditional slot of the plain sampler); the returned trajectory is the
tracked reconstruction chain of the optimization itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import AdamState, StepLossSpec, step_loss_and_grad
from .core import BACKWARD, EMPTY_TOKEN, FORWARD, Condition, VelocityField
from .errors import ConfigError, NtiError, NumericError
from .sampler import Trajectory, euler_step, guided_velocity, _check


@dataclass(frozen=True)
class NTIConfig:
    inner_steps: int = 10
    lr: float = 1e-4
    guidance: float = 5.0
    # Inner iterations stop once the step loss falls below this, the standard
    # null-text early-stop guard. Without it Adam is unstable around the
    # zero-loss fixpoint: for gradients far below eps the update is
    # (lr/eps) * gradient, a 1e4 gain that inflates one float rounding ulp
    # into visible embedding drift within a few iterations.
    early_stop: float = 1e-12

    def __post_init__(self):
        if self.inner_steps < 0:
            raise ConfigError("inner_steps must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.early_stop < 0:
            raise ConfigError("early_stop must be non-negative")


@dataclass(frozen=True)
class NullSchedule:
    """Per-timestep unconditional embeddings with their step-loss bookkeeping."""

    embeddings: np.ndarray      # (N, d_c), entry i used by sampling step i
    initial_losses: np.ndarray  # (N,) loss before any inner update
    final_losses: np.ndarray    # (N,) loss after the last inner update

    def __post_init__(self):
        if not np.all(np.isfinite(self.embeddings)):
            raise ConfigError("null schedule embeddings must be finite")
        n = self.embeddings.shape[0]
        if self.initial_losses.shape != (n,) or self.final_losses.shape != (n,):
            raise ConfigError("loss records must match the schedule length")

    @property
    def n_steps(self) -> int:
        return self.embeddings.shape[0]


def nti_optimize(
    field: VelocityField,
    reference: Trajectory,
    cond: Condition,
    config: NTIConfig,
) -> tuple[NullSchedule, np.ndarray, Trajectory]:
    """Optimize the null schedule against an inversion reference.

    Returns (schedule, reconstruction z0_hat, tracked trajectory). `cond`
    occupies the conditional CFG slot: the empty prompt during pure
    reconstruction, the source prompt when reproducing the classic
    prompted-NTI baseline.
    """
    if reference.direction != FORWARD:
        raise ConfigError("reference must be an inversion (forward) trajectory")
    n = reference.n_steps
    times = reference.times[::-1]
    refs = reference.latents[::-1]
    d_c = field.d_c
    sqrt_d = np.sqrt(field.d)

    z = refs[0].copy()
    e = field.embeddings[EMPTY_TOKEN].copy()
    schedule = np.empty((n, d_c))
    initial_losses = np.empty(n)
    final_losses = np.empty(n)
    latents = np.empty((n + 1, field.d))
    norms = np.empty(n + 1)
    latents[0] = z

    for i in range(n):
        anchor_z = refs[i + 1]
        anchor_t = float(times[i + 1])
        spec = StepLossSpec(
            target=refs[i + 1],
            dt=float(times[i + 1] - times[i]),
            cond_embedding=cond.embedding,
            guidance=config.guidance,
            origin=z,
        )
        adam = AdamState((d_c,), lr=config.lr)
        try:
            loss, grad = step_loss_and_grad(field, anchor_z, anchor_t, e, spec)
            initial_losses[i] = loss
            for j in range(config.inner_steps):
                if loss < config.early_stop:
                    break
                e = adam.step(e, grad)
                loss, grad = step_loss_and_grad(field, anchor_z, anchor_t, e, spec)
            final_losses[i] = loss
        except NumericError as exc:
            raise NtiError(step=i, inner=adam.step_count) from exc
        schedule[i] = e
        v_hat = guided_velocity(field, anchor_z, anchor_t, cond, e, config.guidance)
        norms[i] = np.linalg.norm(v_hat) / sqrt_d
        z = euler_step(z, float(times[i]), anchor_t, v_hat)
        _check(z, i + 1, BACKWARD)
        latents[i + 1] = z

    v_end = guided_velocity(field, z, float(times[-1]), cond, e, config.guidance)
    norms[-1] = np.linalg.norm(v_end) / sqrt_d
    tracked = Trajectory(direction=BACKWARD, times=times.copy(), latents=latents,
                         velocity_norms=norms)
    return (
        NullSchedule(embeddings=schedule, initial_losses=initial_losses,
                     final_losses=final_losses),
        z,
        tracked,
    )
