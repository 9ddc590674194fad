"""Flow-matching training of the conditional velocity field.

Straight-path conditional flow matching: x_t = (1-t) x0 + t x1 with target
velocity x1 - x0, minibatch Adam, token dropout to the empty condition so the
unconditional branch is trained for classifier-free guidance. Fully
deterministic for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .autodiff import AdamState, backward_batch, forward_batch
from .core import (
    EMPTY_TOKEN,
    Condition,
    VelocityField,
    embed_condition,
    eval_velocity,
    init_field,
)
from .dataset import DatasetSpec
from .errors import ConfigError, TrainingDivergedError
from .rng import stream

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    iterations: int = 20000
    lr: float = 1e-3
    seed: int = 0
    d: int = 8
    d_c: int = 16
    widths: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 0:
            raise ConfigError("batch size must be positive and iterations non-negative")
        if not np.isfinite(self.lr) or self.lr <= 0:
            raise ConfigError("learning rate must be positive and finite")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size, "iterations": self.iterations, "lr": self.lr,
            "seed": self.seed, "d": self.d, "d_c": self.d_c, "widths": list(self.widths),
        }

    @staticmethod
    def from_dict(data: dict) -> "TrainConfig":
        data = dict(data)
        data["widths"] = tuple(data["widths"])
        return TrainConfig(**data)


@dataclass(frozen=True)
class Checkpoint:
    field: VelocityField
    spec: DatasetSpec
    config: TrainConfig
    version: int = CHECKPOINT_VERSION
    loss_curve: tuple[tuple[int, float], ...] = ()

    def condition(self, token: int) -> Condition:
        return embed_condition(self.field, token, registry=self.spec.token_kinds())


def flow_path(x0: np.ndarray, x1: np.ndarray, t: float) -> np.ndarray:
    """Straight interpolation path; x_t is exactly x0 at t=0 and x1 at t=1."""
    return (1.0 - t) * x0 + t * x1


def flow_matching_loss(
    field: VelocityField, x0: np.ndarray, x1: np.ndarray, t: float, condition: Condition
) -> float:
    """Mean squared error between v(x_t, t, C) and the straight-path velocity x1 - x0."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    v = eval_velocity(field, flow_path(x0, x1, t), t, condition)
    residual = v - (x1 - x0)
    return float(np.mean(residual * residual))


def _draw_batch(spec: DatasetSpec, rng: np.random.Generator, batch_size: int):
    """Vectorized equivalent of batch_size sample_pair draws."""
    tokens = np.asarray(spec.trained_tokens())
    modes = np.stack([spec.mode_of(int(t)) for t in tokens])
    idx = rng.integers(len(tokens), size=batch_size)
    x0 = modes[idx] + spec.stddev * rng.standard_normal((batch_size, spec.d))
    x1 = rng.standard_normal((batch_size, spec.d))
    emitted = np.where(rng.random(batch_size) < spec.p_uncond, EMPTY_TOKEN, tokens[idx])
    t = rng.random(batch_size)
    return x0, emitted, x1, t


def train(spec: DatasetSpec, config: TrainConfig) -> Checkpoint:
    """Seeded minibatch Adam on the flow-matching loss; returns field + loss curve."""
    field = init_field(
        d=config.d, d_c=config.d_c, vocab=spec.vocab,
        widths=config.widths, seed=config.seed,
    )
    weights = [w.copy() for w in field.weights]
    biases = [b.copy() for b in field.biases]
    table = field.embeddings.copy()

    opt = {
        **{f"w{i}": AdamState(w.shape, lr=config.lr) for i, w in enumerate(weights)},
        **{f"b{i}": AdamState(b.shape, lr=config.lr) for i, b in enumerate(biases)},
        "emb": AdamState(table.shape, lr=config.lr),
    }
    rng = stream(config.seed, "train", "batches")
    d = config.d
    curve = []
    for it in range(config.iterations):
        x0, emitted, x1, t = _draw_batch(spec, rng, config.batch_size)
        x_t = (1.0 - t)[:, None] * x0 + t[:, None] * x1
        target = x1 - x0
        x_in = np.concatenate([x_t, t[:, None], table[emitted]], axis=1)
        v, acts = forward_batch(weights, biases, x_in)
        residual = v - target
        loss = float(np.mean(residual * residual))
        if not np.isfinite(loss):
            raise TrainingDivergedError(it)
        curve.append((it, loss))

        dv = (2.0 / residual.size) * residual
        d_weights, d_biases, dx = backward_batch(weights, acts, dv)
        d_table = np.zeros_like(table)
        np.add.at(d_table, emitted, dx[:, d + 1 :])

        for i in range(len(weights)):
            weights[i] = opt[f"w{i}"].step(weights[i], d_weights[i])
            biases[i] = opt[f"b{i}"].step(biases[i], d_biases[i])
        table = opt["emb"].step(table, d_table)

    trained = VelocityField(
        weights=tuple(weights), biases=tuple(biases), embeddings=table,
        d=config.d, d_c=config.d_c, widths=tuple(config.widths),
    )
    return Checkpoint(field=trained, spec=spec, config=config, loss_curve=tuple(curve))


def write_loss_curve(path, curve) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss"])
        for it, loss in curve:
            writer.writerow([it, repr(loss)])
