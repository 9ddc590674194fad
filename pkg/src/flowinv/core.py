"""Latents, conditions, time grids, and the conditional velocity network.

The velocity field is a small tanh MLP on the concatenation (z, t, embedding).
Fields are immutable after construction (arrays are marked read-only) and
evaluation is a pure function, so a field can be shared freely across threads.
All numerics are float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, ShapeMismatchError, TokenRangeError
from .rng import stream

EMPTY_TOKEN = 0

# Condition kinds. EMPTY is the reserved null prompt; TRUE/APPROXIMATE/OOD tag
# how a trained-or-not token relates to the data point it conditions; RAW marks
# an explicit embedding with no table row (e.g. an optimized null vector).
KIND_EMPTY = "empty"
KIND_TRUE = "true"
KIND_APPROXIMATE = "approximate"
KIND_OOD = "ood"
KIND_RAW = "raw"
KINDS = (KIND_EMPTY, KIND_TRUE, KIND_APPROXIMATE, KIND_OOD, KIND_RAW)

FORWARD = "forward"    # 0 -> 1, inversion
BACKWARD = "backward"  # 1 -> 0, sampling


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Strictly monotone grid over [0, 1] with exact endpoints."""

    points: np.ndarray
    direction: str

    def __post_init__(self):
        pts = self.points
        if pts.ndim != 1 or pts.size < 2:
            raise ConfigError("time grid needs at least two points")
        lo, hi = (pts[0], pts[-1]) if self.direction == FORWARD else (pts[-1], pts[0])
        if lo != 0.0 or hi != 1.0:
            raise ConfigError("time grid endpoints must be exactly 0 and 1")
        diffs = np.diff(pts)
        ok = np.all(diffs > 0) if self.direction == FORWARD else np.all(diffs < 0)
        if not ok:
            raise ConfigError(f"time grid not strictly monotone for direction {self.direction}")

    @property
    def n_steps(self) -> int:
        return self.points.size - 1

    @staticmethod
    def uniform(n_steps: int, direction: str = FORWARD) -> "TimeGrid":
        """Uniform grid; the backward grid is the bitwise mirror of the forward one."""
        if n_steps < 1:
            raise ConfigError("n_steps must be >= 1")
        pts = np.arange(n_steps + 1, dtype=np.float64) / n_steps
        if direction == BACKWARD:
            pts = pts[::-1]
        elif direction != FORWARD:
            raise ConfigError(f"unknown direction {direction!r}")
        return TimeGrid(points=_readonly(pts), direction=direction)


@dataclass(frozen=True)
class Condition:
    """A conditioning token with its embedding and a kind tag."""

    token: int | None
    embedding: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown condition kind {self.kind!r}")
        if not np.all(np.isfinite(self.embedding)):
            raise ConfigError("condition embedding must be finite")
        object.__setattr__(self, "embedding", _readonly(self.embedding))

    def as_kind(self, kind: str) -> "Condition":
        """Same token/embedding relabeled, e.g. a trained token used as an approximate prompt."""
        return Condition(token=self.token, embedding=self.embedding, kind=kind)


def raw_condition(embedding: np.ndarray) -> Condition:
    """Condition carrying an explicit embedding with no table lookup."""
    return Condition(token=None, embedding=np.asarray(embedding, dtype=np.float64), kind=KIND_RAW)


@dataclass(frozen=True)
class VelocityField:
    """MLP v(z, t, c) -> velocity, plus the condition embedding table.

    weights[i] has shape (out, in); the last pair is the linear output layer.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    embeddings: np.ndarray
    d: int
    d_c: int
    widths: tuple[int, ...]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation != "tanh":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "weights", tuple(_readonly(w) for w in self.weights))
        object.__setattr__(self, "biases", tuple(_readonly(b) for b in self.biases))
        object.__setattr__(self, "embeddings", _readonly(self.embeddings))
        sizes = (self.d + 1 + self.d_c, *self.widths, self.d)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ConfigError(f"layer {i} shape {w.shape}/{b.shape} inconsistent with {sizes}")
        if len(self.weights) != len(self.widths) + 1:
            raise ConfigError("layer count inconsistent with declared widths")
        if self.embeddings.shape[1] != self.d_c:
            raise ConfigError("embedding table width must equal d_c")
        for name, arrs in (("weights", self.weights), ("biases", self.biases)):
            for a in arrs:
                if not np.all(np.isfinite(a)):
                    raise ConfigError(f"non-finite values in {name}")
        if not np.all(np.isfinite(self.embeddings)):
            raise ConfigError("non-finite values in embedding table")

    @property
    def vocab(self) -> int:
        return self.embeddings.shape[0]

    def param_count(self) -> int:
        n = sum(w.size + b.size for w, b in zip(self.weights, self.biases))
        return n + self.embeddings.size


def init_field(
    d: int = 8,
    d_c: int = 16,
    vocab: int = 39,
    widths: Sequence[int] = (64, 64),
    seed: int = 0,
    zero_final_layer: bool = False,
) -> VelocityField:
    """Seeded scaled-uniform initialization; biases start at zero."""
    if d < 1 or d_c < 1 or vocab < 1 or any(w < 1 for w in widths):
        raise ConfigError("all dimensions must be positive")
    rng = stream(seed, "init-field")
    sizes = (d + 1 + d_c, *widths, d)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-scale, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    if zero_final_layer:
        weights[-1] = np.zeros_like(weights[-1])
    table = rng.uniform(-1.0, 1.0, size=(vocab, d_c))
    return VelocityField(
        weights=tuple(weights), biases=tuple(biases), embeddings=table,
        d=d, d_c=d_c, widths=tuple(widths),
    )


def constant_field(field: VelocityField, value: np.ndarray) -> VelocityField:
    """Copy of `field` rebuilt so that v === value everywhere (zero output layer, bias = value)."""
    value = np.asarray(value, dtype=np.float64)
    if value.shape != (field.d,):
        raise ShapeMismatchError(f"constant value must have shape ({field.d},)")
    weights = list(field.weights)
    biases = list(field.biases)
    weights[-1] = np.zeros_like(weights[-1])
    biases[-1] = value.copy()
    return VelocityField(
        weights=tuple(weights), biases=tuple(biases), embeddings=field.embeddings,
        d=field.d, d_c=field.d_c, widths=field.widths,
    )


def embed_condition(
    field: VelocityField, token: int, registry: Mapping[int, str] | None = None
) -> Condition:
    """Look up a token's table row; kind comes from the dataset registry when given."""
    if not 0 <= token < field.vocab:
        raise TokenRangeError(f"token {token} outside [0, {field.vocab})")
    if token == EMPTY_TOKEN:
        kind = KIND_EMPTY
    elif registry is not None:
        kind = registry.get(token, KIND_OOD)
    else:
        kind = KIND_TRUE
    return Condition(token=token, embedding=field.embeddings[token], kind=kind)


def forward_input(field: VelocityField, z: np.ndarray, t: float, embedding: np.ndarray) -> np.ndarray:
    """Validate shapes and build the concatenated network input (z, t, embedding)."""
    z = np.asarray(z, dtype=np.float64)
    embedding = np.asarray(embedding, dtype=np.float64)
    if z.shape != (field.d,):
        raise ShapeMismatchError(f"latent shape {z.shape} != ({field.d},)")
    if embedding.shape != (field.d_c,):
        raise ShapeMismatchError(f"embedding shape {embedding.shape} != ({field.d_c},)")
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"time {t} outside [0, 1]")
    x = np.empty(field.d + 1 + field.d_c)
    x[: field.d] = z
    x[field.d] = t
    x[field.d + 1 :] = embedding
    return x


def mlp_forward(field: VelocityField, x: np.ndarray) -> np.ndarray:
    """Plain forward pass on a prepared input vector."""
    a = x
    for w, b in zip(field.weights[:-1], field.biases[:-1]):
        a = np.tanh(w @ a + b)
    return field.weights[-1] @ a + field.biases[-1]


def eval_velocity(field: VelocityField, z: np.ndarray, t: float, c: Condition) -> np.ndarray:
    """Deterministic v(z, t, c); bitwise-identical outputs for identical inputs."""
    return mlp_forward(field, forward_input(field, z, t, c.embedding))
