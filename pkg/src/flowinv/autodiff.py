"""Reverse-mode gradients for the fixed MLP topology, plus Adam.

No general tape: the network shape is known, so the backward pass is written
out against the cached activations. Two consumers share these kernels: the
flow-matching trainer (gradients w.r.t. every parameter, batched) and the
null-embedding optimizer (gradient of one Euler-step loss w.r.t. the
unconditional embedding, single sample).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import VelocityField, forward_input
from .errors import NumericError, ShapeMismatchError


def forward_cached(field: VelocityField, x: np.ndarray):
    """Forward pass keeping activations; same op order as core.mlp_forward."""
    acts = [x]
    a = x
    for w, b in zip(field.weights[:-1], field.biases[:-1]):
        a = np.tanh(w @ a + b)
        acts.append(a)
    v = field.weights[-1] @ a + field.biases[-1]
    return v, acts


def backward_input(field: VelocityField, acts: list[np.ndarray], dv: np.ndarray) -> np.ndarray:
    """Gradient of <dv, v> w.r.t. the network input vector."""
    da = field.weights[-1].T @ dv
    for w, a in zip(reversed(field.weights[:-1]), reversed(acts[1:])):
        dz = da * (1.0 - a * a)  # tanh'
        da = w.T @ dz
    return da


def forward_batch(weights, biases, x: np.ndarray):
    """Batched forward on raw parameter lists; x is (B, in)."""
    acts = [x]
    a = x
    for w, b in zip(weights[:-1], biases[:-1]):
        a = np.tanh(a @ w.T + b)
        acts.append(a)
    v = a @ weights[-1].T + biases[-1]
    return v, acts


def backward_batch(weights, acts, dv: np.ndarray):
    """Batched gradients w.r.t. every layer parameter and the input rows."""
    d_weights = [None] * len(weights)
    d_biases = [None] * len(weights)
    grad = dv
    for i in range(len(weights) - 1, -1, -1):
        d_weights[i] = grad.T @ acts[i]
        d_biases[i] = grad.sum(axis=0)
        grad = grad @ weights[i]
        if i > 0:
            grad = grad * (1.0 - acts[i] * acts[i])
    return d_weights, d_biases, grad


class AdamState:
    """Standard Adam with bias correction; one state per optimized array."""

    def __init__(self, shape, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.step_count = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, target: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return the updated target; moments and step count advance in place."""
        if target.shape != self.m.shape or grad.shape != self.m.shape:
            raise ShapeMismatchError(
                f"adam shapes {target.shape}/{grad.shape} != state {self.m.shape}"
            )
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * (grad * grad)
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        return target - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass(frozen=True)
class StepLossSpec:
    """One guided Euler step scored against a reference latent.

    The predicted latent is origin + dt * v_hat, with v_hat the CFG combination
    of the conditional branch (cond_embedding, frozen) and the unconditional
    branch (the optimized embedding). `origin` defaults to the evaluation
    point z; the null optimizer passes its chained latent instead while
    evaluating the velocities at the reference anchor.
    """

    target: np.ndarray
    dt: float
    cond_embedding: np.ndarray
    guidance: float
    origin: np.ndarray | None = None


def step_loss_and_grad(
    field: VelocityField,
    z: np.ndarray,
    t: float,
    embedding: np.ndarray,
    spec: StepLossSpec,
) -> tuple[float, np.ndarray]:
    """Squared mean-L2 step loss and its exact gradient w.r.t. `embedding`.

    loss = mean((origin + dt * v_hat - target)^2) with
    v_hat = v_u + guidance * (v_c - v_u); only v_u depends on the embedding.
    """
    if not np.isfinite(spec.guidance):
        raise NumericError("guidance scale must be finite")
    origin = z if spec.origin is None else spec.origin
    x_u = forward_input(field, z, t, embedding)
    v_u, acts = forward_cached(field, x_u)
    x_c = forward_input(field, z, t, spec.cond_embedding)
    v_c, _ = forward_cached(field, x_c)
    v_hat = v_u + spec.guidance * (v_c - v_u)
    residual = origin + spec.dt * v_hat - spec.target
    loss = float(np.mean(residual * residual))
    if not np.isfinite(loss):
        raise NumericError(f"non-finite step loss at t={t}")
    # dL/dv_u = (2/d) * dt * (1 - w) * residual, then backprop to the embedding slice.
    dv_u = (2.0 / field.d) * spec.dt * (1.0 - spec.guidance) * residual
    dx = backward_input(field, acts, dv_u)
    return loss, dx[field.d + 1 :]
