"""Dense-layer building blocks: affine maps, losses, and Adam.

Everything operates on plain numpy arrays with batch-first shapes. Weight
matrices are stored (in_dim, out_dim) so a forward pass is `x @ W + b`;
gradients come back in the same layout. Losses return (value, dlogits) so
each model assembles its own backward pass from one chain of matmuls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError


def glorot_uniform(
    rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32
) -> np.ndarray:
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


@dataclass
class Affine:
    W: np.ndarray  # (in_dim, out_dim)
    b: np.ndarray  # (out_dim,)

    @classmethod
    def create(
        cls, rng: np.random.Generator, in_dim: int, out_dim: int, dtype=np.float32
    ) -> "Affine":
        return cls(
            W=glorot_uniform(rng, in_dim, out_dim, dtype),
            b=np.zeros(out_dim, dtype=dtype),
        )

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.W + self.b

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "Affine":
        return Affine(self.W.copy(), self.b.copy())


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stable under large logits."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def weighted_cross_entropy(
    logits: np.ndarray, labels: np.ndarray, weights: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean over the batch of w_i * CE(logits_i, label_i).

    Returns the loss and its gradient with respect to the logits.
    """
    n = logits.shape[0]
    if labels.shape[0] != n or weights.shape[0] != n:
        raise InputError(
            f"batch size mismatch: {n} logits, {labels.shape[0]} labels, "
            f"{weights.shape[0]} weights"
        )
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    log_probs = shifted[rows, labels] - log_z
    loss = float((-weights * log_probs).mean())
    dlogits = softmax(logits)
    dlogits[rows, labels] -= 1.0
    dlogits *= (weights / n)[:, None]
    return loss, dlogits


def bce_with_logits(
    logits: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Multi-label binary cross-entropy, summed over outputs, batch-averaged.

    Uses the overflow-safe form max(z,0) - z*t + log(1 + exp(-|z|)); with
    all-zero logits every output contributes ln 2.
    """
    if logits.shape != targets.shape:
        raise InputError(
            f"logits shape {logits.shape} != targets shape {targets.shape}"
        )
    n = logits.shape[0]
    per_elem = (
        np.maximum(logits, 0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))
    )
    loss = float(per_elem.sum() / n)
    sig = np.exp(-np.logaddexp(0.0, -logits))  # sigmoid without overflow
    dlogits = (sig - targets) / n
    return loss, dlogits


@dataclass
class Adam:
    """Name-keyed Adam with bias correction; updates parameters in place."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    _state: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        m_corr = 1.0 - self.beta1**self.t
        v_corr = 1.0 - self.beta2**self.t
        for name, grad in grads.items():
            param = params[name]
            if name not in self._state:
                self._state[name] = (
                    np.zeros_like(param),
                    np.zeros_like(param),
                )
            m, v = self._state[name]
            m += (1.0 - self.beta1) * (grad - m)
            v += (1.0 - self.beta2) * (grad * grad - v)
            param -= self.lr * (m / m_corr) / (np.sqrt(v / v_corr) + self.eps)
