"""Adam-style adaptive gradient descent on flat parameter vectors."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam with beta = (0.9, 0.999) and global-norm gradient clipping.

    The clip threshold guards against divergence on rough minibatches; it is
    plumbing, not part of the modeled objective.
    """

    def __init__(self, size: int, lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip_norm: float = 10.0):
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.clip_norm = float(clip_norm)
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.step_count = 0

    def step(self, flat: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return the updated parameter vector; inputs are not mutated."""
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite gradient")
        norm = float(np.linalg.norm(grad))
        if self.clip_norm > 0 and norm > self.clip_norm:
            grad = grad * (self.clip_norm / norm)
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.step_count)
        v_hat = self.v / (1.0 - self.beta2**self.step_count)
        return flat - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
