"""Adam optimizer with bias correction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DivergenceError
from .mlp import Gradients, NetworkParams


@dataclass(frozen=True)
class AdamConfig:
    # learning_rate == 0 is allowed as an explicit no-op mode (used by tests
    # of the parameter-partition contract)
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1/beta2 must be in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


def adam_step(params: NetworkParams, grads: Gradients, config: AdamConfig) -> NetworkParams:
    """One in-place Adam update; returns `params` for convenience.

    Rejects non-finite gradients: a NaN/Inf gradient is a divergence signal
    and must abort the training loop instead of being written into state.
    """
    for g in grads.weights + grads.biases:
        if not np.all(np.isfinite(g)):
            raise DivergenceError("non-finite gradient entries in adam_step")

    t = params.adam_t + 1
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t

    def update(theta, m, v, g):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        m_hat = m / corr1
        v_hat = v / corr2
        theta -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)

    for i in range(params.n_layers):
        update(params.weights[i], params.adam_m_w[i], params.adam_v_w[i], grads.weights[i])
        update(params.biases[i], params.adam_m_b[i], params.adam_v_b[i], grads.biases[i])

    params.adam_t = t
    return params
