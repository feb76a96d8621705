"""Adam updates for LayerParams buffers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import LayerParams


@dataclass
class AdamConfig:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def adam_step(params: LayerParams, grads: np.ndarray, cfg: AdamConfig) -> LayerParams:
    """One bias-corrected Adam update, in place on `params`.

    m and v track exponential moving averages of the gradient and its
    square; the parameter moves by lr * m_hat / (sqrt(v_hat) + eps).
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.values.shape:
        raise ValueError(
            f"gradient shape {grads.shape} != parameter shape {params.values.shape}"
        )
    params.step += 1
    t = params.step
    params.m *= cfg.beta1
    params.m += (1.0 - cfg.beta1) * grads
    params.v *= cfg.beta2
    params.v += (1.0 - cfg.beta2) * grads * grads
    m_hat = params.m / (1.0 - cfg.beta1**t)
    v_hat = params.v / (1.0 - cfg.beta2**t)
    params.values -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    return params
