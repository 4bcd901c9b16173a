"""Adam with L2 weight decay folded into the gradient."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from aar.errors import InvalidInput, NumericalFailure


@dataclass
class AdamState:
    lr: float = 1e-4
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def for_params(cls, params: np.ndarray, **hyper) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params), **hyper)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step": self.step,
            "m": self.m.tolist(),
            "v": self.v.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        d = dict(d)
        d["m"] = np.asarray(d["m"], dtype=np.float64)
        d["v"] = np.asarray(d["v"], dtype=np.float64)
        return cls(**d)


def adam_update(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """Update ``params`` in place and return it.

    The decay term ``weight_decay * params`` is added to the gradient before
    the moment updates (classic L2 regularization, not decoupled AdamW).
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape:
        raise InvalidInput(f"gradient shape {grads.shape} != parameter shape {params.shape}")
    if not np.all(np.isfinite(grads)):
        raise NumericalFailure("non-finite gradient")
    if state.m.shape != params.shape:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    g = grads + state.weight_decay * params if state.weight_decay else grads
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def adam_step(model, grads: np.ndarray, state: AdamState):
    """Apply one Adam update to ``model.params``; returns ``(model, state)``."""
    adam_update(model.params, grads, state)
    return model, state
