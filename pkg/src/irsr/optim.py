"""Adam with bias correction, keyed by parameter name."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError

__all__ = ["AdamState", "init_adam", "adam_step"]


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)  # first moments, name -> ndarray
    v: dict = field(default_factory=dict)  # second moments, name -> ndarray
    t: int = 0


def init_adam(params):
    state = AdamState()
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.tensor.data)
        state.v[name] = np.zeros_like(p.tensor.data)
    return state


def adam_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One update over all parameters; missing gradients count as zero.

    Aborts (without mutating anything) if any gradient is non-finite.
    """
    grads = {}
    for name, p in params.items():
        g = p.tensor.grad
        if g is None:
            g = np.zeros_like(p.tensor.data)
        elif not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        grads[name] = g

    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        p.data = p.tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)
