"""SGD (plain / Nesterov), Adam, and AdamW over flat parameter vectors.

Decay coupling follows the usual conventions: SGD and Adam add
weight_decay * w to the gradient, AdamW shrinks the weights directly by
lr * weight_decay before the moment update.  Adam/AdamW use
bias-corrected moments with the epsilon added after the square root.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .nn.engine import ParamStore

OPTIMIZER_KINDS = ("sgd", "sgd_nesterov", "adam", "adamw")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str
    lr: float
    weight_decay: float = 0.0
    momentum: float = 0.0          # sgd_nesterov only
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    decay_all: bool = True         # decay biases and BN affine params too

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValueError("betas must be in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")


class OptimizerState:
    """Moment/velocity buffers mirroring one ParamStore's flat layout."""

    def __init__(self, config: OptimizerConfig, params: ParamStore):
        p = params.flat_len
        self.step_count = 0
        self.decay_mask = params.decay_mask(config.decay_all)
        if config.kind in ("adam", "adamw"):
            self.m = np.zeros(p)
            self.v = np.zeros(p)
        elif config.kind == "sgd_nesterov":
            self.velocity = np.zeros(p)


def step(config: OptimizerConfig, state: OptimizerState, params: ParamStore,
         grad: np.ndarray) -> None:
    """Apply one update in place; increments the step counter by one."""
    w = params.to_flat()
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != w.shape:
        raise ValueError(f"gradient length {grad.shape} != parameter count {w.shape}")
    if not np.all(np.isfinite(grad)):
        bad = int(np.argmin(np.isfinite(grad)))
        raise ValueError(f"non-finite gradient entry in {params.entry_name_at(bad)}")

    state.step_count += 1
    wd = config.weight_decay
    mask = state.decay_mask

    if config.kind in ("sgd", "sgd_nesterov"):
        g = grad.copy()
        if wd != 0.0:
            g[mask] += wd * w[mask]
        if config.kind == "sgd_nesterov" and config.momentum != 0.0:
            state.velocity *= config.momentum
            state.velocity += g
            g = g + config.momentum * state.velocity
        w -= config.lr * g
    else:
        if config.kind == "adamw":
            if wd != 0.0:
                w[mask] *= 1.0 - config.lr * wd
            g = grad
        else:  # adam: coupled decay
            g = grad.copy()
            if wd != 0.0:
                g[mask] += wd * w[mask]
        b1, b2 = config.betas
        state.m *= b1
        state.m += (1 - b1) * g
        state.v *= b2
        state.v += (1 - b2) * g * g
        t = state.step_count
        m_hat = state.m / (1 - b1 ** t)
        v_hat = state.v / (1 - b2 ** t)
        w -= config.lr * m_hat / (np.sqrt(v_hat) + config.eps)

    params.load_flat(w)


def make_optimizer(config: OptimizerConfig, params: ParamStore) -> OptimizerState:
    return OptimizerState(config, params)
