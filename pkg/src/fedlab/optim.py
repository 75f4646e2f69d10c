"""Plain SGD for clients and Adam for the server."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, FormatError
from .model import Layout, ParamVector, read_flpv, write_flpv


@dataclass(frozen=True)
class SgdConfig:
    lr: float

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigError("SGD learning rate must be non-negative")


def sgd_step(params: ParamVector, grads: ParamVector, cfg: SgdConfig) -> ParamVector:
    params.check_compatible(grads)
    return params.with_values(params.values - cfg.lr * grads.values)


@dataclass
class AdamState:
    m: ParamVector
    v: ParamVector
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-3
    t: int = 0

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam decay rates must lie in [0, 1)")
        if not self.eps > 0:
            raise ConfigError("Adam eps must be positive")
        self.m.check_compatible(self.v)

    @classmethod
    def fresh(cls, like: ParamVector, **kw) -> "AdamState":
        return cls(like.zeros_like(), like.zeros_like(), **kw)


def adam_step(state: AdamState, params: ParamVector, grads: ParamVector):
    """One bias-corrected Adam update; returns ``(new params, new state)``."""
    params.check_compatible(grads)
    params.check_compatible(state.m)
    g = grads.values
    t = state.t + 1
    m = state.beta1 * state.m.values + (1 - state.beta1) * g
    v = state.beta2 * state.v.values + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new = params.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params.with_values(new), replace(state, m=state.m.with_values(m),
                                            v=state.v.with_values(v), t=t)


_HYPER = Layout((("adam.hyper", (5,)),))


def write_adam_state(state: AdamState) -> bytes:
    hyper = ParamVector(np.array([state.lr, state.beta1, state.beta2, state.eps, float(state.t)]),
                        _HYPER)
    return write_flpv(hyper) + write_flpv(state.m) + write_flpv(state.v)


def load_adam_state(buf: bytes) -> AdamState:
    hyper, pos = read_flpv(buf, 0)
    if hyper.layout != _HYPER:
        raise FormatError("first block is not an Adam hyperparameter block", 0)
    m, pos = read_flpv(buf, pos)
    v, pos = read_flpv(buf, pos)
    if pos != len(buf):
        raise FormatError("trailing bytes after Adam state", pos)
    lr, b1, b2, eps, t = hyper.values.tolist()
    return AdamState(m, v, lr, b1, b2, eps, int(t))
