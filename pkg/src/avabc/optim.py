"""ADAM and ADAGRAD steps on an unconstrained parameter vector.

Steps are pure: ``step(state, phi, grad)`` returns the new parameters and a
new state.  Ascent is the default direction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

ADAM = "adam"
ADAGRAD = "adagrad"

DEFAULTS = {
    ADAM: {"lr": 0.01, "beta1": 0.9, "beta2": 0.999, "eta": 1e-8},
    ADAGRAD: {"lr": 0.1, "beta1": 0.0, "beta2": 0.0, "eta": 1e-8},
}


@dataclass(frozen=True)
class OptimizerState:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eta: float = 1e-8
    t: int = 0
    m: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None


def make_optimizer(kind: str = ADAM, **overrides) -> OptimizerState:
    kind = kind.lower()
    if kind not in DEFAULTS:
        raise ValueError(f"unknown optimizer {kind!r}; expected 'adam' or 'adagrad'")
    params = dict(DEFAULTS[kind])
    params.update({k: float(v) for k, v in overrides.items() if v is not None})
    if params["lr"] <= 0.0 or params["eta"] <= 0.0:
        raise ValueError("learning rate and eta must be positive")
    return OptimizerState(kind, **params)


def step(state: OptimizerState, phi, grad, maximize: bool = True):
    phi = np.asarray(phi, dtype=float)
    g = np.asarray(grad, dtype=float)
    if phi.shape != g.shape:
        raise ValueError(f"gradient shape {g.shape} does not match parameters {phi.shape}")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("refusing to step on a non-finite gradient")
    sign = 1.0 if maximize else -1.0
    t = state.t + 1
    if state.kind == ADAM:
        m = np.zeros_like(phi) if state.m is None else state.m
        v = np.zeros_like(phi) if state.v is None else state.v
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        new_phi = phi + sign * state.lr * m_hat / (np.sqrt(v_hat) + state.eta)
        return new_phi, replace(state, t=t, m=m, v=v)
    if state.kind == ADAGRAD:
        G = (np.zeros_like(phi) if state.v is None else state.v) + g * g
        new_phi = phi + sign * state.lr * g / (np.sqrt(G) + state.eta)
        return new_phi, replace(state, t=t, v=G)
    raise ValueError(f"unknown optimizer kind {state.kind!r}")
