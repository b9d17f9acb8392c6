"""Gaussian epsilon-kernel and the Monte-Carlo ABC log-likelihood."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Scalar
from .simulators import InvalidParameterError, SimulationError

log = logging.getLogger(__name__)

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# bound value reported when every simulation in a batch failed
FAILURE_PENALTY = -1e10


class EpsilonError(ValueError):
    pass


class AllSimulationsFailed(ArithmeticError):
    def __init__(self, n: int, last: Optional[BaseException] = None):
        self.n = n
        self.last = last
        super().__init__(f"all {n} simulations failed (last error: {last})")


@dataclass(frozen=True)
class EpsilonPolicy:
    """How the kernel bandwidth is chosen.

    kind:
        ``fixed``: ``value`` (scalar or one entry per statistic).
        ``simulation_scaled``: ``std(x) / sqrt(M)`` of each simulation's raw output.
        ``bernoulli_analytic``: ``sqrt(theta (1 - theta))`` at the sampled theta.
    """

    kind: str = "fixed"
    value: object = 1.0

    def __post_init__(self):
        if self.kind not in ("fixed", "simulation_scaled", "bernoulli_analytic"):
            raise EpsilonError(f"unknown epsilon policy {self.kind!r}")
        if self.kind == "fixed":
            vals = np.atleast_1d(np.asarray(self.value, dtype=float))
            if not np.all(vals > 0.0) or not np.all(np.isfinite(vals)):
                raise EpsilonError(f"fixed epsilon must be positive and finite, got {self.value!r}")


def select_epsilon(policy: EpsilonPolicy, *, theta=None, x=None):
    """Bandwidth for one kernel evaluation; may be a tape variable."""
    if policy.kind == "fixed":
        v = policy.value
        return [float(e) for e in v] if isinstance(v, (list, tuple, np.ndarray)) else float(v)
    if policy.kind == "bernoulli_analytic":
        if theta is None:
            raise EpsilonError("bernoulli_analytic epsilon needs theta")
        p = theta[0] if isinstance(theta, (list, tuple)) else theta
        return ad.sqrt(p * (1.0 - p))
    if x is None:
        raise EpsilonError("simulation_scaled epsilon needs the raw simulation output")
    M = len(x)
    if M < 2:
        raise EpsilonError(f"simulation_scaled epsilon needs at least 2 raw values, got {M}")
    m = ad.mean(x)
    ss = ad.vsum([(xi - m) * (xi - m) for xi in x])
    var = ss / (M - 1)
    if ad.value_of(var) <= 0.0:
        raise EpsilonError("simulation_scaled epsilon is zero: the raw output has no spread")
    return ad.sqrt(var) / math.sqrt(M)


def _scale(e):
    ev = ad.value_of(e)
    if not ev > 0.0:
        raise EpsilonError(f"kernel: epsilon must be positive, got {ev!r}")
    return 1.0 / e, ad.log(e)


def gaussian_kernel_log(y: Sequence[float], x: Sequence[Scalar], eps) -> Scalar:
    """``sum_i log N(y_i | x_i, eps_i^2)``; ``eps`` is a scalar or a vector."""
    if len(y) != len(x):
        raise ValueError(f"kernel: dimension mismatch y={len(y)} x={len(x)}")
    if isinstance(eps, (list, tuple, np.ndarray)):
        if len(eps) != len(x):
            raise ValueError(f"kernel: epsilon has {len(eps)} entries for {len(x)} statistics")
        scales = [_scale(e) for e in eps]
    else:
        scales = [_scale(eps)] * len(x)
    terms = []
    for yi, xi, (inv, log_e) in zip(y, x, scales):
        z = (yi - xi) * inv
        terms.append(-0.5 * z * z - log_e - HALF_LOG_2PI)
    return ad.vsum(terms)


def log_sum_exp(terms: Sequence[Scalar]) -> Scalar:
    """``max + log sum exp(term - max)`` with the max held constant."""
    terms = list(terms)
    if not terms:
        raise ValueError("log_sum_exp of an empty collection")
    if len(terms) == 1:
        return terms[0]
    m = max(ad.value_of(t) for t in terms)
    if not math.isfinite(m):
        raise ad.NonFiniteError("log_sum_exp", m)
    return m + ad.log(ad.vsum([ad.exp(t - m) for t in terms]))


@dataclass
class AbcLogLik:
    value: Scalar
    S_count: int
    L_count: int
    epsilon_used: list = field(default_factory=list)
    failures: int = 0
    stats_dims: list = field(default_factory=list)


def abc_loglik(sim, theta, y: Sequence[float], u_draws, eps: EpsilonPolicy, *, z=None) -> AbcLogLik:
    """``log (1/L) sum_l K_eps(y, f(theta, u_l))`` over the successful draws.

    Failed simulations are dropped and the average renormalized over the rest.
    When ``z`` is given the simulator is called as ``run_latent(theta, z, u)``.
    """
    L = len(u_draws)
    if L < 1:
        raise ValueError("abc_loglik needs at least one noise draw")
    if len(y) != sim.statistics_dim:
        raise ValueError(f"observation has {len(y)} statistics, simulator produces {sim.statistics_dim}")
    eps_theta = select_epsilon(eps, theta=theta) if eps.kind == "bernoulli_analytic" else None
    terms, eps_used, dims = [], [], []
    failures = 0
    last_err = None
    for u in u_draws:
        try:
            out = sim.run(theta, u) if z is None else sim.run_latent(theta, z, u)
            stats, raw = out.stats, out.raw
            if eps.kind == "simulation_scaled":
                e = select_epsilon(eps, x=raw)
            elif eps_theta is not None:
                e = eps_theta
            else:
                e = select_epsilon(eps)
            terms.append(gaussian_kernel_log(y, stats, e))
        except (SimulationError, ad.NonFiniteError) as err:
            failures += 1
            last_err = err
            continue
        dims.append(len(stats))
        eps_used.append([ad.value_of(v) for v in e] if isinstance(e, list) else ad.value_of(e))
    n_ok = len(terms)
    if n_ok == 0:
        raise AllSimulationsFailed(L, last_err)
    if failures:
        log.debug("abc_loglik: %d of %d simulations failed", failures, L)
    value = log_sum_exp(terms) - math.log(n_ok) if n_ok > 1 else terms[0]
    return AbcLogLik(value, 1, n_ok, eps_used, failures, dims)


__all__ = [
    "FAILURE_PENALTY",
    "AbcLogLik",
    "AllSimulationsFailed",
    "EpsilonError",
    "EpsilonPolicy",
    "InvalidParameterError",
    "abc_loglik",
    "gaussian_kernel_log",
    "log_sum_exp",
    "select_epsilon",
]
