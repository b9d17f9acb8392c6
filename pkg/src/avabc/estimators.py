"""Estimators of the ABC variational lower bound and its gradient.

``pathwise_bound`` differentiates the Monte-Carlo bound end to end through
the variational sampler and the simulator.  ``score_function_bound`` is the
black-box baseline that only differentiates ``log q``.  Both consume the same
draw kinds from an :class:`~avabc.rng.RngStream`, so estimates made with the
same stream are paired sample for sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .abc_kernel import AllSimulationsFailed, EpsilonPolicy, abc_loglik, gaussian_kernel_log, log_sum_exp, select_epsilon
from .distributions import DEFAULT_KL_SAMPLES, SupportError, kl_divergence
from .rng import RngStream
from .simulators import InvalidParameterError, SimulationError

PATHWISE = "pathwise"
SCORE_FUNCTION = "score_function"


class BoundEvaluationError(ArithmeticError):
    """The bound could not be evaluated for one of the variational samples."""

    def __init__(self, message: str, sample_index: Optional[int] = None, cause: Optional[BaseException] = None):
        self.sample_index = sample_index
        self.cause = cause
        super().__init__(message if sample_index is None else f"sample {sample_index}: {message}")


_EVAL_ERRORS = (AllSimulationsFailed, InvalidParameterError, SimulationError, SupportError,
                ad.DomainError, ad.NonFiniteError)


@dataclass
class GradientEstimate:
    grad: np.ndarray
    bound_value: float
    estimator_kind: str
    S: int
    L: int
    K: int = 1
    per_sample_grads: Optional[np.ndarray] = None
    failures: int = 0
    stats_dims: list = field(default_factory=list)


@dataclass(frozen=True)
class ControlVariateState:
    """Per-dimension control-variate scale fitted over a sliding window."""

    a_hat: tuple = ()
    window: tuple = ()
    max_window: int = 100


def update_control_variate(cv: ControlVariateState, pairs) -> ControlVariateState:
    """Append ``(f, h)`` pairs and refit ``a_d = Cov(f_d, h_d) / Var(h_d)``."""
    window = (tuple(cv.window) + tuple((tuple(map(float, f)), tuple(map(float, h))) for f, h in pairs))
    window = window[-cv.max_window:]
    if len(window) < 2:
        dim = len(window[0][0]) if window else len(cv.a_hat)
        return ControlVariateState((0.0,) * dim, window, cv.max_window)
    F = np.array([f for f, _ in window])
    H = np.array([h for _, h in window])
    Fc = F - F.mean(axis=0)
    Hc = H - H.mean(axis=0)
    cov = (Fc * Hc).sum(axis=0)
    var = (Hc * Hc).sum(axis=0)
    a = np.where(var > 0.0, cov / np.where(var > 0.0, var, 1.0), 0.0)
    return ControlVariateState(tuple(float(x) for x in a), window, cv.max_window)


def _draw(family, sim, S, L, rng: RngStream, noise_per_sample: bool):
    nu = family.draw_base(rng.generator("nu"), S)
    gen = rng.generator("u")
    if noise_per_sample:
        u = sim.draw_noise(gen, S * L).reshape(S, L, -1)
    else:
        u = sim.draw_noise(gen, L)
    return nu, u


def _check_counts(**counts):
    for name, n in counts.items():
        if int(n) < 1:
            raise ValueError(f"{name} must be >= 1, got {n}")


def _y(y):
    return list(y.y_stats) if hasattr(y, "y_stats") else [float(v) for v in y]


def pathwise_bound(family, prior, sim, y, eps: EpsilonPolicy, S: int, L: int, rng: RngStream, *,
                   kl_samples: int = DEFAULT_KL_SAMPLES, noise_per_sample: bool = False,
                   per_sample: bool = False):
    """Reparameterized estimate of the bound and its gradient in ``phi``.

    bound = (1/S) sum_s log (1/L) sum_l K_eps(y, f(g(phi, nu_s), u_l)) - KL(q || prior)

    The ``L`` noise draws are shared by all ``S`` samples unless
    ``noise_per_sample`` is set.  Returns ``(bound, estimate)`` where
    ``bound`` is the tape variable, or a float when ``per_sample`` asks for
    per-sample gradient rows (each sample then gets its own tape).
    """
    _check_counts(S=S, L=L)
    y = _y(y)
    nu, u = _draw(family, sim, S, L, rng, noise_per_sample)
    if per_sample:
        return _pathwise_rows(family, prior, sim, y, eps, nu, u, rng, kl_samples, noise_per_sample)
    tape = ad.Tape()
    phi = tape.lift_all(family.phi)
    terms, failures, dims = [], 0, []
    for s in range(S):
        ll = _sample_loglik(family, sim, y, eps, nu[s], u[s] if noise_per_sample else u, phi, s)
        terms.append(ll.value)
        failures += ll.failures
        dims.extend(ll.stats_dims)
    kl = kl_divergence(family, prior, phi, rng=rng.generator("kl"), n_samples=kl_samples)
    bound = ad.mean(terms) - kl
    _check_finite(bound)
    grad = np.array(tape.gradient(bound, phi))
    est = GradientEstimate(grad, bound.value, PATHWISE, S, L, failures=failures, stats_dims=dims)
    return bound, est


def _sample_loglik(family, sim, y, eps, nu_s, u_s, phi, s):
    try:
        theta = family.sample(nu_s, phi)
        return abc_loglik(sim, theta, y, u_s, eps)
    except _EVAL_ERRORS as err:
        raise BoundEvaluationError(str(err), s, err) from err


def _check_finite(bound):
    v = ad.value_of(bound)
    if not math.isfinite(v):
        raise BoundEvaluationError(f"non-finite bound value {v!r}")


def _pathwise_rows(family, prior, sim, y, eps, nu, u, rng, kl_samples, noise_per_sample):
    S = len(nu)
    L = u.shape[-2]
    kl_tape = ad.Tape()
    kl_phi = kl_tape.lift_all(family.phi)
    kl = kl_divergence(family, prior, kl_phi, rng=rng.generator("kl"), n_samples=kl_samples)
    kl_grad = np.array(kl_tape.gradient(kl, kl_phi)) if isinstance(kl, ad.Var) else np.zeros(len(family.phi))
    rows, values, failures, dims = [], [], 0, []
    for s in range(S):
        tape = ad.Tape()
        phi = tape.lift_all(family.phi)
        ll = _sample_loglik(family, sim, y, eps, nu[s], u[s] if noise_per_sample else u, phi, s)
        term = ll.value
        g = tape.gradient(term, phi) if isinstance(term, ad.Var) else [0.0] * len(phi)
        rows.append(np.array(g) - kl_grad)
        values.append(ad.value_of(term))
        failures += ll.failures
        dims.extend(ll.stats_dims)
    rows = np.array(rows)
    bound = float(np.mean(values) - ad.value_of(kl))
    _check_finite(bound)
    est = GradientEstimate(rows.mean(axis=0), bound, PATHWISE, S, L, per_sample_grads=rows,
                           failures=failures, stats_dims=dims)
    return bound, est


def score_function_bound(family, prior, sim, y, eps: EpsilonPolicy, S: int, L: int, rng: RngStream, *,
                         cv: Optional[ControlVariateState] = None, noise_per_sample: bool = False):
    """Score-function (black-box) estimate of the bound gradient.

    theta is drawn with the same reparameterized sampler as the pathwise
    estimator but treated as a constant; only ``log q`` is differentiated::

        grad = (1/S) sum_s h_s (log p(y, theta_s) - log q(theta_s) - a)
        h_s  = d log q(theta_s) / d phi

    ``a`` is the control-variate scale (zero when ``cv`` is None).  Returns
    ``(bound_value, estimate, cv)``; the bound value is the sample mean of
    ``log p(y, theta) - log q(theta)``.  Negating ``estimate.grad`` gives the
    naive VBIL estimator.
    """
    _check_counts(S=S, L=L)
    y = _y(y)
    nu, u = _draw(family, sim, S, L, rng, noise_per_sample)
    H, W, failures, dims = [], [], 0, []
    for s in range(S):
        try:
            theta = family.sample(nu[s])
            ll = abc_loglik(sim, theta, y, u[s] if noise_per_sample else u, eps)
            log_joint = ll.value + ad.value_of(prior.log_pdf(theta))
            tape = ad.Tape()
            phi = tape.lift_all(family.phi)
            lq = family.log_pdf(theta, phi)
            h = tape.gradient(lq, phi)
        except _EVAL_ERRORS as err:
            raise BoundEvaluationError(str(err), s, err) from err
        H.append(h)
        W.append(log_joint - lq.value)
        failures += ll.failures
        dims.extend(ll.stats_dims)
    H = np.array(H)
    W = np.array(W)
    F = H * W[:, None]
    if cv is not None:
        cv = update_control_variate(cv, zip(F, H))
        a = np.array(cv.a_hat)
    else:
        a = np.zeros(H.shape[1])
    rows = F - a[None, :] * H
    bound = float(W.mean())
    if not math.isfinite(bound) or not np.all(np.isfinite(rows)):
        raise BoundEvaluationError(f"non-finite score-function estimate (bound {bound!r})")
    est = GradientEstimate(rows.mean(axis=0), bound, SCORE_FUNCTION, S, L, per_sample_grads=rows,
                           failures=failures, stats_dims=dims)
    return bound, est, cv


def vbil_naive_gradient(estimate: GradientEstimate) -> np.ndarray:
    """Naive VBIL gradient of KL(lambda): the negated score-function estimate."""
    return -estimate.grad


def latent_pathwise_bound(family_theta, family_z, prior_theta, prior_z, sim, y, eps: EpsilonPolicy,
                          S: int, K: int, L: int, rng: RngStream, *, kl_samples: int = DEFAULT_KL_SAMPLES,
                          per_datapoint: bool = False):
    """Bound with a factorized posterior over global theta and per-datapoint z.

    bound = (1/S)(1/K) sum_s sum_k log (1/L) sum_l K_eps(y, f(g(phi, nu_s), h(xi, w_k), u_l))
            - KL(q_phi || p(theta)) - KL(q_xi || p(z))

    Each ``w_k`` is one joint draw for all datapoints.  With ``per_datapoint``
    the kernel is factorized by datapoint, each with its own log-average over
    ``l``.  ``sim`` must provide ``run_latent(theta, z, u)``.  The gradient
    covers ``phi`` followed by ``xi``.
    """
    _check_counts(S=S, K=K, L=L)
    y = _y(y)
    nu, u = _draw(family_theta, sim, S, L, rng, False)
    w = family_z.draw_base(rng.generator("w"), K)
    tape = ad.Tape()
    phi = tape.lift_all(family_theta.phi)
    xi = tape.lift_all(family_z.phi)
    terms, failures, dims = [], 0, []
    for s in range(S):
        inner = []
        try:
            theta = family_theta.sample(nu[s], phi)
            for k in range(K):
                z = family_z.sample(w[k], xi)
                if per_datapoint:
                    inner.append(_factorized_loglik(sim, theta, z, y, u, eps))
                else:
                    ll = abc_loglik(sim, theta, y, u, eps, z=z)
                    inner.append(ll.value)
                    failures += ll.failures
                    dims.extend(ll.stats_dims)
        except _EVAL_ERRORS as err:
            raise BoundEvaluationError(str(err), s, err) from err
        terms.append(ad.mean(inner))
    kl_theta = kl_divergence(family_theta, prior_theta, phi, rng=rng.generator("kl"), n_samples=kl_samples)
    kl_z = kl_divergence(family_z, prior_z, xi, rng=rng.generator("misc"), n_samples=kl_samples)
    bound = ad.mean(terms) - kl_theta - kl_z
    _check_finite(bound)
    grad = np.array(tape.gradient(bound, list(phi) + list(xi)))
    est = GradientEstimate(grad, bound.value, PATHWISE, S, L, K=K, failures=failures, stats_dims=dims)
    return bound, est


def _factorized_loglik(sim, theta, z, y, u, eps):
    outs = [sim.run_latent(theta, z, u_l).stats for u_l in u]
    total = []
    for n, yn in enumerate(y):
        ks = []
        for stats in outs:
            e = select_epsilon(eps, theta=theta) if eps.kind == "bernoulli_analytic" else select_epsilon(eps)
            e_n = e[n] if isinstance(e, list) else e
            ks.append(gaussian_kernel_log([yn], [stats[n]], e_n))
        total.append(log_sum_exp(ks) - math.log(len(ks)) if len(ks) > 1 else ks[0])
    return ad.vsum(total)


@dataclass
class VarianceProfile:
    mean: np.ndarray
    variance: np.ndarray
    samples: np.ndarray
    estimator_kind: str
    S: int
    L: int


def gradient_variance_profile(estimator: str, family, prior, sim, y, eps: EpsilonPolicy, S: int, L: int,
                              n_repeats: int, rng: RngStream, **kwargs) -> VarianceProfile:
    """Repeated independent gradient estimates at a frozen ``family.phi``."""
    if n_repeats < 2:
        raise ValueError("n_repeats must be >= 2")
    samples = []
    for r in range(n_repeats):
        sub = rng.child(r)
        if estimator == PATHWISE:
            _, est = pathwise_bound(family, prior, sim, y, eps, S, L, sub, **kwargs)
        elif estimator == SCORE_FUNCTION:
            _, est, _ = score_function_bound(family, prior, sim, y, eps, S, L, sub, **kwargs)
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
        samples.append(est.grad)
    samples = np.array(samples)
    return VarianceProfile(samples.mean(axis=0), samples.var(axis=0, ddof=1), samples, estimator, S, L)


def bound_vs_sims(family, prior, sim, y, eps: EpsilonPolicy, S: int, Ls, n_repeats: int, rng: RngStream,
                  **kwargs) -> dict:
    """Mean pathwise bound value for each simulation count in ``Ls``.

    Exposes the downward bias of the log of a Monte-Carlo average, which
    shrinks as ``L`` grows.
    """
    out = {}
    for L in Ls:
        vals = [pathwise_bound(family, prior, sim, y, eps, S, L, rng.child(L, r), **kwargs)[1].bound_value
                for r in range(n_repeats)]
        out[int(L)] = float(np.mean(vals))
    return out
