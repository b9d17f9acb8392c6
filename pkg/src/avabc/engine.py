"""The optimization loop: draw, estimate, step, record, until convergence."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import estimators as est
from .abc_kernel import FAILURE_PENALTY
from .config import Problem, RunConfig, build_problem
from .optim import make_optimizer, step
from .rng import RngStream

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERS = "max_iters"
ABORTED = "aborted"
EXIT_CODES = {CONVERGED: 0, ABORTED: 1, MAX_ITERS: 2}


@dataclass
class IterRecord:
    iter: int
    bound: float
    smoothed_bound: float
    phi: list
    grad: list
    grad_norm: float
    sim_failures: int
    failed: bool
    n_statistics: int
    wall_time: float = 0.0


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    final_phi: list = field(default_factory=list)
    convergence_iter: Optional[int] = None
    termination: str = MAX_ITERS
    family_kind: str = ""
    config: dict = field(default_factory=dict)
    reinitializations: int = 0

    @property
    def bounds(self) -> np.ndarray:
        return np.array([r.bound for r in self.records])

    @property
    def smoothed(self) -> np.ndarray:
        return np.array([r.smoothed_bound for r in self.records])

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.termination]

    def csv_text(self) -> str:
        """Deterministic CSV (no timing columns), floats at full precision."""
        d = len(self.final_phi)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "bound", "smoothed_bound", "grad_norm", "sim_failures", "failed", "n_statistics"]
                   + [f"phi_{i}" for i in range(d)] + [f"grad_{i}" for i in range(d)])
        for r in self.records:
            w.writerow([r.iter, repr(r.bound), repr(r.smoothed_bound), repr(r.grad_norm), r.sim_failures,
                        int(r.failed), r.n_statistics] + [repr(x) for x in r.phi] + [repr(x) for x in r.grad])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "termination": self.termination,
            "convergence_iter": self.convergence_iter,
            "iterations": len(self.records) - 1,
            "family": self.family_kind,
            "final_phi": self.final_phi,
            "reinitializations": self.reinitializations,
            "records": [vars(r) for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


def converged(window, rho: float) -> bool:
    """Plateau test on a window of smoothed bound values.

    True when the means of the two halves differ by less than
    ``rho * (1 + |mean of first half|)``.
    """
    w = np.asarray(window, dtype=float)
    if len(w) < 2:
        raise ValueError("convergence window needs at least 2 values")
    h = len(w) // 2
    first = w[:h].mean()
    last = w[len(w) - h:].mean()
    return bool(abs(last - first) < rho * (1.0 + abs(first)))


def evaluate(config: RunConfig, problem: Problem, family, rng: RngStream, cv=None, family_z=None):
    """One estimate of the bound and gradient; returns ``(estimate, cv)``."""
    y = problem.observation.y_stats
    if config.latent is not None:
        _, e = est.latent_pathwise_bound(family, family_z, problem.prior, problem.prior_z, problem.sim, y,
                                         problem.eps, config.S, config.K, config.L, rng,
                                         kl_samples=config.kl_samples,
                                         per_datapoint=config.latent.per_datapoint)
        return e, cv
    if config.estimator == est.PATHWISE:
        _, e = est.pathwise_bound(family, problem.prior, problem.sim, y, problem.eps, config.S, config.L, rng,
                                  kl_samples=config.kl_samples, noise_per_sample=config.noise_per_sample)
        return e, cv
    _, e, cv = est.score_function_bound(family, problem.prior, problem.sim, y, problem.eps, config.S, config.L,
                                        rng, cv=cv, noise_per_sample=config.noise_per_sample)
    return e, cv


def run(config: RunConfig, problem: Optional[Problem] = None) -> RunTrace:
    """Run the optimizer from the configured initialization.

    Record ``i`` holds the bound and gradient evaluated at the parameters
    reached after ``i`` steps, so a run with ``max_iters = N`` has at most
    ``N + 1`` records.
    """
    config.validate()
    stream = RngStream(config.seed)
    if problem is None:
        problem = build_problem(config, stream.generator("init"))
    if config.latent is not None and config.estimator != est.PATHWISE:
        raise ValueError("latent-variable runs support the pathwise estimator only")
    init_family = problem.family
    family = init_family
    family_z = problem.family_z
    n_theta = len(family.phi)
    opt_kwargs = {k: getattr(config.optimizer, k) for k in ("lr", "beta1", "beta2", "eta")}
    opt = make_optimizer(config.optimizer.kind, **opt_kwargs)
    cv = None
    if config.estimator == est.SCORE_FUNCTION and config.control_variate:
        cv = est.ControlVariateState(max_window=config.cv_window)
    trace = RunTrace(family_kind=family.kind, config=config.to_dict())
    smoothed = None
    consecutive = 0
    s = config.smoothing
    for it in range(config.max_iters + 1):
        t0 = time.perf_counter()
        phi_now = list(family.phi) + (list(family_z.phi) if family_z is not None else [])
        try:
            e, cv = evaluate(config, problem, family, stream.child(it), cv, family_z)
            bound, grad, failed = e.bound_value, e.grad, False
            sim_failures = e.failures
            dims = set(e.stats_dims)
            n_stats = dims.pop() if len(dims) == 1 else -1
        except est.BoundEvaluationError as err:
            log.debug("iteration %d: bound evaluation failed: %s", it, err)
            bound, grad, failed = FAILURE_PENALTY, np.zeros(len(phi_now)), True
            sim_failures = config.L
            n_stats = -1
        if not failed:
            smoothed = bound if smoothed is None else s * smoothed + (1.0 - s) * bound
        rec = IterRecord(it, float(bound), float(smoothed if smoothed is not None else bound), phi_now,
                         [float(g) for g in grad], float(np.linalg.norm(grad)), int(sim_failures), failed,
                         int(n_stats), time.perf_counter() - t0)
        trace.records.append(rec)

        if trace.convergence_iter is None and len(trace.records) >= config.window:
            window = [r.smoothed_bound for r in trace.records[-config.window:]]
            if converged(window, config.rho):
                trace.convergence_iter = it
                if config.stop_on_convergence:
                    trace.termination = CONVERGED
                    break
        if it == config.max_iters:
            trace.termination = CONVERGED if trace.convergence_iter is not None else MAX_ITERS
            break
        if failed:
            consecutive += 1
            if consecutive >= config.max_consecutive_failures:
                log.warning("aborting after %d consecutive failed evaluations", consecutive)
                trace.termination = ABORTED
                break
            if config.reinitialize_on_invalid:
                family, family_z = init_family, problem.family_z
                opt = make_optimizer(config.optimizer.kind, **opt_kwargs)
                trace.reinitializations += 1
            continue
        consecutive = 0
        new_phi, opt = step(opt, phi_now, grad, maximize=True)
        if not np.all(np.isfinite(new_phi)):
            trace.termination = ABORTED
            break
        family = family.with_phi(new_phi[:n_theta])
        if family_z is not None:
            family_z = family_z.with_phi(new_phi[n_theta:])
    trace.final_phi = list(family.phi) + (list(family_z.phi) if family_z is not None else [])
    return trace


def _comparable(config: RunConfig) -> dict:
    d = config.to_dict()
    for k in ("estimator", "control_variate", "cv_window"):
        d.pop(k)
    return d


@dataclass
class Comparison:
    trace_a: RunTrace
    trace_b: RunTrace
    report: dict
    profiles: dict


def _conv_iter(trace: RunTrace) -> tuple[int, bool]:
    if trace.convergence_iter is not None:
        return trace.convergence_iter, True
    return len(trace.records) - 1, False


def compare_runs(config_a: RunConfig, config_b: RunConfig, seed: Optional[int] = None, *,
                 n_repeats: int = 100, profile_sizes=(1, 10)) -> Comparison:
    """Run two configurations that differ only in the estimator, with paired
    randomness, and profile both estimators' gradient variance at each run's
    final parameters."""
    if _comparable(config_a) != _comparable(config_b):
        raise ValueError("configurations differ in more than the estimator")
    if seed is not None:
        config_a = RunConfig.from_dict({**config_a.to_dict(), "seed": seed})
        config_b = RunConfig.from_dict({**config_b.to_dict(), "seed": seed})
    stream = RngStream(config_a.seed)
    problem = build_problem(config_a, stream.generator("init"))
    trace_a = run(config_a, problem)
    trace_b = run(config_b, problem)

    ia, ca = _conv_iter(trace_a)
    ib, cb = _conv_iter(trace_b)
    n = min(len(trace_a.records), len(trace_b.records))
    diff = float(np.max(np.abs(trace_a.bounds[:n] - trace_b.bounds[:n]))) if n else 0.0
    identical = trace_a.csv_text() == trace_b.csv_text()

    profiles = {}
    y = problem.observation.y_stats
    for label, trace in (("a_final", trace_a), ("b_final", trace_b)):
        fam = problem.family.with_phi(trace.final_phi[: len(problem.family.phi)])
        for kind in (est.PATHWISE, est.SCORE_FUNCTION):
            for S in profile_sizes:
                rng = RngStream(config_a.seed).child(10**6, S, 0 if label == "a_final" else 1)
                try:
                    prof = est.gradient_variance_profile(kind, fam, problem.prior, problem.sim, y, problem.eps,
                                                         S, S, n_repeats, rng)
                except est.BoundEvaluationError as err:
                    log.warning("variance profile %s/%s/S=%d failed: %s", label, kind, S, err)
                    continue
                profiles[(label, kind, S)] = prof

    report = {
        "estimator_a": config_a.estimator,
        "estimator_b": config_b.estimator,
        "seed": config_a.seed,
        "convergence_iter_a": ia,
        "converged_a": ca,
        "convergence_iter_b": ib,
        "converged_b": cb,
        "convergence_ratio_b_over_a": (ib / ia) if ia > 0 else math.inf,
        "final_bound_a": trace_a.records[-1].bound,
        "final_bound_b": trace_b.records[-1].bound,
        "final_smoothed_bound_a": trace_a.records[-1].smoothed_bound,
        "final_smoothed_bound_b": trace_b.records[-1].smoothed_bound,
        "max_abs_bound_difference": diff,
        "identical_traces": identical,
        "variance_profiles": [
            {"at": k[0], "estimator": k[1], "S": k[2], "L": k[2], "mean": p.mean.tolist(),
             "variance": p.variance.tolist()}
            for k, p in profiles.items()
        ],
    }
    return Comparison(trace_a, trace_b, report, profiles)
