"""Deterministic simulators ``x = f(theta, u)`` with externalized noise.

Each simulator declares the distribution of its noise vector ``u`` and maps
``(theta, u)`` to a vector of summary statistics.  The code is written against
:mod:`avabc.autodiff`, so it runs on plain floats and on tape variables alike.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Scalar

OBSERVATION_SCHEMA = "avabc.observation/1"


class InvalidParameterError(ValueError):
    """theta lies outside the simulator's valid region."""


class SimulationError(ArithmeticError):
    """A trajectory became non-finite; ``t`` is the failing step."""

    def __init__(self, simulator: str, t: int, value: float):
        self.simulator = simulator
        self.t = t
        self.value = value
        super().__init__(f"{simulator}: non-finite state {value!r} at t={t}")


@dataclass
class SimOutput:
    stats: list
    raw: Optional[list] = None


class Simulator:
    """Interface: ``noise_spec``, ``theta_dim``, ``statistics_dim`` and ``run``."""

    name: str = ""
    theta_dim: int = 1
    statistics_dim: int = 1

    @property
    def noise_spec(self) -> list[tuple[str, int]]:
        raise NotImplementedError

    @property
    def noise_dim(self) -> int:
        return sum(n for _, n in self.noise_spec)

    def draw_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` noise vectors, shape ``(n, noise_dim)``."""
        blocks = []
        for kind, size in self.noise_spec:
            if kind == "normal":
                blocks.append(rng.standard_normal((n, size)))
            elif kind == "uniform":
                blocks.append(np.clip(rng.random((n, size)), 1e-12, 1.0 - 1e-12))
            else:
                raise ValueError(f"unknown noise kind {kind!r}")
        return np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0))

    def run(self, theta: Sequence[Scalar], u) -> SimOutput:
        raise NotImplementedError

    def f(self, theta: Sequence[Scalar], u) -> list:
        return self.run(theta, u).stats

    def _check_dims(self, theta, u) -> None:
        if len(theta) != self.theta_dim:
            raise ValueError(f"{self.name}: theta has dimension {len(theta)}, expected {self.theta_dim}")
        if len(u) != self.noise_dim:
            raise ValueError(f"{self.name}: u has dimension {len(u)}, expected {self.noise_dim}")


@dataclass
class BernoulliSimulator(Simulator):
    """Normal approximation to Binomial(M, theta); the statistic is the output."""

    M: int = 100
    name = "bernoulli"
    theta_dim = 1
    statistics_dim = 1

    @property
    def noise_spec(self):
        return [("normal", 1)]

    def run(self, theta, u) -> SimOutput:
        self._check_dims(theta, u)
        p = theta[0]
        pv = ad.value_of(p)
        if not 0.0 < pv < 1.0:
            raise InvalidParameterError(f"bernoulli: theta={pv!r} outside (0, 1)")
        x = self.M * p + ad.sqrt(self.M * p * (1.0 - p)) * float(u[0])
        return SimOutput([x])


@dataclass
class ExponentialSimulator(Simulator):
    """Mean of ``M`` inverse-CDF exponential draws with rate ``theta``."""

    M: int = 15
    name = "exponential"
    theta_dim = 1
    statistics_dim = 1

    @property
    def noise_spec(self):
        return [("uniform", self.M)]

    def run(self, theta, u) -> SimOutput:
        self._check_dims(theta, u)
        lam = theta[0]
        lv = ad.value_of(lam)
        if not lv > 0.0:
            raise InvalidParameterError(f"exponential: rate {lv!r} must be positive")
        xs = [-math.log1p(-float(um)) / lam for um in u]
        return SimOutput([ad.mean(xs)], raw=xs)


def _quartile_means(values: list) -> list:
    """Means of the four quartile blocks of the sorted values.

    Block ``k`` holds sorted indices ``floor(k N/4) .. floor((k+1) N/4) - 1``.
    """
    n = len(values)
    ordered = sorted(values, key=ad.value_of)  # stable
    bounds = [(k * n) // 4 for k in range(5)]
    return [ad.mean(ordered[bounds[k] : bounds[k + 1]]) for k in range(4)]


def count_peaks(series: Sequence[float], threshold: float) -> int:
    """Points strictly above both neighbours and above ``threshold``."""
    c = 0
    for i in range(1, len(series) - 1):
        v = series[i]
        if v > threshold and v > series[i - 1] and v > series[i + 1]:
            c += 1
    return c


def blowfly_statistics(series: Sequence[Scalar], thresholds: Sequence[float]) -> list:
    """Ten summaries: 4 quartile means of the values, 4 of the first
    differences, and peak counts above two thresholds.

    The counts are piecewise constant in the inputs and enter as floats.
    """
    n = len(series)
    if n < 8:
        raise ValueError(f"blowfly statistics need a series of length >= 8, got {n}")
    if len(thresholds) != 2:
        raise ValueError("exactly two peak thresholds are required")
    series = list(series)
    diffs = [series[i + 1] - series[i] for i in range(n - 1)]
    vals = [ad.value_of(s) for s in series]
    peaks = [float(count_peaks(vals, th)) for th in thresholds]
    return _quartile_means(series) + _quartile_means(diffs) + peaks


@dataclass
class BlowflySimulator(Simulator):
    """Discrete-time blowfly population model with lag ``tau``.

    ``theta = (log P, log delta, log N0, log sigma_d, log sigma_p)``.  The
    multiplicative noise factors are mean-one log-normals matched to the
    variance of the Gamma(1/s^2, 1/s^2) factors of the original model:
    ``e_t = exp(s u_t - s^2/2)`` with ``s^2 = log(1 + sigma^2)``.
    """

    T: int = 100
    tau: int = 14
    n_init: float = 100.0
    peak_thresholds: tuple = (1.0, 1.5)
    name = "blowfly"
    theta_dim = 5
    statistics_dim = 10

    def __post_init__(self):
        if not (self.tau >= 1 and self.T > self.tau):
            raise ValueError(f"blowfly: need T > tau >= 1, got T={self.T}, tau={self.tau}")
        if self.T < 8:
            raise ValueError("blowfly: horizon too short for the statistics")

    @property
    def noise_spec(self):
        return [("normal", self.T), ("normal", self.T)]

    def trajectory(self, theta, u) -> list:
        """The ``T`` simulated states following the constant initial history."""
        self._check_dims(theta, u)
        for t in theta:
            if not math.isfinite(ad.value_of(t)):
                raise InvalidParameterError("blowfly: theta must be finite")
        T, tau = self.T, self.tau
        try:
            P = ad.exp(theta[0])
            delta = ad.exp(theta[1])
            neg_inv_n0 = -ad.exp(-theta[2])
            sd = ad.exp(theta[3])
            sp = ad.exp(theta[4])
            var_d = ad.log1p(sd * sd)
            var_p = ad.log1p(sp * sp)
            s_d = ad.sqrt(var_d)
            s_p = ad.sqrt(var_p)
        except (ad.NonFiniteError, ad.DomainError) as err:
            raise SimulationError(self.name, 0, math.inf) from err
        half_d = 0.5 * var_d
        half_p = 0.5 * var_p
        N = [self.n_init] * (tau + 1)
        for t in range(T):
            try:
                e = ad.exp(s_p * float(u[t]) - half_p)
                eps = ad.exp(s_d * float(u[T + t]) - half_d)
                lag = N[t]
                cur = N[t + tau]
                nxt = P * lag * ad.exp(lag * neg_inv_n0) * e + cur * ad.exp(-delta * eps)
            except (ad.NonFiniteError, OverflowError) as err:
                raise SimulationError(self.name, t + 1, math.inf) from err
            v = ad.value_of(nxt)
            if not math.isfinite(v):
                raise SimulationError(self.name, t + 1, v)
            N.append(nxt)
        return N[tau + 1 :]

    def run(self, theta, u) -> SimOutput:
        series = self.trajectory(theta, u)
        return SimOutput(blowfly_statistics(series, self.peak_thresholds), raw=series)

    def with_thresholds_from(self, series: Sequence[float], multiples=(1.0, 1.5)) -> "BlowflySimulator":
        m = float(np.mean(series))
        return BlowflySimulator(
            T=self.T, tau=self.tau, n_init=self.n_init, peak_thresholds=tuple(k * m for k in multiples)
        )


@dataclass
class LinearGaussianSimulator(Simulator):
    """``x_i = theta_i + noise_scale * u_i``; the conjugate toy."""

    dim: int = 1
    noise_scale: float = 1.0
    name = "linear_gaussian"
    statistics_dim = 1

    def __post_init__(self):
        self.theta_dim = self.dim
        self.statistics_dim = self.dim

    @property
    def noise_spec(self):
        return [("normal", self.dim)]

    def run(self, theta, u) -> SimOutput:
        self._check_dims(theta, u)
        return SimOutput([t + self.noise_scale * float(ui) for t, ui in zip(theta, u)])


@dataclass
class LatentSumSimulator:
    """Per-datapoint latent toy ``x_n = theta + z_n + noise_scale * u_n``."""

    n_data: int = 3
    noise_scale: float = 1.0
    name = "latent_sum"
    theta_dim = 1

    @property
    def statistics_dim(self) -> int:
        return self.n_data

    @property
    def noise_dim(self) -> int:
        return self.n_data

    def draw_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.n_data))

    def run_latent(self, theta, z, u) -> SimOutput:
        if len(z) != self.n_data or len(u) != self.n_data:
            raise ValueError("latent_sum: z and u must have one entry per datapoint")
        return SimOutput([theta[0] + zn + self.noise_scale * float(un) for zn, un in zip(z, u)])

    def f(self, theta, z, u) -> list:
        return self.run_latent(theta, z, u).stats


@dataclass
class WithoutLatents:
    """Adapts a plain simulator to the ``f(theta, z, u)`` signature with no latents."""

    sim: Simulator

    @property
    def name(self):
        return self.sim.name

    @property
    def statistics_dim(self):
        return self.sim.statistics_dim

    def draw_noise(self, rng, n):
        return self.sim.draw_noise(rng, n)

    def run_latent(self, theta, z, u) -> SimOutput:
        if len(z):
            raise ValueError("this simulator takes no latent variables")
        return self.sim.run(theta, u)

    def f(self, theta, z, u) -> list:
        return self.run_latent(theta, z, u).stats


SIMULATORS = {
    "bernoulli": BernoulliSimulator,
    "exponential": ExponentialSimulator,
    "blowfly": BlowflySimulator,
    "linear_gaussian": LinearGaussianSimulator,
}


def bernoulli_sim(theta: Scalar, u: float, M: int = 100) -> Scalar:
    return BernoulliSimulator(M=M).f([theta], [u])[0]


def exponential_sim(lam: Scalar, u: Sequence[float]) -> Scalar:
    return ExponentialSimulator(M=len(u)).f([lam], u)[0]


def blowfly_sim(theta, u, T: int = 100, tau: int = 14, n_init: float = 100.0, thresholds=(1.0, 1.5)) -> list:
    return BlowflySimulator(T=T, tau=tau, n_init=n_init, peak_thresholds=tuple(thresholds)).f(theta, u)


# --- observations -------------------------------------------------------------


@dataclass
class Observation:
    simulator: str
    y_stats: list
    raw: Optional[list] = None
    provenance: dict = field(default_factory=lambda: {"kind": "fixed"})

    def __post_init__(self):
        self.y_stats = [float(v) for v in self.y_stats]
        if self.raw is not None:
            self.raw = [float(v) for v in self.raw]
        if self.provenance.get("kind") not in ("fixed", "synthetic"):
            raise ValueError("provenance kind must be 'fixed' or 'synthetic'")

    def check_against(self, sim) -> None:
        if len(self.y_stats) != sim.statistics_dim:
            raise ValueError(
                f"observation has {len(self.y_stats)} statistics, simulator {sim.name} produces {sim.statistics_dim}"
            )

    def to_dict(self) -> dict:
        return {
            "schema": OBSERVATION_SCHEMA,
            "simulator": self.simulator,
            "statistics": self.y_stats,
            "raw": self.raw,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        if d.get("schema") != OBSERVATION_SCHEMA:
            raise ValueError(f"unsupported observation schema {d.get('schema')!r}")
        missing = [k for k in ("simulator", "statistics", "provenance") if k not in d]
        if missing:
            raise ValueError(f"observation is missing fields: {', '.join(missing)}")
        return cls(d["simulator"], d["statistics"], d.get("raw"), dict(d["provenance"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Observation":
        return cls.from_dict(json.loads(Path(path).read_text()))


def synthetic_blowfly_observation(theta_star, seed: int, T: int = 100, tau: int = 14, n_init: float = 100.0,
                                  multiples=(1.0, 1.5)) -> Observation:
    """Simulate a series at ``theta_star`` and summarize it.

    Peak thresholds are multiples of the series' own mean, so a simulator
    built with ``with_thresholds_from(obs.raw)`` reproduces ``y_stats``.
    """
    base = BlowflySimulator(T=T, tau=tau, n_init=n_init)
    rng = np.random.default_rng(seed)
    u = base.draw_noise(rng, 1)[0]
    series = base.trajectory(list(theta_star), u)
    sim = base.with_thresholds_from(series, multiples)
    stats = blowfly_statistics(series, sim.peak_thresholds)
    return Observation(
        "blowfly",
        stats,
        raw=series,
        provenance={
            "kind": "synthetic",
            "theta": [float(t) for t in theta_star],
            "seed": int(seed),
            "T": T,
            "tau": tau,
            "n_init": n_init,
            "peak_multiples": list(multiples),
        },
    )
