"""Run configuration, experiment presets and problem construction.

A :class:`RunConfig` is plain data and round-trips through JSON.  Every
constant that shapes a run (optimizer settings, convergence window,
simulator horizon, thresholds, ...) lives here rather than in code.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .abc_kernel import EpsilonPolicy
from .distributions import FAMILIES, PRIORS, DiagonalGaussian, GaussianPrior
from .simulators import (
    BernoulliSimulator,
    BlowflySimulator,
    ExponentialSimulator,
    LatentSumSimulator,
    LinearGaussianSimulator,
    Observation,
)

PACKAGE_DATA_PREFIX = "package:"


class ConfigError(ValueError):
    """Invalid configuration; ``where`` names the offending field or position."""

    def __init__(self, where: str, message: str):
        self.where = where
        super().__init__(f"{where}: {message}")


@dataclass
class FamilySpec:
    """Variational family and its starting point.

    ``init`` holds constrained values: ``{"a", "b"}`` for Kumaraswamy,
    ``{"mu", "sigma"}`` (lists) for the location-scale families.
    ``init_uniform = [lo, hi]`` instead draws every constrained value from
    U(lo, hi) with the run's init stream.
    """

    kind: str = "Kumaraswamy"
    dim: int = 1
    init: Optional[dict] = None
    init_uniform: Optional[list] = None


@dataclass
class PriorSpec:
    kind: str = "beta"
    params: dict = field(default_factory=dict)


@dataclass
class EpsilonSpec:
    kind: str = "fixed"
    value: Any = None


@dataclass
class OptimizerSpec:
    kind: str = "adam"
    lr: Optional[float] = None
    beta1: Optional[float] = None
    beta2: Optional[float] = None
    eta: Optional[float] = None


@dataclass
class LatentSpec:
    """Per-datapoint latent variables with a Gaussian prior and family."""

    prior_mean: float = 0.0
    prior_std: float = 1.0
    init_mu: float = 0.0
    init_sigma: float = 1.0
    per_datapoint: bool = False


@dataclass
class RunConfig:
    simulator: str = "bernoulli"
    simulator_options: dict = field(default_factory=dict)
    observation: Any = None
    family: FamilySpec = field(default_factory=FamilySpec)
    prior: PriorSpec = field(default_factory=PriorSpec)
    estimator: str = "pathwise"
    S: int = 10
    L: int = 10
    K: int = 1
    epsilon: EpsilonSpec = field(default_factory=EpsilonSpec)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    max_iters: int = 500
    window: int = 50
    rho: float = 1e-3
    smoothing: float = 0.9
    stop_on_convergence: bool = True
    seed: int = 0
    kl_samples: int = 100
    control_variate: bool = False
    cv_window: int = 100
    noise_per_sample: bool = False
    max_consecutive_failures: int = 50
    reinitialize_on_invalid: bool = False
    latent: Optional[LatentSpec] = None
    preset: Optional[str] = None

    def validate(self) -> "RunConfig":
        for name in ("S", "L", "K", "window", "kl_samples", "cv_window", "max_consecutive_failures"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.window < 2:
            raise ConfigError("window", "must be >= 2")
        if self.max_iters < 0:
            raise ConfigError("max_iters", "must be >= 0")
        if not self.rho > 0.0:
            raise ConfigError("rho", "must be > 0")
        if not 0.0 <= self.smoothing < 1.0:
            raise ConfigError("smoothing", "must lie in [0, 1)")
        if self.estimator not in ("pathwise", "score_function"):
            raise ConfigError("estimator", f"unknown estimator {self.estimator!r}")
        if self.simulator not in SIMULATOR_BUILDERS:
            raise ConfigError("simulator", f"unknown simulator {self.simulator!r}")
        if self.family.kind not in FAMILIES:
            raise ConfigError("family.kind", f"unknown family {self.family.kind!r}")
        if self.prior.kind not in PRIORS:
            raise ConfigError("prior.kind", f"unknown prior {self.prior.kind!r}")
        if self.optimizer.kind not in ("adam", "adagrad"):
            raise ConfigError("optimizer.kind", f"unknown optimizer {self.optimizer.kind!r}")
        if self.seed < 0:
            raise ConfigError("seed", "must be non-negative")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _from_dict(cls, d, "").validate()

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"line {err.lineno}, column {err.colno}", err.msg) from None
        if not isinstance(d, dict):
            raise ConfigError("document", "top level must be an object")
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())


_NESTED = {"family": FamilySpec, "prior": PriorSpec, "epsilon": EpsilonSpec, "optimizer": OptimizerSpec,
           "latent": LatentSpec}


def _from_dict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(where or "document", "expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(known))
    if unknown:
        raise ConfigError(f"{where}{unknown[0]}", "unknown field")
    kwargs = {}
    for name, value in d.items():
        path = f"{where}{name}"
        if name in _NESTED and cls is RunConfig:
            kwargs[name] = None if value is None else _from_dict(_NESTED[name], value, path + ".")
            continue
        default = known[name].default
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        if isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(path, f"expected an integer, got {value!r}")
        if isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(path, f"expected a number, got {value!r}")
            value = float(value)
        kwargs[name] = value
    return cls(**kwargs)


def merge(config: RunConfig, overrides: dict) -> RunConfig:
    """Field-wise override; nested specs merge key by key."""
    d = config.to_dict()
    for k, v in overrides.items():
        if v is None:
            continue
        if isinstance(v, dict) and isinstance(d.get(k), dict):
            d[k] = {**d[k], **v}
        else:
            d[k] = v
    return RunConfig.from_dict(d)


# --- presets ------------------------------------------------------------------

BLOWFLY_PRIOR_MEANS = (2.0, -1.8, 6.0, -0.75, -0.5)
BLOWFLY_PRIOR_STDS = (2.0, 0.4, 0.5, 1.0, 1.0)
BLOWFLY_OBSERVATION = PACKAGE_DATA_PREFIX + "blowfly_observation.json"


def _bernoulli_preset() -> RunConfig:
    return RunConfig(
        simulator="bernoulli",
        simulator_options={"M": 100},
        observation={"schema": "avabc.observation/1", "simulator": "bernoulli", "statistics": [70.0],
                     "raw": None, "provenance": {"kind": "fixed", "k": 70, "M": 100}},
        family=FamilySpec(kind="Kumaraswamy", dim=1, init={"a": 1.0, "b": 1.0}),
        prior=PriorSpec(kind="beta", params={"a": 1.0, "b": 1.0}),
        S=10,
        L=10,
        epsilon=EpsilonSpec(kind="bernoulli_analytic", value=None),
        optimizer=OptimizerSpec(kind="adam", lr=0.3),
        max_iters=500,
        window=50,
        rho=1e-3,
        seed=1,
        preset="bernoulli",
    )


def _exponential_preset() -> RunConfig:
    return RunConfig(
        simulator="exponential",
        simulator_options={"M": 15},
        observation={"schema": "avabc.observation/1", "simulator": "exponential", "statistics": [1.0],
                     "raw": None, "provenance": {"kind": "fixed", "rate": 1.0, "M": 15,
                                                 "note": "y-bar set to the exponential mean 1/rate"}},
        family=FamilySpec(kind="LogNormal", dim=1, init_uniform=[2.0, 3.0]),
        prior=PriorSpec(kind="gamma", params={"alpha": 1.0, "beta": 1.0}),
        S=10,
        L=10,
        epsilon=EpsilonSpec(kind="simulation_scaled", value=None),
        optimizer=OptimizerSpec(kind="adam", lr=0.1),
        max_iters=10000,
        # the bound here is far noisier and slower than the Bernoulli one;
        # a short window declares convergence on noise long before the plateau
        window=500,
        rho=1e-2,
        seed=2,
        preset="exponential",
    )


def _blowfly_preset() -> RunConfig:
    return RunConfig(
        simulator="blowfly",
        simulator_options={"T": 100, "tau": 14, "n_init": 100.0, "peak_multiples": [1.0, 1.5]},
        observation=BLOWFLY_OBSERVATION,
        family=FamilySpec(kind="DiagonalGaussian", dim=5,
                          init={"mu": list(BLOWFLY_PRIOR_MEANS), "sigma": list(BLOWFLY_PRIOR_STDS)}),
        prior=PriorSpec(kind="gaussian", params={"means": list(BLOWFLY_PRIOR_MEANS),
                                                 "stds": list(BLOWFLY_PRIOR_STDS)}),
        S=5,
        L=5,
        epsilon=EpsilonSpec(kind="fixed", value="observation"),
        optimizer=OptimizerSpec(kind="adam", lr=0.02),
        max_iters=2000,
        window=50,
        rho=1e-3,
        seed=3,
        control_variate=True,
        preset="blowfly",
    )


def _latent_preset() -> RunConfig:
    return RunConfig(
        simulator="latent_sum",
        simulator_options={"n_data": 3, "noise_scale": 0.5},
        observation={"schema": "avabc.observation/1", "simulator": "latent_sum",
                     "statistics": [1.2, 0.4, 2.1], "raw": None, "provenance": {"kind": "fixed"}},
        family=FamilySpec(kind="DiagonalGaussian", dim=1, init={"mu": [0.0], "sigma": [1.0]}),
        prior=PriorSpec(kind="gaussian", params={"means": [0.0], "stds": [2.0]}),
        S=5,
        L=5,
        K=2,
        epsilon=EpsilonSpec(kind="fixed", value=0.5),
        optimizer=OptimizerSpec(kind="adam", lr=0.05),
        max_iters=1000,
        seed=4,
        latent=LatentSpec(),
        preset="latent",
    )


PRESETS = {
    "bernoulli": _bernoulli_preset,
    "exponential": _exponential_preset,
    "blowfly": _blowfly_preset,
    "latent": _latent_preset,
}


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return PRESETS[name]().validate()


# --- building the problem -----------------------------------------------------


@dataclass
class Problem:
    family: Any
    prior: Any
    sim: Any
    observation: Observation
    eps: EpsilonPolicy
    family_z: Any = None
    prior_z: Any = None


def load_observation(ref) -> Observation:
    if isinstance(ref, dict):
        return Observation.from_dict(ref)
    if isinstance(ref, str) and ref.startswith(PACKAGE_DATA_PREFIX):
        text = resources.files("avabc").joinpath("data", ref[len(PACKAGE_DATA_PREFIX):]).read_text()
        return Observation.from_dict(json.loads(text))
    if isinstance(ref, (str, Path)):
        return Observation.load(ref)
    raise ConfigError("observation", "expected an inline observation object or a file path")


def _build_sim(config: RunConfig, obs: Observation):
    opts = dict(config.simulator_options)
    name = config.simulator
    if name == "blowfly":
        multiples = opts.pop("peak_multiples", [1.0, 1.5])
        sim = BlowflySimulator(**opts)
        if obs.raw is None:
            raise ConfigError("observation", "blowfly observations must carry the raw series")
        return sim.with_thresholds_from(obs.raw, multiples)
    return SIMULATOR_BUILDERS[name](**opts)


SIMULATOR_BUILDERS = {
    "bernoulli": BernoulliSimulator,
    "exponential": ExponentialSimulator,
    "blowfly": BlowflySimulator,
    "linear_gaussian": LinearGaussianSimulator,
    "latent_sum": LatentSumSimulator,
}


def _build_prior(spec: PriorSpec):
    cls = PRIORS[spec.kind]
    params = dict(spec.params)
    if spec.kind == "gaussian":
        params = {"means": tuple(params.get("means", (0.0,))), "stds": tuple(params.get("stds", (1.0,)))}
    try:
        return cls(**params)
    except TypeError as err:
        raise ConfigError("prior.params", str(err)) from None


def initial_family(spec: FamilySpec, rng: Optional[np.random.Generator] = None):
    cls = FAMILIES[spec.kind]
    if spec.init_uniform is not None:
        lo, hi = spec.init_uniform
        if rng is None:
            raise ConfigError("family.init_uniform", "a random init needs a generator")
        n = 2 if spec.kind == "Kumaraswamy" else 2 * spec.dim
        vals = rng.uniform(lo, hi, size=n)
        if spec.kind == "Kumaraswamy":
            return cls.from_ab(*vals)
        return cls.from_moments(vals[: spec.dim], vals[spec.dim:])
    init = spec.init or {}
    if spec.kind == "Kumaraswamy":
        return cls.from_ab(float(init.get("a", 1.0)), float(init.get("b", 1.0)))
    mu = init.get("mu", [0.0] * spec.dim)
    sigma = init.get("sigma", [1.0] * spec.dim)
    if len(mu) != spec.dim or len(sigma) != spec.dim:
        raise ConfigError("family.init", f"mu and sigma need {spec.dim} entries")
    return cls.from_moments(mu, sigma)


def blowfly_epsilon(obs: Observation, sim: BlowflySimulator, n_sims: int = 200, floor: float = 0.5) -> list:
    """Per-statistic bandwidth: spread of each statistic across simulations at
    the generating parameters, floored to keep count statistics usable."""
    theta = obs.provenance.get("theta")
    if theta is None:
        raise ConfigError("epsilon.value", "'observation' bandwidths need provenance.theta")
    rng = np.random.default_rng(int(obs.provenance.get("seed", 0)) + 1)
    noise = sim.draw_noise(rng, n_sims)
    stats = np.array([sim.f(list(theta), u) for u in noise])
    return [float(max(s, floor)) for s in stats.std(axis=0, ddof=1)]


def build_problem(config: RunConfig, rng: Optional[np.random.Generator] = None) -> Problem:
    obs = load_observation(config.observation)
    if obs.simulator != config.simulator:
        raise ConfigError("observation", f"observation is for '{obs.simulator}', config runs '{config.simulator}'")
    sim = _build_sim(config, obs)
    obs.check_against(sim)
    family = initial_family(config.family, rng)
    prior = _build_prior(config.prior)
    if family.dim != prior.dim:
        raise ConfigError("prior", f"prior dimension {prior.dim} does not match family dimension {family.dim}")
    value = config.epsilon.value
    if config.epsilon.kind == "fixed" and value == "observation":
        value = blowfly_epsilon(obs, sim)
    eps = EpsilonPolicy(config.epsilon.kind, value)
    problem = Problem(family, prior, sim, obs, eps)
    if config.latent is not None:
        n = sim.statistics_dim
        lat = config.latent
        problem.family_z = DiagonalGaussian.from_moments([lat.init_mu] * n, [lat.init_sigma] * n)
        problem.prior_z = GaussianPrior((lat.prior_mean,) * n, (lat.prior_std,) * n)
    return problem


def clone(config: RunConfig) -> RunConfig:
    return copy.deepcopy(config)
