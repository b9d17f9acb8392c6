"""Reparameterized variational families, priors and KL divergences.

Every family stores its variational parameters ``phi`` unconstrained (positive
quantities as logs) and exposes ``sample(nu, phi)``, a deterministic transform
of parameterless base noise.  Passing ``phi`` as tape variables makes samples
and densities differentiable; leaving it out evaluates on plain floats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Scalar

LOG_2PI = math.log(2.0 * math.pi)
HALF_LOG_2PI = 0.5 * LOG_2PI

# uniform base draws are clamped to [UNIFORM_DELTA, 1 - UNIFORM_DELTA]
UNIFORM_DELTA = 1e-12
DEFAULT_KL_SAMPLES = 100


class SupportError(ValueError):
    """A point lies outside a distribution's support."""


def _check_open_unit(nu: float, what: str = "nu") -> None:
    if not 0.0 < nu < 1.0:
        raise SupportError(f"{what}={nu!r} must lie in the open interval (0, 1)")


def inverse_cdf_kumaraswamy(a: Scalar, b: Scalar, nu: float) -> Scalar:
    """Kumaraswamy quantile ``(1 - (1 - nu)**(1/b))**(1/a)``."""
    if ad.value_of(a) <= 0.0 or ad.value_of(b) <= 0.0:
        raise ValueError(f"Kumaraswamy parameters must be positive, got a={a!r}, b={b!r}")
    _check_open_unit(nu)
    # 1 - (1-nu)^(1/b) via expm1 keeps precision for small nu or large b
    inner = -ad.expm1(math.log1p(-nu) / b)
    return ad.exp(ad.log(inner) / a)


def cdf_kumaraswamy(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    return -math.expm1(b * math.log1p(-(x**a)))


class VariationalFamily:
    """Base class; concrete families are frozen dataclasses with a ``phi`` tuple."""

    kind: str = ""
    base: str = "normal"  # Q0: "normal" or "uniform"
    support: str = "real"  # "unit", "positive" or "real"
    phi: tuple
    dim: int

    def params(self, phi=None) -> Sequence[Scalar]:
        p = self.phi if phi is None else phi
        if len(p) != len(self.phi):
            raise ValueError(f"{self.kind}: expected {len(self.phi)} parameters, got {len(p)}")
        return p

    def with_phi(self, phi) -> "VariationalFamily":
        return replace(self, phi=tuple(float(x) for x in phi))

    def draw_base(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` draws of base noise, shape ``(n, dim)``."""
        if self.base == "uniform":
            nu = rng.random((n, self.dim))
            return np.clip(nu, UNIFORM_DELTA, 1.0 - UNIFORM_DELTA)
        return rng.standard_normal((n, self.dim))

    def _check_nu(self, nu) -> None:
        if len(nu) != self.dim:
            raise ValueError(f"{self.kind}: base draw has dimension {len(nu)}, expected {self.dim}")
        if self.base == "uniform":
            for v in nu:
                _check_open_unit(float(v))

    def _check_theta(self, theta) -> None:
        if len(theta) != self.dim:
            raise ValueError(f"{self.kind}: theta has dimension {len(theta)}, expected {self.dim}")
        for t in theta:
            v = ad.value_of(t)
            if not math.isfinite(v):
                raise SupportError(f"{self.kind}: theta={v!r} is not finite")
            if self.support == "unit" and not 0.0 < v < 1.0:
                raise SupportError(f"{self.kind}: theta={v!r} outside (0, 1)")
            if self.support == "positive" and not v > 0.0:
                raise SupportError(f"{self.kind}: theta={v!r} must be positive")


@dataclass(frozen=True)
class Kumaraswamy(VariationalFamily):
    """Kumaraswamy(a, b) on (0, 1), ``phi = (log a, log b)``."""

    phi: tuple = (0.0, 0.0)
    dim: int = field(default=1, init=False)
    kind = "Kumaraswamy"
    base = "uniform"
    support = "unit"

    @classmethod
    def from_ab(cls, a: float, b: float) -> "Kumaraswamy":
        return cls(phi=(math.log(a), math.log(b)))

    @property
    def a(self) -> float:
        return math.exp(self.phi[0])

    @property
    def b(self) -> float:
        return math.exp(self.phi[1])

    def constrained(self) -> dict:
        return {"a": self.a, "b": self.b}

    def sample(self, nu, phi=None) -> list:
        log_a, log_b = self.params(phi)
        self._check_nu(nu)
        return [inverse_cdf_kumaraswamy(ad.exp(log_a), ad.exp(log_b), float(nu[0]))]

    def log_pdf(self, theta, phi=None) -> Scalar:
        log_a, log_b = self.params(phi)
        self._check_theta(theta)
        x = theta[0]
        a = ad.exp(log_a)
        lx = ad.log(x)
        # log(1 - x^a) = log(-expm1(a log x))
        l1m = ad.log(-ad.expm1(a * lx))
        return log_a + log_b + (a - 1.0) * lx + (ad.exp(log_b) - 1.0) * l1m

    def raw_moment(self, n: int) -> float:
        a, b = self.a, self.b
        return b * math.exp(math.lgamma(1.0 + n / a) + math.lgamma(b) - math.lgamma(1.0 + n / a + b))

    def mean(self) -> np.ndarray:
        return np.array([self.raw_moment(1)])

    def variance(self) -> np.ndarray:
        m1 = self.raw_moment(1)
        return np.array([self.raw_moment(2) - m1 * m1])

    def pdf_grid(self, x: np.ndarray) -> np.ndarray:
        a, b = self.a, self.b
        return a * b * x ** (a - 1.0) * (1.0 - x**a) ** (b - 1.0)


@dataclass(frozen=True)
class _LocationScale(VariationalFamily):
    phi: tuple = (0.0, 0.0)

    @property
    def dim(self) -> int:
        return len(self.phi) // 2

    @classmethod
    def from_moments(cls, mu, sigma):
        mu = [float(m) for m in np.atleast_1d(mu)]
        sigma = [float(s) for s in np.atleast_1d(sigma)]
        if len(mu) != len(sigma):
            raise ValueError("mu and sigma must have equal length")
        if any(s <= 0.0 for s in sigma):
            raise ValueError("sigma must be positive")
        return cls(phi=tuple(mu) + tuple(math.log(s) for s in sigma))

    @property
    def mu(self) -> np.ndarray:
        return np.array(self.phi[: self.dim])

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(np.array(self.phi[self.dim :]))

    def constrained(self) -> dict:
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist()}

    def _split(self, phi):
        p = self.params(phi)
        d = self.dim
        return p[:d], p[d:]


@dataclass(frozen=True)
class DiagonalGaussian(_LocationScale):
    """Independent normals, ``phi = (mu_1..mu_d, log sigma_1..log sigma_d)``."""

    kind = "DiagonalGaussian"
    base = "normal"
    support = "real"

    def sample(self, nu, phi=None) -> list:
        mu, log_sigma = self._split(phi)
        self._check_nu(nu)
        return [m + ad.exp(ls) * float(n) for m, ls, n in zip(mu, log_sigma, nu)]

    def log_pdf(self, theta, phi=None) -> Scalar:
        mu, log_sigma = self._split(phi)
        self._check_theta(theta)
        terms = []
        for t, m, ls in zip(theta, mu, log_sigma):
            z = (t - m) * ad.exp(-ls)
            terms.append(-0.5 * z * z - ls - HALF_LOG_2PI)
        return ad.vsum(terms)

    def mean(self) -> np.ndarray:
        return self.mu

    def variance(self) -> np.ndarray:
        return self.sigma**2

    def pdf_grid(self, x: np.ndarray, i: int = 0) -> np.ndarray:
        m, s = self.mu[i], self.sigma[i]
        return np.exp(-0.5 * ((x - m) / s) ** 2) / (s * math.sqrt(2.0 * math.pi))


@dataclass(frozen=True)
class LogNormal(_LocationScale):
    """``theta = exp(mu + sigma * nu)``, ``phi = (mu..., log sigma...)``."""

    kind = "LogNormal"
    base = "normal"
    support = "positive"

    def sample(self, nu, phi=None) -> list:
        mu, log_sigma = self._split(phi)
        self._check_nu(nu)
        return [ad.exp(m + ad.exp(ls) * float(n)) for m, ls, n in zip(mu, log_sigma, nu)]

    def log_pdf(self, theta, phi=None) -> Scalar:
        mu, log_sigma = self._split(phi)
        self._check_theta(theta)
        terms = []
        for t, m, ls in zip(theta, mu, log_sigma):
            lt = ad.log(t)
            z = (lt - m) * ad.exp(-ls)
            terms.append(-0.5 * z * z - ls - HALF_LOG_2PI - lt)
        return ad.vsum(terms)

    def mean(self) -> np.ndarray:
        return np.exp(self.mu + 0.5 * self.sigma**2)

    def variance(self) -> np.ndarray:
        s2 = self.sigma**2
        return np.expm1(s2) * np.exp(2.0 * self.mu + s2)

    def pdf_grid(self, x: np.ndarray, i: int = 0) -> np.ndarray:
        m, s = self.mu[i], self.sigma[i]
        lx = np.log(x)
        return np.exp(-0.5 * ((lx - m) / s) ** 2) / (x * s * math.sqrt(2.0 * math.pi))


FAMILIES = {cls.kind: cls for cls in (Kumaraswamy, DiagonalGaussian, LogNormal)}


# --- priors -----------------------------------------------------------------


@dataclass(frozen=True)
class BetaPrior:
    a: float = 1.0
    b: float = 1.0
    kind = "beta"
    support = "unit"
    dim = 1

    def log_pdf(self, theta) -> Scalar:
        if len(theta) != 1:
            raise ValueError("Beta prior is one-dimensional")
        x = theta[0]
        v = ad.value_of(x)
        if not 0.0 < v < 1.0:
            raise SupportError(f"Beta prior: theta={v!r} outside (0, 1)")
        log_norm = math.lgamma(self.a + self.b) - math.lgamma(self.a) - math.lgamma(self.b)
        out = log_norm
        if self.a != 1.0:
            out = out + (self.a - 1.0) * ad.log(x)
        if self.b != 1.0:
            out = out + (self.b - 1.0) * ad.log(1.0 - x)
        return out

    def mean(self) -> np.ndarray:
        return np.array([self.a / (self.a + self.b)])

    def variance(self) -> np.ndarray:
        s = self.a + self.b
        return np.array([self.a * self.b / (s * s * (s + 1.0))])


@dataclass(frozen=True)
class GammaPrior:
    """Gamma with shape ``alpha`` and rate ``beta``."""

    alpha: float = 1.0
    beta: float = 1.0
    kind = "gamma"
    support = "positive"
    dim = 1

    def log_pdf(self, theta) -> Scalar:
        if len(theta) != 1:
            raise ValueError("Gamma prior is one-dimensional")
        x = theta[0]
        v = ad.value_of(x)
        if not v > 0.0:
            raise SupportError(f"Gamma prior: theta={v!r} must be positive")
        out = self.alpha * math.log(self.beta) - math.lgamma(self.alpha) - self.beta * x
        if self.alpha != 1.0:
            out = out + (self.alpha - 1.0) * ad.log(x)
        return out

    def mean(self) -> np.ndarray:
        return np.array([self.alpha / self.beta])

    def variance(self) -> np.ndarray:
        return np.array([self.alpha / self.beta**2])


@dataclass(frozen=True)
class GaussianPrior:
    means: tuple = (0.0,)
    stds: tuple = (1.0,)
    kind = "gaussian"
    support = "real"

    def __post_init__(self):
        if len(self.means) != len(self.stds):
            raise ValueError("means and stds must have equal length")
        if any(s <= 0.0 for s in self.stds):
            raise ValueError("prior stds must be positive")

    @property
    def dim(self) -> int:
        return len(self.means)

    def log_pdf(self, theta) -> Scalar:
        if len(theta) != self.dim:
            raise ValueError(f"Gaussian prior: theta has dimension {len(theta)}, expected {self.dim}")
        terms = []
        for t, m, s in zip(theta, self.means, self.stds):
            v = ad.value_of(t)
            if not math.isfinite(v):
                raise SupportError(f"Gaussian prior: theta={v!r} is not finite")
            z = (t - m) / s
            terms.append(-0.5 * z * z - math.log(s) - HALF_LOG_2PI)
        return ad.vsum(terms)

    def mean(self) -> np.ndarray:
        return np.array(self.means, dtype=float)

    def variance(self) -> np.ndarray:
        return np.array(self.stds, dtype=float) ** 2


PRIORS = {"beta": BetaPrior, "gamma": GammaPrior, "gaussian": GaussianPrior}


def prior_log_pdf(prior, theta) -> Scalar:
    return prior.log_pdf(theta)


def log_pdf(family: VariationalFamily, theta, phi=None) -> Scalar:
    return family.log_pdf(theta, phi)


def sample(family: VariationalFamily, nu, phi=None) -> list:
    return family.sample(nu, phi)


_SUPPORT_ORDER = {"unit": 0, "positive": 1, "real": 2}


def _supports_compatible(q_support: str, p_support: str) -> bool:
    return _SUPPORT_ORDER[q_support] <= _SUPPORT_ORDER[p_support]


def _gaussian_like(p) -> Optional[tuple]:
    if isinstance(p, GaussianPrior):
        return list(p.means), list(p.stds)
    if isinstance(p, DiagonalGaussian):
        return list(p.mu), list(p.sigma)
    return None


def kl_divergence(
    q: VariationalFamily,
    p,
    phi=None,
    *,
    rng: Optional[np.random.Generator] = None,
    n_samples: int = DEFAULT_KL_SAMPLES,
    nu: Optional[np.ndarray] = None,
) -> Scalar:
    """KL(q || p), differentiable in ``phi``.

    Gaussian against Gaussian is closed form.  Everything else is a
    reparameterized Monte-Carlo average over ``n_samples`` base draws (or the
    supplied ``nu``).  ``p`` may be a prior or another family with fixed
    parameters.
    """
    if q.dim != p.dim:
        raise ValueError(f"KL: dimension mismatch q={q.dim} p={p.dim}")
    if not _supports_compatible(q.support, p.support):
        raise SupportError(f"KL: q support '{q.support}' is not contained in prior support '{p.support}'")
    gauss = _gaussian_like(p)
    if isinstance(q, DiagonalGaussian) and gauss is not None:
        mu, log_sigma = q._split(phi)
        terms = []
        for m1, ls1, m2, s2 in zip(mu, log_sigma, *gauss):
            d = m1 - m2
            terms.append(math.log(s2) - ls1 + (ad.exp(2.0 * ls1) + d * d) / (2.0 * s2 * s2) - 0.5)
        return ad.vsum(terms)
    if nu is None:
        if rng is None:
            raise ValueError("Monte-Carlo KL needs either rng or nu")
        nu = q.draw_base(rng, n_samples)
    terms = []
    for row in nu:
        theta = q.sample(row, phi)
        terms.append(q.log_pdf(theta, phi) - p.log_pdf(theta))
    return ad.mean(terms)
