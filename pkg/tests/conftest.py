import numpy as np
import pytest

from avabc import autodiff as ad


def central_diff(f, x, h=1e-6):
    """Central finite differences of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h * max(1.0, abs(x[i]))
        g[i] = (f(x + e) - f(x - e)) / (2.0 * e[i])
    return g


def tape_grad(f, x):
    """Value and gradient of ``f`` (written with avabc.autodiff ops) at ``x``."""
    tape = ad.Tape()
    xs = tape.lift_all([float(v) for v in x])
    out = f(xs)
    return out.value, np.array(tape.gradient(out, xs))


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gaussian_toy_grad(mu, log_sigma, y, eps, m0, s0):
    """Exact gradient of E_q[log N(y | theta, eps^2)] - KL(q || N(m0, s0^2))
    for q = N(mu, exp(log_sigma)^2)."""
    s2 = np.exp(2.0 * log_sigma)
    d_mu = (y - mu) / eps**2 - (mu - m0) / s0**2
    d_rho = -s2 / eps**2 + 1.0 - s2 / s0**2
    return np.array([d_mu, d_rho])


ACCEPTANCE_LINES = []


def report(criterion: str, passed: bool, detail: str) -> None:
    """Record one acceptance line; printed in the terminal summary."""
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")
    print(ACCEPTANCE_LINES[-1])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
