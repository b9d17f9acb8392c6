import numpy as np
import pytest

from avabc import autodiff as ad
from avabc.abc_kernel import EpsilonPolicy
from avabc.distributions import BetaPrior, DiagonalGaussian, GammaPrior, GaussianPrior, Kumaraswamy, LogNormal
from avabc.estimators import (
    BoundEvaluationError,
    ControlVariateState,
    gradient_variance_profile,
    latent_pathwise_bound,
    pathwise_bound,
    score_function_bound,
    update_control_variate,
    vbil_naive_gradient,
)
from avabc.rng import RngStream
from avabc.simulators import (
    BernoulliSimulator,
    BlowflySimulator,
    ExponentialSimulator,
    LatentSumSimulator,
    LinearGaussianSimulator,
    WithoutLatents,
)

from conftest import central_diff, gaussian_toy_grad, rel_err

TOY_Y, TOY_EPS, TOY_M0, TOY_S0 = 1.3, 0.8, 0.0, 2.0


def toy():
    return LinearGaussianSimulator(dim=1, noise_scale=0.0), GaussianPrior((TOY_M0,), (TOY_S0,))


def bound_fd(family, prior, sim, y, eps, S, L, stream, **kw):
    def f(phi):
        return pathwise_bound(family.with_phi(tuple(phi)), prior, sim, y, eps, S, L, stream, **kw)[1].bound_value
    return central_diff(f, family.phi)


@pytest.mark.parametrize("case", ["bernoulli", "exponential", "gaussian"])
def test_pathwise_gradient_matches_common_random_number_fd(case):
    stream = RngStream(7, (1,))
    if case == "bernoulli":
        fam, prior, sim = Kumaraswamy.from_ab(3.0, 2.0), BetaPrior(), BernoulliSimulator()
        y, eps = [70.0], EpsilonPolicy("bernoulli_analytic")
    elif case == "exponential":
        fam, prior, sim = LogNormal.from_moments([0.0], [0.3]), GammaPrior(), ExponentialSimulator()
        y, eps = [1.0], EpsilonPolicy("simulation_scaled")
    else:
        (sim, prior), fam = toy(), DiagonalGaussian.from_moments([0.4], [0.7])
        y, eps = [TOY_Y], EpsilonPolicy("fixed", TOY_EPS)
    _, est = pathwise_bound(fam, prior, sim, y, eps, 4, 3, stream)
    assert rel_err(est.grad, bound_fd(fam, prior, sim, y, eps, 4, 3, stream)) < 1e-5


def test_same_stream_same_estimate():
    sim, prior = toy()
    fam = DiagonalGaussian.from_moments([0.1], [1.0])
    eps = EpsilonPolicy("fixed", 1.0)
    a = pathwise_bound(fam, prior, sim, [1.0], eps, 5, 2, RngStream(3))[1]
    b = pathwise_bound(fam, prior, sim, [1.0], eps, 5, 2, RngStream(3))[1]
    c = pathwise_bound(fam, prior, sim, [1.0], eps, 5, 2, RngStream(4))[1]
    assert np.array_equal(a.grad, b.grad) and a.bound_value == b.bound_value
    assert not np.array_equal(a.grad, c.grad)


def test_per_sample_rows_average_to_full_gradient():
    fam, prior, sim = Kumaraswamy.from_ab(3.0, 2.0), BetaPrior(), BernoulliSimulator()
    eps = EpsilonPolicy("bernoulli_analytic")
    full = pathwise_bound(fam, prior, sim, [70.0], eps, 6, 4, RngStream(1))[1]
    rows = pathwise_bound(fam, prior, sim, [70.0], eps, 6, 4, RngStream(1), per_sample=True)[1]
    assert rows.per_sample_grads.shape == (6, 2)
    assert np.allclose(rows.grad, full.grad, rtol=1e-10)
    assert rows.bound_value == pytest.approx(full.bound_value, rel=1e-12)


def test_noise_per_sample_changes_draws():
    fam, prior, sim = Kumaraswamy.from_ab(3.0, 2.0), BetaPrior(), BernoulliSimulator()
    eps = EpsilonPolicy("bernoulli_analytic")
    shared = pathwise_bound(fam, prior, sim, [70.0], eps, 3, 2, RngStream(1))[1]
    own = pathwise_bound(fam, prior, sim, [70.0], eps, 3, 2, RngStream(1), noise_per_sample=True)[1]
    assert shared.bound_value != own.bound_value


@pytest.mark.parametrize("kind", ["pathwise", "score"])
def test_toy_gradients_are_unbiased(kind):
    sim, prior = toy()
    fam = DiagonalGaussian.from_moments([0.3], [0.6])
    eps = EpsilonPolicy("fixed", TOY_EPS)
    if kind == "pathwise":
        est = pathwise_bound(fam, prior, sim, [TOY_Y], eps, 4000, 1, RngStream(11), per_sample=True)[1]
    else:
        est = score_function_bound(fam, prior, sim, [TOY_Y], eps, 4000, 1, RngStream(11))[1]
    se = est.per_sample_grads.std(axis=0, ddof=1) / np.sqrt(4000)
    exact = gaussian_toy_grad(0.3, np.log(0.6), TOY_Y, TOY_EPS, TOY_M0, TOY_S0)
    assert np.all(np.abs(est.grad - exact) < 4 * se + 1e-12)


def test_score_function_bound_and_vbil_sign():
    fam, prior, sim = Kumaraswamy.from_ab(3.0, 2.0), BetaPrior(), BernoulliSimulator()
    eps = EpsilonPolicy("bernoulli_analytic")
    bound, est, cv = score_function_bound(fam, prior, sim, [70.0], eps, 5, 5, RngStream(2))
    assert cv is None
    assert np.array_equal(vbil_naive_gradient(est), -est.grad)
    assert bound == est.bound_value
    assert est.per_sample_grads.shape == (5, 2)


def test_control_variate_independent_pairs(rng):
    f = rng.standard_normal((100, 2))
    h = rng.standard_normal((100, 2))
    cv = update_control_variate(ControlVariateState(), zip(f, h))
    se = 1.0 / np.sqrt(100)
    assert np.all(np.abs(cv.a_hat) < 3 * se)


def test_control_variate_recovers_linear_scale(rng):
    h = rng.standard_normal((100, 1))
    f = 2.5 * h + 0.01 * rng.standard_normal((100, 1))
    cv = update_control_variate(ControlVariateState(), zip(f, h))
    assert cv.a_hat[0] == pytest.approx(2.5, abs=0.01)


def test_control_variate_degenerate_windows():
    cv = update_control_variate(ControlVariateState(), [([1.0, 2.0], [0.5, 0.5])])
    assert cv.a_hat == (0.0, 0.0)
    cv = update_control_variate(ControlVariateState(), [([1.0], [0.5]), ([2.0], [0.5])])
    assert cv.a_hat == (0.0,)


def test_control_variate_window_is_bounded(rng):
    cv = ControlVariateState(max_window=10)
    for _ in range(5):
        cv = update_control_variate(cv, zip(rng.standard_normal((4, 1)), rng.standard_normal((4, 1))))
    assert len(cv.window) == 10


def test_control_variate_reduces_variance_on_toy():
    sim, prior = toy()
    fam = DiagonalGaussian.from_moments([0.3], [0.6])
    eps = EpsilonPolicy("fixed", TOY_EPS)
    plain, with_cv = [], []
    cv = ControlVariateState()
    for r in range(200):
        plain.append(score_function_bound(fam, prior, sim, [TOY_Y], eps, 2, 1, RngStream(9, (r,)))[1].grad)
        _, e, cv = score_function_bound(fam, prior, sim, [TOY_Y], eps, 2, 1, RngStream(9, (r,)), cv=cv)
        with_cv.append(e.grad)
    v_plain = np.var(plain[100:], axis=0)
    v_cv = np.var(with_cv[100:], axis=0)
    # allow estimation noise of the variance ratio at n=100
    assert np.all(v_cv < 1.5 * v_plain)


def test_invalid_parameters_surface_as_bound_errors():
    sim = BlowflySimulator(T=30, tau=3)
    fam = DiagonalGaussian.from_moments([800.0, -5.0, 700.0, 0.0, 0.0], [0.01] * 5)
    prior = GaussianPrior((0.0,) * 5, (1.0,) * 5)
    with pytest.raises(BoundEvaluationError):
        pathwise_bound(fam, prior, sim, [1.0] * 10, EpsilonPolicy("fixed", 1.0), 2, 2, RngStream(0))


def test_latent_bound_degenerates_to_base_bound():
    fam, prior, sim = Kumaraswamy.from_ab(3.0, 2.0), BetaPrior(), BernoulliSimulator()
    eps = EpsilonPolicy("bernoulli_analytic")
    z_fam = DiagonalGaussian(phi=())
    z_prior = GaussianPrior((), ())
    base = pathwise_bound(fam, prior, sim, [70.0], eps, 4, 3, RngStream(8))[1]
    lat = latent_pathwise_bound(fam, z_fam, prior, z_prior, WithoutLatents(sim), [70.0], eps, 4, 1, 3,
                                RngStream(8))[1]
    assert lat.bound_value == base.bound_value
    assert np.array_equal(lat.grad, base.grad)


@pytest.mark.parametrize("per_datapoint", [False, True])
def test_latent_gradient_matches_fd(per_datapoint):
    sim = LatentSumSimulator(n_data=3, noise_scale=0.5)
    fam = DiagonalGaussian.from_moments([0.2], [0.8])
    z_fam = DiagonalGaussian.from_moments([0.1, -0.2, 0.3], [0.9, 1.1, 0.7])
    prior, z_prior = GaussianPrior((0.0,), (2.0,)), GaussianPrior((0.0,) * 3, (1.0,) * 3)
    y, eps = [1.2, 0.4, 2.1], EpsilonPolicy("fixed", 0.5)
    stream = RngStream(4)
    _, est = latent_pathwise_bound(fam, z_fam, prior, z_prior, sim, y, eps, 3, 2, 4, stream,
                                   per_datapoint=per_datapoint)

    def f(v):
        return latent_pathwise_bound(fam.with_phi(tuple(v[:2])), z_fam.with_phi(tuple(v[2:])), prior, z_prior,
                                     sim, y, eps, 3, 2, 4, stream, per_datapoint=per_datapoint)[1].bound_value

    assert rel_err(est.grad, central_diff(f, list(fam.phi) + list(z_fam.phi))) < 1e-5


def test_variance_profile_shapes():
    fam, prior, sim = Kumaraswamy.from_ab(3.0, 2.0), BetaPrior(), BernoulliSimulator()
    eps = EpsilonPolicy("bernoulli_analytic")
    prof = gradient_variance_profile("pathwise", fam, prior, sim, [70.0], eps, 1, 1, 20, RngStream(0))
    assert prof.samples.shape == (20, 2)
    assert np.allclose(prof.variance, prof.samples.var(axis=0, ddof=1))
    with pytest.raises(ValueError):
        gradient_variance_profile("other", fam, prior, sim, [70.0], eps, 1, 1, 20, RngStream(0))
