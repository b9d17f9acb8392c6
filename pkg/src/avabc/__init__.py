"""Likelihood-free variational inference with pathwise gradients through
reparameterized simulators."""

from .abc_kernel import EpsilonPolicy, abc_loglik, gaussian_kernel_log, log_sum_exp, select_epsilon
from .autodiff import Tape, Var
from .config import RunConfig, build_problem, preset
from .distributions import (
    BetaPrior,
    DiagonalGaussian,
    GammaPrior,
    GaussianPrior,
    Kumaraswamy,
    LogNormal,
    kl_divergence,
)
from .engine import compare_runs, converged, run
from .estimators import (
    ControlVariateState,
    GradientEstimate,
    gradient_variance_profile,
    latent_pathwise_bound,
    pathwise_bound,
    score_function_bound,
    update_control_variate,
)
from .rng import RngStream
from .simulators import BernoulliSimulator, BlowflySimulator, ExponentialSimulator, Observation

__version__ = "0.1.0"
