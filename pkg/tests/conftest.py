import numpy as np
import pytest
from scipy import stats

from emcmc.core import Dataset
from emcmc.models import LinearGaussianModel, LinearGaussianParams, build_model, simulate_dataset
from emcmc.rand import RngStream


def scalar_walk(obs_var=1.0, proc_var=1.0, init_var=1.0, init_mean=0.0):
    """One-dimensional random walk observed directly; ``theta`` is a dummy."""

    def matrices(theta):
        return LinearGaussianParams.of(1.0, proc_var, 1.0, obs_var, [init_mean], init_var)

    return LinearGaussianModel(matrices, ("dummy",), lambda theta: 0.0, truth=(0.0,))


def constant_mean_model(obs_sd=1.0, prior_sd=2.0):
    """``y_t ~ N(mu, obs_sd^2)`` with a N(0, prior_sd^2) prior on ``mu``."""

    def matrices(theta):
        return LinearGaussianParams.of(1.0, 0.0, 1.0, obs_sd**2, [theta[0]], 0.0)

    def log_prior(theta):
        return float(stats.norm.logpdf(theta[0], 0.0, prior_sd))

    return LinearGaussianModel(matrices, ("mu",), log_prior, truth=(1.0,))


@pytest.fixture
def walk_data():
    model = scalar_walk()
    return model, simulate_dataset(model, model.default_theta(), 5, RngStream(3))


@pytest.fixture(scope="session")
def linear_model_data():
    model = build_model("linear-gaussian")
    return model, simulate_dataset(model, model.default_theta(), 10, RngStream(1))


@pytest.fixture(scope="session")
def ricker_data():
    model = build_model("ricker")
    return model, simulate_dataset(model, model.default_theta(), 49, RngStream(5), include_y0=True)


def dataset(y, start=1):
    y = np.asarray(y, dtype=float)
    return Dataset(np.arange(start, start + len(y)), y)
