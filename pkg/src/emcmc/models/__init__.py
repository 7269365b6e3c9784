"""Benchmark model zoo and data simulation."""

from __future__ import annotations

import inspect
from typing import Any, Mapping, Optional

import numpy as np

from emcmc.core import ConfigError, Dataset, StateSpaceModel, as_theta, psd_sqrt
from emcmc.models.ecology import VARIANTS, EcologyModel, OverflowClampWarning, growth
from emcmc.models.linear import LinearGaussianModel, LinearGaussianParams
from emcmc.models.lorenz import Lorenz63Model, lorenz_drift, lorenz_evolve
from emcmc.models.reactions import (
    AUTOREGULATORY,
    LOTKA_VOLTERRA,
    AutoregulatoryModel,
    LotkaVolterraModel,
    ReactionNetwork,
    ReactionNetworkModel,
    gillespie_evolve,
    gillespie_step,
)
from emcmc.rand import RngStream

MODEL_NAMES = (
    "ricker",
    "theta-logistic",
    "mate-limited",
    "flexible-allee",
    "lorenz63",
    "lotka-volterra",
    "autoreg",
    "linear-gaussian",
)

_FACTORIES = {
    "lorenz63": Lorenz63Model,
    "lotka-volterra": LotkaVolterraModel,
    "autoreg": AutoregulatoryModel,
    "linear-gaussian": LinearGaussianModel,
}


def build_model(name: str, overrides: Optional[Mapping[str, Any]] = None) -> StateSpaceModel:
    """Construct a model by name, passing ``overrides`` as constructor keywords.

    Raises:
        ConfigError: for an unknown name or an override the model does not accept.
    """
    overrides = dict(overrides or {})
    if name in VARIANTS:
        if overrides:
            raise ConfigError(f"model {name!r} takes no overrides, got {sorted(overrides)}")
        return EcologyModel(name)
    factory = _FACTORIES.get(name)
    if factory is None:
        raise ConfigError(f"unknown model {name!r}; choose from {', '.join(MODEL_NAMES)}")
    accepted = set(inspect.signature(factory).parameters)
    unknown = sorted(set(overrides) - accepted)
    if unknown:
        raise ConfigError(f"model {name!r} does not accept overrides {unknown}")
    try:
        return factory(**overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid overrides for {name!r}: {exc}") from exc


def simulation_obs_cov(model: StateSpaceModel, theta) -> np.ndarray:
    """Observation covariance used to generate data (ignores any variance floor)."""
    if isinstance(model, ReactionNetworkModel):
        return np.diag(model.noise_variances(theta))
    return np.atleast_2d(model.obs_cov(theta))


def simulate_dataset(
    model: StateSpaceModel,
    theta,
    n_steps: int,
    rng: RngStream,
    include_y0: bool = False,
) -> Dataset:
    """Forward-simulate ``n_steps`` transitions and noisy observations.

    Observations are taken at times ``1..n_steps`` (``0..n_steps`` with
    ``include_y0``).  The latent path, including ``x_0``, is kept in
    ``Dataset.states`` with one row per observation time.
    """
    theta = as_theta(theta, model.n_params)
    if n_steps < 1:
        raise ConfigError("need at least one time step")
    if not np.isfinite(model.prior_logpdf(theta)):
        raise ConfigError("simulation parameters lie outside the prior support")
    P = np.atleast_2d(model.obs_matrix())
    noise_sd = psd_sqrt(simulation_obs_cov(model, theta))
    x = model.sample_initial(theta, 1, rng)
    states = [x[0]]
    for t in range(1, n_steps + 1):
        x = model.evolve(x, theta, t, rng)
        states.append(x[0])
    states = np.array(states)
    start = 0 if include_y0 else 1
    kept = states[start:]
    y = kept @ P.T + rng.normals(kept.shape[0] * model.dim_y).reshape(-1, model.dim_y) @ noise_sd.T
    times = np.arange(start, n_steps + 1)
    return Dataset(times, y, kept)


__all__ = [
    "AUTOREGULATORY",
    "LOTKA_VOLTERRA",
    "MODEL_NAMES",
    "VARIANTS",
    "AutoregulatoryModel",
    "EcologyModel",
    "LinearGaussianModel",
    "LinearGaussianParams",
    "Lorenz63Model",
    "LotkaVolterraModel",
    "OverflowClampWarning",
    "ReactionNetwork",
    "ReactionNetworkModel",
    "build_model",
    "gillespie_evolve",
    "gillespie_step",
    "growth",
    "lorenz_drift",
    "lorenz_evolve",
    "simulate_dataset",
    "simulation_obs_cov",
]
