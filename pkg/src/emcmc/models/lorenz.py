"""Stochastic Lorenz 63 system under an Euler-Maruyama discretisation."""

from __future__ import annotations

import math

import numpy as np

from emcmc.core import NonFiniteStateError, StateSpaceModel

_PRIOR_RATE = 0.1


def lorenz_drift(x: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Drift of the Lorenz 63 SDE for an ``(N, 3)`` batch of states."""
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    return np.stack(
        (rho[0] * (x2 - x1), rho[1] * x1 - x2 - x1 * x3, x1 * x2 - rho[2] * x3),
        axis=1,
    )


def lorenz_evolve(x, drift_params, diffusion_sd, dt: float, steps: int, z) -> np.ndarray:
    """Run ``steps`` Euler-Maruyama increments using normals ``z`` of shape ``(N, 3*steps)``.

    Raises:
        NonFiniteStateError: carrying the index of the offending inner step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.array(x, dtype=float, ndmin=2)
    rho = np.asarray(drift_params, dtype=float)
    noise = np.asarray(diffusion_sd, dtype=float) * math.sqrt(dt)
    z = np.asarray(z, dtype=float).reshape(x.shape[0], steps, 3)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(steps):
            x = x + lorenz_drift(x, rho) * dt + noise * z[:, k]
            if not np.isfinite(x).all():
                raise NonFiniteStateError(f"Lorenz state non-finite at inner step {k}", step=k)
    return x


class Lorenz63Model(StateSpaceModel):
    """Lorenz 63 SDE observed with iid Gaussian noise on every coordinate.

    ``theta`` holds the logs of the three drift parameters and of the three
    diffusion standard deviations; each natural-scale value has an
    exponential prior with rate 0.1.  The observation variance is known.
    """

    name = "lorenz63"
    param_names = ("log_theta1", "log_theta2", "log_theta3", "log_sigma1", "log_sigma2", "log_sigma3")
    dim_x = 3
    dim_y = 3
    init_normal_count = 0

    def __init__(self, dt: float = 0.01, inner_steps: int = 20, sigma_obs2: float = 2.0,
                 x0=(0.0, 0.0, 0.0)):
        if dt <= 0 or inner_steps < 1 or sigma_obs2 < 0:
            raise ValueError("need dt > 0, inner_steps >= 1 and sigma_obs2 >= 0")
        self.dt = float(dt)
        self.inner_steps = int(inner_steps)
        self.sigma_obs2 = float(sigma_obs2)
        self.x0 = np.asarray(x0, dtype=float)
        self.normal_draw_count = 3 * self.inner_steps

    def obs_matrix(self):
        return np.eye(3)

    def obs_cov(self, theta):
        return self.sigma_obs2 * np.eye(3)

    def log_prior(self, theta) -> float:
        return float(np.sum(math.log(_PRIOR_RATE) - _PRIOR_RATE * np.exp(theta) + theta))

    def initial_normals(self, theta, z):
        return np.tile(self.x0, (z.shape[0], 1))

    def evolve_normals(self, x, theta, t, z):
        nat = np.exp(theta)
        return lorenz_evolve(x, nat[:3], nat[3:], self.dt, self.inner_steps, z)

    def default_theta(self) -> np.ndarray:
        return np.log([10.0, 28.0, 8.0 / 3.0, math.sqrt(10.0), math.sqrt(10.0), math.sqrt(10.0)])
