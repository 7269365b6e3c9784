"""Linear Gaussian state space models, the test bed with an exact likelihood."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from emcmc.core import StateSpaceModel, as_theta, psd_sqrt


@dataclass(frozen=True)
class LinearGaussianParams:
    """Matrices of ``x_t = A x_{t-1} + N(0, Q)``, ``y_t = P x_t + N(0, S)``, ``x_0 ~ N(m0, C0)``."""

    A: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    S: np.ndarray
    m0: np.ndarray
    C0: np.ndarray

    @classmethod
    def of(cls, A, Q, P, S, m0, C0) -> "LinearGaussianParams":
        return cls(
            np.atleast_2d(np.asarray(A, dtype=float)),
            np.atleast_2d(np.asarray(Q, dtype=float)),
            np.atleast_2d(np.asarray(P, dtype=float)),
            np.atleast_2d(np.asarray(S, dtype=float)),
            np.atleast_1d(np.asarray(m0, dtype=float)),
            np.atleast_2d(np.asarray(C0, dtype=float)),
        )


def _default_matrices(theta: np.ndarray) -> LinearGaussianParams:
    phi, log_sx, log_sy = theta
    A = np.array([[phi, 0.2], [-0.2, phi]])
    return LinearGaussianParams.of(
        A,
        math.exp(2 * log_sx) * np.eye(2),
        [[1.0, 0.0]],
        [[math.exp(2 * log_sy)]],
        [0.0, 0.0],
        np.eye(2),
    )


def _default_prior(theta: np.ndarray) -> float:
    phi, log_sx, log_sy = theta
    if not -1.0 < phi < 1.0:
        return -math.inf
    return math.log(0.5) - 0.5 * (log_sx**2 + log_sy**2) - math.log(2 * math.pi)


class LinearGaussianModel(StateSpaceModel):
    """Linear Gaussian model whose matrices are a function of ``theta``.

    The default is a damped rotation in two dimensions with only the first
    coordinate observed: ``theta = (phi, log sigma_x, log sigma_y)`` with
    ``phi ~ U(-1, 1)`` and the log-scales standard normal.
    """

    name = "linear-gaussian"

    def __init__(
        self,
        matrices: Callable[[np.ndarray], LinearGaussianParams] = _default_matrices,
        param_names: Sequence[str] = ("phi", "log_sigma_x", "log_sigma_y"),
        log_prior: Callable[[np.ndarray], float] = _default_prior,
        truth: Optional[Sequence[float]] = (0.8, math.log(0.5), math.log(0.5)),
    ):
        self.matrices = matrices
        self.param_names = tuple(param_names)
        self._log_prior = log_prior
        self._truth = None if truth is None else np.asarray(truth, dtype=float)
        probe = matrices(self._truth if self._truth is not None else np.zeros(len(self.param_names)))
        self.dim_x = probe.A.shape[0]
        self.dim_y = probe.P.shape[0]
        self._P = probe.P
        self.normal_draw_count = self.dim_x
        self.init_normal_count = self.dim_x

    def kalman_params(self, theta) -> LinearGaussianParams:
        return self.matrices(as_theta(theta, self.n_params))

    def obs_matrix(self) -> np.ndarray:
        return self._P

    def obs_cov(self, theta) -> np.ndarray:
        return self.matrices(theta).S

    def log_prior(self, theta) -> float:
        return self._log_prior(theta)

    def initial_normals(self, theta, z):
        p = self.matrices(theta)
        return p.m0 + z @ psd_sqrt(p.C0).T

    def evolve_normals(self, x, theta, t, z):
        p = self.matrices(theta)
        return x @ p.A.T + z @ psd_sqrt(p.Q).T

    def default_theta(self) -> np.ndarray:
        if self._truth is None:
            raise NotImplementedError("no default parameters for this linear model")
        return self._truth.copy()
