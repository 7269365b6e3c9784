"""State space model contract shared by every filter and sampler.

A model describes a latent Markov chain observed through a linear
Gaussian map, ``y_t | x_t ~ N(P x_t, S(theta))``.  All randomness a
model consumes arrives through an explicitly passed
:class:`~emcmc.rand.RngStream` (or, for models that declare
``normal_draw_count``, through pre-drawn standard normals), so model
objects hold no mutable state and can be shared freely.

Ensembles are stored as ``(N, dim_x)`` arrays throughout.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

if TYPE_CHECKING:
    from emcmc.rand import RngStream

LOG_2PI = math.log(2.0 * math.pi)


class EmcmcError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(EmcmcError, ValueError):
    """Array or parameter vector has the wrong shape."""


class SingularCovarianceError(EmcmcError, np.linalg.LinAlgError):
    """A covariance matrix could not be factorized."""


class NonFiniteStateError(EmcmcError, FloatingPointError):
    """Simulated state became NaN or infinite."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ConfigError(EmcmcError, ValueError):
    """Invalid model, estimator or run configuration."""


class DomainError(EmcmcError, ValueError):
    """Argument outside the domain of a function."""


def as_theta(theta: Sequence[float] | np.ndarray, dim: int) -> np.ndarray:
    """Validate a parameter vector and return it as a float array."""
    arr = np.asarray(theta, dtype=float)
    if arr.ndim != 1 or arr.shape[0] != dim:
        raise DimensionError(f"expected parameter vector of length {dim}, got shape {arr.shape}")
    return arr


def gaussian_logpdf(y: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """Log density of ``N(y; mean, cov)`` via a Cholesky factor.

    Raises:
        SingularCovarianceError: if ``cov`` is not positive definite.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("covariance is not positive definite") from exc
    resid = np.linalg.solve(chol, y - mean)
    d = y.shape[0]
    return float(-0.5 * d * LOG_2PI - np.log(np.diag(chol)).sum() - 0.5 * resid @ resid)


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """Lower factor ``L`` with ``L L^T = cov`` for a PSD (possibly singular) matrix."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not cov.any():
        return np.zeros_like(cov)
    if np.count_nonzero(cov - np.diag(np.diag(cov))) == 0:
        return np.diag(np.sqrt(np.clip(np.diag(cov), 0.0, None)))
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(0.5 * (cov + cov.T))
        return v * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True)
class Dataset:
    """Observations ``y`` (rows) at integer observation indices ``times``.

    ``times`` is ``1..T`` or ``0..T``; a leading 0 means an observation
    of the initial state is available.  ``states`` optionally holds the
    ground-truth latent path that generated simulated data.
    """

    times: np.ndarray
    y: np.ndarray
    states: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=int)
        y = np.asarray(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if times.ndim != 1 or times.shape[0] != y.shape[0]:
            raise DimensionError("times and observations must have the same number of rows")
        if times.size == 0:
            raise DimensionError("dataset has no observations")
        if times[0] not in (0, 1) or np.any(np.diff(times) != 1):
            raise DimensionError("times must be consecutive integers starting at 0 or 1")
        if not np.all(np.isfinite(y)):
            raise DimensionError("observations must be finite (missing data is not supported)")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "y", y)

    @property
    def has_y0(self) -> bool:
        return bool(self.times[0] == 0)

    @property
    def n_obs(self) -> int:
        return int(self.y.shape[0])

    @property
    def dim_y(self) -> int:
        return int(self.y.shape[1])

    def check(self, model: "StateSpaceModel") -> None:
        if self.dim_y != model.dim_y:
            raise DimensionError(f"dataset has dim_y={self.dim_y}, model expects {model.dim_y}")


class StateSpaceModel(abc.ABC):
    """Base class for state space models with linear Gaussian observations.

    Subclasses define the parameter names, the observation map, the
    prior, and how to draw initial states and evolve an ensemble from
    one observation time to the next.  Models that can be driven purely
    by standard normal variates set ``normal_draw_count`` (normals per
    member per evolution call) and implement :meth:`evolve_normals`;
    this is what correlated and RQMC filtering require.
    """

    name: str = "model"
    param_names: tuple[str, ...] = ()
    dim_x: int = 1
    dim_y: int = 1
    normal_draw_count: Optional[int] = None
    init_normal_count: int = 0

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    # -- observation model -------------------------------------------------
    @abc.abstractmethod
    def obs_matrix(self) -> np.ndarray:
        """The ``(dim_y, dim_x)`` observation matrix ``P``."""

    @abc.abstractmethod
    def obs_cov(self, theta: np.ndarray) -> np.ndarray:
        """The ``(dim_y, dim_y)`` observation noise covariance ``S(theta)``."""

    # -- prior -------------------------------------------------------------
    @abc.abstractmethod
    def log_prior(self, theta: np.ndarray) -> float:
        """Prior log density on the sampling scale (no validation)."""

    def prior_logpdf(self, theta) -> float:
        theta = as_theta(theta, self.n_params)
        if not np.all(np.isfinite(theta)):
            return -math.inf
        return float(self.log_prior(theta))

    # -- dynamics ----------------------------------------------------------
    def initial_normals(self, theta: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Initial ensemble from ``(N, init_normal_count)`` standard normals."""
        raise NotImplementedError

    def sample_initial(self, theta: np.ndarray, n: int, rng: "RngStream") -> np.ndarray:
        z = rng.normals((n, self.init_normal_count))
        return self.initial_normals(theta, z)

    def evolve_normals(self, x: np.ndarray, theta: np.ndarray, t: int, z: np.ndarray) -> np.ndarray:
        """Advance ``x`` to observation time ``t`` using ``(N, normal_draw_count)`` normals."""
        raise NotImplementedError(f"{self.name} cannot be driven by standard normals")

    def evolve(self, x: np.ndarray, theta: np.ndarray, t: int, rng: "RngStream") -> np.ndarray:
        """Advance every member of ``x`` from observation ``t-1`` to ``t``."""
        if self.normal_draw_count is None:
            raise NotImplementedError
        z = rng.normals((x.shape[0], self.normal_draw_count))
        return self.evolve_normals(x, theta, t, z)

    def post_shift(self, x: np.ndarray) -> np.ndarray:
        """Hook applied to the ensemble after each EnKF shift."""
        return x

    # -- densities ---------------------------------------------------------
    def observe_logpdf(self, y, x, theta) -> float:
        """``log N(y; P x, S(theta))`` for a single state vector."""
        theta = as_theta(theta, self.n_params)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if x.shape != (self.dim_x,) or y.shape != (self.dim_y,):
            raise DimensionError(
                f"expected x of length {self.dim_x} and y of length {self.dim_y}, "
                f"got {x.shape} and {y.shape}"
            )
        return gaussian_logpdf(y, self.obs_matrix() @ x, self.obs_cov(theta))

    def default_theta(self) -> np.ndarray:
        """Parameter values used to simulate benchmark data."""
        raise NotImplementedError
