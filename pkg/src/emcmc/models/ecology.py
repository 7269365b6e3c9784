"""Single-species population models observed on the log scale.

The state is ``log n_t``.  Each year

    log n_{t+1} = log n_t + growth(n_t) + eps_t,   eps_t ~ N(0, sigma_w^2)

with the growth term fixing the variant (Ricker, theta-logistic,
mate-limited or flexible-Allee), and ``y_t ~ N(log n_t, sigma_e^2)``.
Parameters live on their natural scale.  ``log_n0`` carries a flat
(improper) prior and the filter starts from the point mass at it.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from emcmc.core import LOG_2PI, ConfigError, StateSpaceModel

_LOG_N_CLAMP = 700.0

VARIANTS = {
    "ricker": ("beta0", "beta1"),
    "theta-logistic": ("beta0", "beta2", "beta3"),
    "mate-limited": ("beta0", "beta1", "beta4"),
    "flexible-allee": ("beta0", "beta1", "beta5"),
}

# Exp(1) priors; every other growth coefficient is N(0, 1)
_EXPONENTIAL = {"beta4", "sigma_w", "sigma_e"}

_TRUTH = {
    "ricker": {"beta0": 0.6, "beta1": -0.03},
    "theta-logistic": {"beta0": 0.6, "beta2": -0.3, "beta3": 0.5},
    "mate-limited": {"beta0": 0.6, "beta1": -0.03, "beta4": 2.0},
    "flexible-allee": {"beta0": 0.6, "beta1": -0.03, "beta5": 0.0001},
}
_TRUTH_COMMON = {"sigma_w": 0.25, "sigma_e": 0.03, "log_n0": math.log(10.0)}


class OverflowClampWarning(RuntimeWarning):
    """``log n_t`` left the representable range and was clamped."""


def growth(variant: str, log_n: np.ndarray, coef: dict) -> np.ndarray:
    """Deterministic increment ``log n_{t+1} - log n_t`` (noise excluded)."""
    n = np.exp(log_n)
    if variant == "ricker":
        return coef["beta0"] + coef["beta1"] * n
    if variant == "theta-logistic":
        return coef["beta0"] + coef["beta2"] * np.exp(coef["beta3"] * log_n)
    if variant == "mate-limited":
        return log_n + coef["beta0"] + coef["beta1"] * n - np.log(coef["beta4"] + n)
    if variant == "flexible-allee":
        return coef["beta0"] + coef["beta1"] * n + coef["beta5"] * n * n
    raise ConfigError(f"unknown ecology variant {variant!r}")


class EcologyModel(StateSpaceModel):
    dim_x = 1
    dim_y = 1
    normal_draw_count = 1
    init_normal_count = 0

    def __init__(self, variant: str = "ricker"):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown ecology variant {variant!r}; choose from {sorted(VARIANTS)}")
        self.variant = variant
        self.name = variant
        self.param_names = VARIANTS[variant] + ("sigma_w", "sigma_e", "log_n0")
        self._idx = {k: i for i, k in enumerate(self.param_names)}
        self._sigma_w = self._idx["sigma_w"]
        self._two_sided = variant == "theta-logistic"
        self._exp_mask = np.array([p in _EXPONENTIAL for p in self.param_names])
        self._norm_mask = np.array(
            [p not in _EXPONENTIAL and p != "log_n0" for p in self.param_names]
        )

    def coefficients(self, theta) -> dict:
        return {k: float(theta[i]) for k, i in self._idx.items()}

    def obs_matrix(self):
        return np.ones((1, 1))

    def obs_cov(self, theta):
        s = theta[self._idx["sigma_e"]]
        return np.array([[s * s]])

    def log_prior(self, theta) -> float:
        pos = theta[self._exp_mask]
        if np.any(pos <= 0.0):
            return -math.inf
        gauss = theta[self._norm_mask]
        return float(-pos.sum() - 0.5 * (gauss @ gauss) - 0.5 * gauss.size * LOG_2PI)

    def initial_normals(self, theta, z):
        return np.full((z.shape[0], 1), float(theta[self._idx["log_n0"]]))

    def evolve_normals(self, x, theta, t, z):
        log_n = x
        # exp(log n) can only overflow upwards, except in the theta-logistic
        # power term, so the cheaper one-sided check suffices elsewhere
        if log_n.max() > _LOG_N_CLAMP or (self._two_sided and log_n.min() < -_LOG_N_CLAMP):
            warnings.warn("log n_t clamped to +/-700", OverflowClampWarning, stacklevel=2)
            log_n = np.clip(log_n, -_LOG_N_CLAMP, _LOG_N_CLAMP)
        if self.variant == "ricker":
            # hot path of the ecology benchmarks
            inc = theta[0] + theta[1] * np.exp(log_n)
        else:
            inc = growth(self.variant, log_n, self.coefficients(theta))
        return log_n + inc + theta[self._sigma_w] * z

    def default_theta(self) -> np.ndarray:
        truth = {**_TRUTH[self.variant], **_TRUTH_COMMON}
        return np.array([truth[p] for p in self.param_names])
