"""Markov jump process models simulated exactly with Gillespie's direct method."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from emcmc.core import StateSpaceModel
from emcmc.rand import RngStream


@dataclass(frozen=True)
class ReactionNetwork:
    """Stoichiometry plus mass-action hazards.

    ``stoichiometry[r]`` is the net change of each species when reaction
    ``r`` fires and ``reactants[r]`` the number of each species it consumes.
    Hazards are forced to zero whenever a reactant count is below what the
    reaction consumes; for integer states this is exactly mass action, and
    it keeps ensemble members non-negative after a continuous EnKF shift.
    """

    species: tuple[str, ...]
    stoichiometry: np.ndarray
    reactants: np.ndarray
    rate_law: Callable[[np.ndarray, np.ndarray], np.ndarray]

    @property
    def n_reactions(self) -> int:
        return self.stoichiometry.shape[0]

    def hazards(self, x: np.ndarray, c: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        h = self.rate_law(x, np.asarray(c, dtype=float))
        enough = np.all(x[:, None, :] >= self.reactants[None, :, :], axis=2)
        return np.where(enough & (h > 0.0), h, 0.0)


def gillespie_step(x: np.ndarray, c, network: ReactionNetwork, rng: RngStream):
    """Draw the next dwell time and reaction index for every row of ``x``.

    Returns ``(dwell, reaction, hazards)``; rows with zero total hazard get
    ``dwell = inf`` and ``reaction = -1``.
    """
    h = network.hazards(x, c)
    h0 = h.sum(axis=1)
    e = rng.exponentials(h0.shape[0])
    with np.errstate(divide="ignore"):
        dwell = np.where(h0 > 0.0, e / np.where(h0 > 0.0, h0, 1.0), np.inf)
    cum = np.cumsum(h, axis=1)
    u = rng.uniforms(h0.shape[0]) * h0
    reaction = np.minimum((cum < u[:, None]).sum(axis=1), network.n_reactions - 1)
    reaction = np.where(h0 > 0.0, reaction, -1)
    return dwell, reaction, h


def gillespie_evolve(
    x,
    c,
    t_span: float,
    rng: RngStream,
    network: ReactionNetwork,
    on_event: Optional[Callable[[np.ndarray, np.ndarray], None]] = None,
) -> np.ndarray:
    """Exactly simulate every row of ``x`` forward by ``t_span`` time units.

    Rows are simulated in lock-step, one reaction per active row per
    round; a row stops once its next event would fall beyond ``t_span``
    (or its total hazard is zero, which is absorbing).  ``on_event`` is
    called after each round with the indices of rows that fired and their
    new states.
    """
    if t_span <= 0:
        raise ValueError("t_span must be positive")
    x = np.array(x, dtype=float, ndmin=2)
    t = np.zeros(x.shape[0])
    active = np.arange(x.shape[0])
    while active.size:
        dwell, reaction, _ = gillespie_step(x[active], c, network, rng)
        t_next = t[active] + dwell
        fire = t_next <= t_span
        if not fire.any():
            break
        idx = active[fire]
        x[idx] += network.stoichiometry[reaction[fire]]
        t[idx] = t_next[fire]
        active = idx
        if on_event is not None:
            on_event(idx, x[idx])
    return x


def _lv_rates(x, c):
    return np.stack((c[0] * x[:, 0], c[1] * x[:, 0] * x[:, 1], c[2] * x[:, 1]), axis=1)


LOTKA_VOLTERRA = ReactionNetwork(
    species=("prey", "predator"),
    stoichiometry=np.array([[1, 0], [-1, 1], [0, -1]], dtype=float),
    reactants=np.array([[1, 0], [1, 1], [0, 1]], dtype=float),
    rate_law=_lv_rates,
)


def _autoreg_rates(x, c):
    x1, x2, x3, x4, x5 = x.T
    return np.stack(
        (
            c[0] * x1 * x5,
            c[1] * x2,
            c[2] * x1,
            c[3] * x3,
            c[4] * x4 * (x4 - 1.0) / 2.0,
            c[5] * x5,
            c[6] * x3,
            c[7] * x4,
        ),
        axis=1,
    )


AUTOREGULATORY = ReactionNetwork(
    species=("gene", "bound_gene", "rna", "protein", "dimer"),
    stoichiometry=np.array(
        [
            [-1, 1, 0, 0, -1],
            [1, -1, 0, 0, 1],
            [0, 0, 1, 0, 0],
            [0, 0, 0, 1, 0],
            [0, 0, 0, -2, 1],
            [0, 0, 0, 2, -1],
            [0, 0, -1, 0, 0],
            [0, 0, 0, -1, 0],
        ],
        dtype=float,
    ),
    reactants=np.array(
        [
            [1, 0, 0, 0, 1],
            [0, 1, 0, 0, 0],
            [1, 0, 0, 0, 0],
            [0, 0, 1, 0, 0],
            [0, 0, 0, 2, 0],
            [0, 0, 0, 0, 1],
            [0, 0, 1, 0, 0],
            [0, 0, 0, 1, 0],
        ],
        dtype=float,
    ),
    rate_law=_autoreg_rates,
)


class ReactionNetworkModel(StateSpaceModel):
    """Markov jump process with Gaussian measurement error.

    The filters see the MJP through :meth:`evolve`, which simulates each
    member exactly over one observation interval.  These models consume a
    random number of variates per step, so they do not declare
    ``normal_draw_count``.  After an EnKF shift members are reflected at
    zero.
    """

    network: ReactionNetwork

    def __init__(self, x0: Sequence[float], obs_interval: float = 1.0,
                 variance_floor: Optional[float] = None):
        self.x0 = np.asarray(x0, dtype=float)
        self.obs_interval = float(obs_interval)
        self.variance_floor = variance_floor
        self.dim_x = self.x0.shape[0]

    def rates(self, theta) -> np.ndarray:
        raise NotImplementedError

    def noise_variances(self, theta) -> np.ndarray:
        raise NotImplementedError

    def obs_cov(self, theta):
        var = self.noise_variances(theta)
        if self.variance_floor is not None:
            var = np.maximum(var, self.variance_floor)
        return np.diag(var)

    def initial_normals(self, theta, z):
        return np.tile(self.x0, (z.shape[0], 1))

    def evolve(self, x, theta, t, rng):
        return gillespie_evolve(x, self.rates(theta), self.obs_interval, rng, self.network)

    def post_shift(self, x):
        return np.abs(x)


class LotkaVolterraModel(ReactionNetworkModel):
    """Predator-prey MJP; ``theta = (log c1, log c2, log c3, log sigma1, log sigma2)``
    with independent U(-8, 8) priors."""

    name = "lotka-volterra"
    param_names = ("log_c1", "log_c2", "log_c3", "log_sigma1", "log_sigma2")
    dim_y = 2
    network = LOTKA_VOLTERRA

    def __init__(self, x0=(71.0, 79.0), obs_interval: float = 1.0,
                 variance_floor: Optional[float] = None):
        super().__init__(x0, obs_interval, variance_floor)

    def rates(self, theta):
        return np.exp(theta[:3])

    def noise_variances(self, theta):
        return np.exp(2.0 * np.asarray(theta[3:5]))

    def obs_matrix(self):
        return np.eye(2)

    def log_prior(self, theta) -> float:
        if np.any(np.abs(theta) > 8.0):
            return -math.inf
        return -5.0 * math.log(16.0)

    def default_theta(self):
        return np.array([math.log(0.5), math.log(0.0025), math.log(0.3), 0.0, 0.0])


class AutoregulatoryModel(ReactionNetworkModel):
    """Prokaryotic auto-regulation network observing RNA and total protein.

    ``theta`` holds ``log c_i`` for ``i = 1, 2, 3, 4, 7, 8``; ``c5`` and
    ``c6`` and the measurement standard deviations are fixed.  Each unknown
    rate constant has a Gamma(shape 1, rate 0.5) prior.  For noise-free data
    set ``variance_floor`` (e.g. 0.01) so the filters see a nonsingular
    observation covariance.
    """

    name = "autoreg"
    param_names = ("log_c1", "log_c2", "log_c3", "log_c4", "log_c7", "log_c8")
    dim_y = 2
    network = AUTOREGULATORY
    TRUE_RATES = np.array([0.1, 0.7, 0.35, 0.2, 0.1, 0.9, 0.3, 0.1])
    _FREE = np.array([0, 1, 2, 3, 6, 7])
    _PRIOR_SHAPE = 1.0
    _PRIOR_RATE = 0.5

    def __init__(self, x0=(5.0, 5.0, 8.0, 8.0, 8.0), obs_interval: float = 1.0,
                 sigma=(1.0, 1.0), c5: float = 0.1, c6: float = 0.9,
                 variance_floor: Optional[float] = None):
        super().__init__(x0, obs_interval, variance_floor)
        self.sigma = np.asarray(sigma, dtype=float)
        self.c5 = float(c5)
        self.c6 = float(c6)

    def rates(self, theta):
        c = np.empty(8)
        c[self._FREE] = np.exp(theta)
        c[4] = self.c5
        c[5] = self.c6
        return c

    def noise_variances(self, theta):
        return self.sigma**2

    def obs_matrix(self):
        return np.array([[0.0, 0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0, 2.0]])

    def log_prior(self, theta) -> float:
        # Gamma prior on c = exp(theta) plus the log-Jacobian theta
        c = np.exp(theta)
        a, b = self._PRIOR_SHAPE, self._PRIOR_RATE
        return float(np.sum(a * math.log(b) - math.lgamma(a) + a * theta - b * c))

    def default_theta(self):
        return np.log(self.TRUE_RATES[self._FREE])
