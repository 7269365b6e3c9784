"""Pseudo-marginal Metropolis-Hastings samplers.

Randomness is laid out so that runs can be replayed exactly: iteration
``i`` draws everything from ``rng.spawn(i)``.  Its child 0 supplies the
random-walk normals and then the acceptance uniform, child 1 drives the
likelihood estimator and child 2 the Crank-Nicolson refresh.  Because
each iteration owns its streams, cutting a filter run short (early
rejection) cannot perturb later iterations.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from emcmc.core import (
    ConfigError,
    DomainError,
    EmcmcError,
    NonFiniteStateError,
    SingularCovarianceError,
    StateSpaceModel,
    as_theta,
    psd_sqrt,
)
from emcmc.diagnostics import NoiseProbe, loglik_noise_probe
from emcmc.filters import (
    ENKF,
    ENKF_UNBIASED,
    LogLikelihoodEstimate,
    LikelihoodEstimator,
    enkf_loglik,
    observation_log_bound,
)
from emcmc.rand import NormalBlock, RngStream, crank_nicolson

log = logging.getLogger(__name__)

_INIT_STREAM = 1 << 62
_PROPOSAL, _FILTER, _AUX = 0, 1, 2
# early rejection stops only when the bound clears the threshold by this
# relative margin, so rounding can never make it disagree with plain MH
_ER_MARGIN = 1e-9


class InitializationError(EmcmcError):
    """No finite initial likelihood estimate could be obtained."""


@dataclass(frozen=True)
class ProposalSpec:
    """Gaussian random walk ``theta* ~ N(theta, scale * covariance)``."""

    covariance: np.ndarray
    scale: float = 1.0
    _factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape[0] != cov.shape[1]:
            raise DomainError("proposal covariance must be square")
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14):
            raise DomainError("proposal covariance must be symmetric")
        if cov.size and np.linalg.eigvalsh(cov).min() < -1e-12 * max(1.0, np.abs(cov).max()):
            raise DomainError("proposal covariance must be positive semidefinite")
        if not self.scale > 0:
            raise DomainError("proposal scale must be positive")
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "_factor", psd_sqrt(self.scale * cov))

    @classmethod
    def diagonal(cls, sds: Sequence[float], scale: float = 1.0) -> "ProposalSpec":
        return cls(np.diag(np.asarray(sds, dtype=float) ** 2), scale)

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    def step(self, z: np.ndarray) -> np.ndarray:
        return self._factor @ z


@dataclass
class ChainState:
    theta: np.ndarray
    log_like: LogLikelihoodEstimate
    log_prior: float
    u: Optional[NormalBlock] = None

    @property
    def log_post(self) -> float:
        return float(self.log_like.value) + self.log_prior


@dataclass(frozen=True)
class StepInfo:
    """What happened in one MH iteration.

    ``stop`` is 0 when the proposal was rejected before any filtering
    (zero prior density or an early rejection before the first
    observation), ``k`` when early rejection fired after ``k``
    observations and ``n_obs + 1`` when the filter ran to completion.
    """

    accepted: bool
    proposed: np.ndarray
    proposed_log_like: float
    stop: int
    steps: int


@dataclass
class ChainTrace:
    param_names: tuple[str, ...]
    samples: np.ndarray
    log_like: np.ndarray
    accepted: np.ndarray
    early_stop_t: np.ndarray
    steps: np.ndarray
    estimator: str = ""
    n_particles: int = 0
    wall_time: float = 0.0
    n_obs: int = 0

    @classmethod
    def empty(cls, names, iters: int, **meta) -> "ChainTrace":
        return cls(
            tuple(names),
            np.empty((iters, len(names))),
            np.empty(iters),
            np.zeros(iters, dtype=bool),
            np.zeros(iters, dtype=np.int64),
            np.zeros(iters, dtype=np.int64),
            **meta,
        )

    @property
    def n_iters(self) -> int:
        return int(self.samples.shape[0])

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean()) if self.n_iters else float("nan")

    @property
    def total_steps(self) -> int:
        return int(self.steps.sum())

    def record(self, i: int, state: ChainState, info: StepInfo) -> None:
        self.samples[i] = state.theta
        self.log_like[i] = state.log_like.value
        self.accepted[i] = info.accepted
        self.early_stop_t[i] = info.stop
        self.steps[i] = info.steps

    def truncated(self, n: int) -> "ChainTrace":
        return ChainTrace(
            self.param_names, self.samples[:n], self.log_like[:n], self.accepted[:n],
            self.early_stop_t[:n], self.steps[:n], self.estimator, self.n_particles,
            self.wall_time, self.n_obs,
        )


Callback = Callable[[int, ChainState, StepInfo], None]


def log_acceptance_ratio(log_like_new, log_prior_new, log_like_old, log_prior_old) -> float:
    """``log r`` for a symmetric proposal; ``-inf`` whenever the proposal has zero density."""
    if log_like_new == -math.inf or log_prior_new == -math.inf:
        return -math.inf
    return (log_like_new + log_prior_new) - (log_like_old + log_prior_old)


def _safe_estimate(estimator: LikelihoodEstimator, model, theta, data, rng, reject_below=None):
    try:
        return estimator(model, theta, data, rng, reject_below=reject_below)
    except (NonFiniteStateError, SingularCovarianceError) as exc:
        log.debug("proposal %s failed in the filter: %s", theta, exc)
        return LogLikelihoodEstimate(-math.inf, estimator.kind, estimator.n)


def _draw_proposal(state: ChainState, proposal: ProposalSpec, it: RngStream):
    prop = it.spawn(_PROPOSAL)
    z = prop.normals(proposal.dim)
    log_u = math.log(float(prop.uniforms()))
    return state.theta + proposal.step(z), log_u


def mh_step(state: ChainState, model: StateSpaceModel, data, estimator: LikelihoodEstimator,
            proposal: ProposalSpec, it: RngStream, early_rejection: bool = False):
    """One pseudo-marginal MH iteration using the iteration stream ``it``.

    With ``early_rejection`` the filter is abandoned as soon as its upper
    bound on the proposal's log-likelihood certifies rejection.  The
    accept/reject decision is the same as without it.
    """
    theta_new, log_u = _draw_proposal(state, proposal, it)
    lp_new = model.prior_logpdf(theta_new)
    n_obs = data.n_obs
    if lp_new == -math.inf:
        return state, StepInfo(False, theta_new, -math.inf, 0, 0)
    reject_below = None
    if early_rejection:
        observation_log_bound(model, theta_new)  # fail loudly on a singular S
        thr = log_u + state.log_post - lp_new
        reject_below = thr - _ER_MARGIN * (1.0 + abs(thr))
    est = _safe_estimate(estimator, model, theta_new, data, it.spawn(_FILTER), reject_below)
    if not est.completed:
        return state, StepInfo(False, theta_new, est.value, est.stopped_at, est.steps)
    log_r = log_acceptance_ratio(est.value, lp_new, state.log_like.value, state.log_prior)
    info_stop = n_obs + 1
    if log_u < log_r:
        new = ChainState(theta_new, est, lp_new)
        return new, StepInfo(True, theta_new, est.value, info_stop, est.steps)
    return state, StepInfo(False, theta_new, est.value, info_stop, est.steps)


def early_rejection_emcmc_step(state: ChainState, model, data, n: int, proposal: ProposalSpec,
                               it: RngStream):
    """One early-rejection eMCMC iteration with an ``n``-member plug-in EnKF."""
    return mh_step(state, model, data, LikelihoodEstimator(ENKF, n), proposal, it, early_rejection=True)


def initial_state(model, data, estimator: LikelihoodEstimator, init, rng: RngStream,
                  max_tries: int = 100) -> ChainState:
    """Evaluate the starting point, redrawing the filter seed until the estimate is finite.

    Raises:
        InitializationError: if the prior density is zero at ``init`` or
            ``max_tries`` estimates were all ``-inf``.
    """
    theta = as_theta(init, model.n_params)
    lp = model.prior_logpdf(theta)
    if lp == -math.inf:
        raise InitializationError("initial parameters have zero prior density")
    for k in range(max_tries):
        est = _safe_estimate(estimator, model, theta, data, rng.spawn(_INIT_STREAM + k))
        if est.value > -math.inf:
            return ChainState(theta, est, lp)
    raise InitializationError(f"no finite likelihood estimate in {max_tries} attempts")


def _check_dims(model, proposal):
    if proposal.dim != model.n_params:
        raise ConfigError(
            f"proposal has dimension {proposal.dim}, model {model.name} has {model.n_params} parameters"
        )


def pmmh_run(
    model: StateSpaceModel,
    data,
    estimator: LikelihoodEstimator,
    proposal: ProposalSpec,
    iters: int,
    init,
    rng: RngStream,
    *,
    early_rejection: bool = False,
    callback: Optional[Callback] = None,
    max_init_tries: int = 100,
) -> ChainTrace:
    """Pseudo-marginal Metropolis-Hastings with any likelihood estimator.

    On rejection the incumbent estimate is carried forward and never
    recomputed.  ``early_rejection`` requires a plug-in EnKF estimator.
    """
    data.check(model)
    estimator.check_model(model)
    _check_dims(model, proposal)
    if early_rejection and not estimator.supports_early_rejection:
        raise ConfigError(f"early rejection is not available for the {estimator.kind} estimator")
    state = initial_state(model, data, estimator, init, rng, max_init_tries)
    trace = ChainTrace.empty(model.param_names, iters, estimator=estimator.kind,
                             n_particles=estimator.n, n_obs=data.n_obs)
    start = time.perf_counter()
    i = 0
    try:
        for i in range(iters):
            state, info = mh_step(state, model, data, estimator, proposal, rng.spawn(i), early_rejection)
            trace.record(i, state, info)
            if callback is not None:
                callback(i, state, info)
    except Exception as exc:
        exc.partial_trace = trace.truncated(i)
        raise
    trace.wall_time = time.perf_counter() - start
    return trace


def correlated_emcmc_run(
    model: StateSpaceModel,
    data,
    n: int,
    sigma_u: float,
    proposal: ProposalSpec,
    iters: int,
    init,
    rng: RngStream,
    *,
    density: str = "plugin",
    callback: Optional[Callback] = None,
    max_init_tries: int = 100,
) -> ChainTrace:
    """eMCMC on the joint space of ``theta`` and the filter's normals ``u``.

    Each iteration proposes ``theta*`` by random walk and ``u*`` by a
    Crank-Nicolson move; both are accepted or rejected together (a
    rejected iteration keeps the old ``u``).  The Crank-Nicolson move is
    reversible with respect to ``N(0, I)``, so the ratio is the usual one.
    """
    if model.normal_draw_count is None:
        raise ConfigError(f"{model.name} has no fixed-size normal driver; correlated eMCMC is unavailable")
    if not 0.0 < sigma_u <= 1.0:
        raise DomainError("sigma_u must lie in (0, 1]")
    data.check(model)
    _check_dims(model, proposal)
    kind = ENKF if density == "plugin" else ENKF_UNBIASED
    estimator = LikelihoodEstimator(kind, n)
    estimator.check_model(model)
    theta = as_theta(init, model.n_params)
    lp = model.prior_logpdf(theta)
    if lp == -math.inf:
        raise InitializationError("initial parameters have zero prior density")

    def evaluate(th, u):
        try:
            return enkf_loglik(model, th, data, n, u, density)
        except (NonFiniteStateError, SingularCovarianceError):
            return LogLikelihoodEstimate(-math.inf, kind, n)

    state = None
    for k in range(max_init_tries):
        u = NormalBlock.for_model(model, data.n_obs, n, rng.spawn(_INIT_STREAM + k))
        est = evaluate(theta, u)
        if est.value > -math.inf:
            state = ChainState(theta, est, lp, u)
            break
    if state is None:
        raise InitializationError(f"no finite likelihood estimate in {max_init_tries} attempts")

    trace = ChainTrace.empty(model.param_names, iters, estimator=f"{kind}-correlated",
                             n_particles=n, n_obs=data.n_obs)
    start = time.perf_counter()
    i = 0
    try:
        for i in range(iters):
            it = rng.spawn(i)
            theta_new, log_u = _draw_proposal(state, proposal, it)
            lp_new = model.prior_logpdf(theta_new)
            if lp_new == -math.inf:
                info = StepInfo(False, theta_new, -math.inf, 0, 0)
            else:
                u_new = crank_nicolson(state.u, sigma_u, it.spawn(_AUX))
                est = evaluate(theta_new, u_new)
                log_r = log_acceptance_ratio(est.value, lp_new, state.log_like.value, state.log_prior)
                accepted = log_u < log_r
                info = StepInfo(accepted, theta_new, est.value, data.n_obs + 1, est.steps)
                if accepted:
                    state = ChainState(theta_new, est, lp_new, u_new)
            trace.record(i, state, info)
            if callback is not None:
                callback(i, state, info)
    except Exception as exc:
        exc.partial_trace = trace.truncated(i)
        raise
    trace.wall_time = time.perf_counter() - start
    return trace


# ---------------------------------------------------------------------------
# Tuning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TuningResult:
    n: int
    met_target: bool
    table: tuple[tuple[int, NoiseProbe], ...]

    def rows(self) -> list[dict]:
        return [{"N": n, "tau": p.sd, "frac_neg_inf": p.frac_neg_inf} for n, p in self.table]


def tune_particles(model, data, theta_rep, kind: str, candidates: Sequence[int], replicates: int,
                   rng: RngStream, target_sd: float = 1.5) -> TuningResult:
    """Smallest candidate ``N`` whose log-likelihood sd at ``theta_rep`` is at most ``target_sd``.

    Every candidate is probed (the whole table is reported).  When none
    meets the target the largest is returned with ``met_target=False``.
    """
    cands = sorted(int(c) for c in candidates)
    if not cands:
        raise ConfigError("no candidate particle numbers given")
    if replicates < 10:
        raise ConfigError("need at least 10 replicates")
    table = []
    for k, n in enumerate(cands):
        est = LikelihoodEstimator(kind, n)
        est.check_model(model)
        table.append((n, loglik_noise_probe(model, data, theta_rep, est, replicates, rng.spawn(k))))
    for n, probe in table:
        if probe.sd <= target_sd and probe.n_neg_inf == 0:
            return TuningResult(n, True, tuple(table))
    warnings.warn(f"no candidate reached sd <= {target_sd}; using N={cands[-1]}", RuntimeWarning,
                  stacklevel=2)
    return TuningResult(cands[-1], False, tuple(table))


def pilot_proposal(model, data, estimator: LikelihoodEstimator, init, iters: int, rng: RngStream,
                   initial: Optional[ProposalSpec] = None, adapt_start: Optional[int] = None,
                   adapt_every: int = 100) -> tuple[ProposalSpec, ChainTrace]:
    """Short adaptive run whose empirical covariance becomes the frozen proposal.

    The random-walk covariance is re-estimated every ``adapt_every``
    iterations from the second half of the draws so far, starting at
    ``adapt_start`` (default ``iters // 4``).  The returned proposal uses the
    covariance of the second half of the pilot chain with scale 1; it is
    never adapted again.
    """
    theta0 = as_theta(init, model.n_params)
    if initial is None:
        initial = ProposalSpec.diagonal(np.full(model.n_params, 0.01))
    if adapt_start is None:
        adapt_start = max(iters // 4, 2 * model.n_params + 2)
    state = initial_state(model, data, estimator, theta0, rng)
    trace = ChainTrace.empty(model.param_names, iters, estimator=estimator.kind,
                             n_particles=estimator.n, n_obs=data.n_obs)
    proposal = initial
    eye = np.eye(model.n_params)
    start = time.perf_counter()
    for i in range(iters):
        state, info = mh_step(state, model, data, estimator, proposal, rng.spawn(i))
        trace.record(i, state, info)
        if i + 1 >= adapt_start and (i + 1) % adapt_every == 0:
            draws = trace.samples[(i + 1) // 2: i + 1]
            cov = np.atleast_2d(np.cov(draws, rowvar=False))
            if np.linalg.matrix_rank(cov) == model.n_params:
                proposal = ProposalSpec(cov + 1e-12 * np.trace(cov) * eye)
    trace.wall_time = time.perf_counter() - start
    cov = np.atleast_2d(np.cov(trace.samples[iters // 2:], rowvar=False))
    if np.linalg.matrix_rank(cov) < model.n_params:
        warnings.warn("pilot chain barely moved; keeping the initial proposal", RuntimeWarning,
                      stacklevel=2)
        return initial, trace
    return ProposalSpec(cov + 1e-12 * np.trace(cov) * eye), trace
