"""Likelihood estimators for a fixed parameter value.

* :func:`bpf_loglik` -- bootstrap particle filter (unbiased on the natural scale).
* :func:`enkf_loglik` -- stochastic ensemble Kalman filter, with a plug-in or
  unbiased Gaussian density for each predictive factor, driven by a random
  stream, a fixed block of normals (correlated MCMC) or scrambled Sobol
  points (RQMC).
* :func:`kalman_loglik` -- the exact Kalman filter for linear Gaussian models,
  used as an oracle.

All estimators return log-likelihoods; ``-inf`` is an ordinary value that
means "reject this proposal".
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import special

from emcmc.core import (
    LOG_2PI,
    DimensionError,
    DomainError,
    NonFiniteStateError,
    SingularCovarianceError,
    StateSpaceModel,
    as_theta,
    psd_sqrt,
)
from emcmc.rand import NormalBlock, RngStream, SobolSampler, normals_from_uniforms

BPF = "bpf"
ENKF = "enkf"
ENKF_UNBIASED = "enkf-unbiased"
KALMAN_EXACT = "kalman"
ENKF_RQMC = "enkf-rqmc"
ESTIMATOR_KINDS = (BPF, ENKF, ENKF_UNBIASED, ENKF_RQMC, KALMAN_EXACT)

_JITTER_LADDER = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


@dataclass(frozen=True)
class LogLikelihoodEstimate:
    """A log-likelihood estimate and how it was produced.

    ``steps`` counts forecast (evolution) steps actually performed.
    ``stopped_at`` is set when an early-rejection run was cut short after
    that many observations; ``value`` then holds the upper bound on the
    full log-likelihood that triggered the stop.
    """

    value: float
    estimator: str
    n: int
    steps: int = 0
    stopped_at: Optional[int] = None

    @property
    def completed(self) -> bool:
        return self.stopped_at is None

    def __float__(self) -> float:
        return float(self.value)


@dataclass(frozen=True)
class ForecastMoments:
    mean: np.ndarray
    cov: np.ndarray


def sample_moments(x: np.ndarray) -> ForecastMoments:
    """Sample mean and covariance (divisor ``N - 1``) of an ``(N, d)`` ensemble."""
    n = x.shape[0]
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    return ForecastMoments(mean, 0.5 * (cov + cov.T))


def spd_cholesky(matrix: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, retrying with a small relative jitter.

    Jitter ``eps * trace/d`` is added for ``eps`` in 1e-10 ... 1e-6
    before giving up.

    Raises:
        SingularCovarianceError: if no rung of the ladder succeeds.
    """
    if matrix.shape == (1, 1):
        v = float(matrix[0, 0])
        if v > 0.0 and math.isfinite(v):
            return np.sqrt(matrix)
        # a 1x1 jitter relative to its own trace cannot rescue v <= 0
        raise SingularCovarianceError("innovation variance is not positive")
    try:
        return np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        pass
    d = matrix.shape[0]
    scale = float(np.trace(matrix)) / d
    if not (scale > 0.0 and math.isfinite(scale)):
        raise SingularCovarianceError("innovation covariance is singular")
    eye = np.eye(d)
    for eps in _JITTER_LADDER:
        try:
            return np.linalg.cholesky(matrix + eps * scale * eye)
        except np.linalg.LinAlgError:
            continue
    raise SingularCovarianceError("innovation covariance is singular after jitter")


def _chol_solve(chol: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if chol.shape[0] == 1:
        return rhs / (chol[0, 0] * chol[0, 0])
    return np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))


def _chol_logpdf(resid: np.ndarray, chol: np.ndarray) -> float:
    if chol.shape[0] == 1:
        r = resid[0] / chol[0, 0]
        return -0.5 * LOG_2PI - math.log(chol[0, 0]) - 0.5 * r * r
    sol = np.linalg.solve(chol, resid)
    d = chol.shape[0]
    return float(-0.5 * d * LOG_2PI - np.log(np.diag(chol)).sum() - 0.5 * sol @ sol)


def kalman_gain(moments: ForecastMoments, P: np.ndarray, S: np.ndarray) -> np.ndarray:
    """``Sigma P^T (P Sigma P^T + S)^{-1}`` via a Cholesky solve.

    Raises:
        SingularCovarianceError: if the innovation covariance is singular.
    """
    cov = np.atleast_2d(moments.cov)
    P = np.atleast_2d(P)
    PS = P @ cov
    chol = spd_cholesky(PS @ P.T + np.atleast_2d(S))
    return _chol_solve(chol, PS).T


# ---------------------------------------------------------------------------
# Unbiased Gaussian density
# ---------------------------------------------------------------------------


def _log_c(k: int, v: float) -> float:
    i = np.arange(1, k + 1)
    return float(
        -0.5 * k * v * math.log(2.0)
        - 0.25 * k * (k - 1) * math.log(math.pi)
        - special.gammaln(0.5 * (v - i + 1)).sum()
    )


def unbiased_gaussian_logpdf(y, sample_mean, sample_cov, n: int):
    """Log of the exactly unbiased estimator of ``N(y; mu, Sigma)``.

    ``sample_mean`` and ``sample_cov`` (divisor ``n - 1``) come from ``n``
    iid draws of the Gaussian.  Leading axes broadcast, so a batch of
    samples can be scored at once.  Returns ``-inf`` where the rank-one
    downdate of the scatter matrix is not positive definite.

    Raises:
        DomainError: if ``n <= d + 3``.
    """
    y = np.asarray(y, dtype=float)
    mean = np.asarray(sample_mean, dtype=float)
    cov = np.asarray(sample_cov, dtype=float)
    d = y.shape[-1]
    if n <= d + 3:
        raise DomainError(f"unbiased density estimator needs n > d + 3 (n={n}, d={d})")
    scatter = (n - 1) * cov
    diff = y - mean
    const = (
        -0.5 * d * LOG_2PI
        + _log_c(d, n - 2)
        - _log_c(d, n - 1)
        - 0.5 * d * math.log1p(-1.0 / n)
    )
    sign, logdet = np.linalg.slogdet(scatter)
    ok = sign > 0
    # det(M - v v^T / c) = det(M) (1 - v^T M^{-1} v / c); positive definite iff q < 1
    safe = np.where(ok[..., None, None], scatter, np.eye(d))
    sol = np.linalg.solve(safe, diff[..., None])[..., 0]
    q = np.einsum("...i,...i->...", diff, sol) / (1.0 - 1.0 / n)
    ok = ok & (q < 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = const - 0.5 * logdet + 0.5 * (n - d - 3) * np.log1p(-np.where(ok, q, 0.0))
    val = np.where(ok, val, -np.inf)
    return float(val) if np.ndim(val) == 0 else val


# ---------------------------------------------------------------------------
# Bootstrap particle filter
# ---------------------------------------------------------------------------


def _obs_logweights(y: np.ndarray, x: np.ndarray, P: np.ndarray, chol: np.ndarray, const: float):
    resid = y - x @ P.T
    # huge residuals overflow to -inf weights, which the caller handles
    with np.errstate(over="ignore"):
        if chol.shape[0] == 1:
            r = resid[:, 0] / chol[0, 0]
            return const - 0.5 * r * r
        sol = np.linalg.solve(chol, resid.T)
        return const - 0.5 * np.einsum("ij,ij->j", sol, sol)


def bpf_loglik(model: StateSpaceModel, theta, data, n: int, rng: RngStream) -> LogLikelihoodEstimate:
    """Bootstrap particle filter estimate of ``log L(theta)``.

    Multinomial resampling at every step; resampling before the first
    propagation is skipped when there is no observation at time 0.

    Raises:
        SingularCovarianceError: if ``S(theta)`` is singular (weights undefined).
    """
    if n < 1:
        raise DomainError("the particle filter needs at least one particle")
    theta = as_theta(theta, model.n_params)
    data.check(model)
    P = np.atleast_2d(model.obs_matrix())
    S = np.atleast_2d(model.obs_cov(theta))
    try:
        chol = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            "particle weights need a nonsingular observation covariance; "
            "set a variance floor on the model"
        ) from exc
    const = -0.5 * model.dim_y * LOG_2PI - float(np.log(np.diag(chol)).sum())
    log_n = math.log(n)

    x = model.sample_initial(theta, n, rng)
    ll = 0.0
    steps = 0
    weights = None
    for j in range(data.n_obs):
        t = int(data.times[j])
        if t > 0:
            if weights is not None:
                cum = np.cumsum(weights)
                # sorted queries make the binary searches cache friendly
                idx = np.searchsorted(cum, np.sort(rng.uniforms(n)) * cum[-1])
                x = x[np.minimum(idx, n - 1)]
            x = model.evolve(x, theta, t, rng)
            steps += 1
        logw = _obs_logweights(data.y[j], x, P, chol, const)
        logw = np.where(np.isnan(logw), -np.inf, logw)
        top = logw.max()
        if top == -np.inf:
            return LogLikelihoodEstimate(-math.inf, BPF, n, steps)
        w = np.exp(logw - top)
        total = w.sum()
        ll += top + math.log(total) - log_n
        weights = w / total
    return LogLikelihoodEstimate(ll, BPF, n, steps)


# ---------------------------------------------------------------------------
# Ensemble Kalman filter
# ---------------------------------------------------------------------------


class _StreamNoise:
    """Fresh pseudo-random normals.

    For models with ``normal_draw_count`` the normals for observation
    index ``j`` form one ``(N, dim_y + m)`` slab laid out exactly like a
    :class:`NormalBlock` slab; slabs are drawn in batches, which leaves
    the values unchanged because the stream is counter based.  Other
    models simulate from the stream and the shift normals are drawn
    afterwards.
    """

    _BATCH = 32

    def __init__(self, model, rng, n):
        self.model = model
        self.rng = rng
        self.n = n
        self.width = None
        if model.normal_draw_count is not None:
            self.width = model.dim_y + model.normal_draw_count
        self._slab = None
        self._batch = None
        self._pos = 0

    def initial(self, theta, n):
        return self.model.sample_initial(theta, n, self.rng)

    def begin(self, j):
        if self.width is None:
            return
        if self._batch is None or self._pos == self._batch.shape[0]:
            self._batch = self.rng.normals((self._BATCH, self.n, self.width))
            self._pos = 0
        self._slab = self._batch[self._pos]
        self._pos += 1

    def evolve(self, x, theta, t, j):
        if self._slab is None:
            return self.model.evolve(x, theta, t, self.rng)
        return self.model.evolve_normals(x, theta, t, self._slab[:, self.model.dim_y:])

    def shift(self, j, n, d):
        if self._slab is None:
            return self.rng.normals((n, d))
        return self._slab[:, :d]


class _BlockNoise:
    def __init__(self, model, block: NormalBlock):
        self.model = model
        self.block = block

    def initial(self, theta, n):
        if self.model.init_normal_count == 0:
            return self.model.initial_normals(theta, np.empty((n, 0)))
        return self.model.initial_normals(theta, self.block.initial())

    def begin(self, j):
        pass

    def evolve(self, x, theta, t, j):
        return self.model.evolve_normals(x, theta, t, self.block.evolution(j))

    def shift(self, j, n, d):
        return self.block.shift(j)


class _RqmcNoise:
    """Per observation index ``j``, one scrambled Sobol set of ``N`` points in
    ``dim_y + m`` dimensions, randomly assigned to members: the first
    ``dim_y`` coordinates perturb the shift at ``j - 1`` and the last ``m``
    drive the evolution into ``j``."""

    def __init__(self, model, rng: RngStream, n: int):
        self.model = model
        self.rng = rng
        self.n = n
        self.width = model.dim_y + model.normal_draw_count
        self._sets: dict[int, np.ndarray] = {}

    def _set(self, j: int) -> np.ndarray:
        pts = self._sets.get(j)
        if pts is None:
            sub = self.rng.spawn(j)
            seed = sub.integer(2**63)
            pts = normals_from_uniforms(SobolSampler(self.width, scramble=True, seed=seed).next(self.n))
            # point k of two scrambled sets are related, so a fixed point-to-member
            # assignment would correlate each member's noise over time
            pts = pts[np.argsort(sub.uniforms(self.n))]
            self._sets = {j: pts}
        return pts

    def initial(self, theta, n):
        return self.model.sample_initial(theta, n, self.rng)

    def begin(self, j):
        pass

    def evolve(self, x, theta, t, j):
        return self.model.evolve_normals(x, theta, t, self._set(j)[:, self.model.dim_y:])

    def shift(self, j, n, d):
        return self._set(j + 1)[:, :d]


def _check_finite(mean: np.ndarray, t: int) -> None:
    # a non-finite member always makes the ensemble mean non-finite
    if not np.isfinite(mean).all():
        raise NonFiniteStateError(f"ensemble became non-finite at observation time {t}", step=t)


def observation_log_bound(model: StateSpaceModel, theta) -> float:
    """``log N(0; 0, S(theta))``, an upper bound on every plug-in EnKF factor.

    Raises:
        SingularCovarianceError: if ``S(theta)`` is singular.
    """
    return _log_bound(np.atleast_2d(model.obs_cov(theta)))


def _log_bound(S: np.ndarray) -> float:
    try:
        chol = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            "early rejection needs a nonsingular observation covariance; set a variance floor"
        ) from exc
    return -0.5 * S.shape[0] * LOG_2PI - float(np.log(np.diag(chol)).sum())


def enkf_loglik(
    model: StateSpaceModel,
    theta,
    data,
    n: int,
    noise: Union[RngStream, NormalBlock],
    density: str = "plugin",
    *,
    rqmc: bool = False,
    reject_below: Optional[float] = None,
) -> LogLikelihoodEstimate:
    """Stochastic ensemble Kalman filter estimate of ``log L(theta)``.

    Args:
        model: the state space model.
        theta: parameter vector on the model's sampling scale.
        data: observations.
        n: ensemble size (at least 2).
        noise: a random stream, or a :class:`NormalBlock` holding every
            normal the run consumes (correlated pseudo-marginal MCMC).
        density: ``"plugin"`` scores each predictive factor with the
            Gaussian density at the sample moments; ``"unbiased"`` uses the
            unbiased estimator applied to the pseudo-observation ensemble.
        rqmc: drive shift and evolution noise with scrambled Sobol points
            (requires a stream and a model with ``normal_draw_count``).
        reject_below: early-rejection threshold on the full log-likelihood.
            After each observation the run stops as soon as the partial
            log-likelihood plus ``log N(0; 0, S)`` for every remaining
            observation falls below it; that sum bounds the final value.

    Raises:
        SingularCovarianceError: if an innovation covariance cannot be factorized.
        NonFiniteStateError: if the ensemble blows up.
    """
    if n < 2:
        raise DomainError("the ensemble Kalman filter needs at least two members")
    if density not in ("plugin", "unbiased"):
        raise DomainError(f"unknown density mode {density!r}")
    if density == "unbiased" and n <= model.dim_y + 3:
        raise DomainError(f"unbiased density needs n > dim_y + 3 (n={n}, dim_y={model.dim_y})")
    if reject_below is not None and density != "plugin":
        raise DomainError("early rejection requires the plug-in density")
    theta = as_theta(theta, model.n_params)
    data.check(model)

    if isinstance(noise, NormalBlock):
        if rqmc:
            raise DomainError("RQMC draws its own uniforms; pass a stream, not a block")
        if noise.n_members != n or noise.n_obs != data.n_obs:
            raise DimensionError("normal block layout does not match ensemble size and dataset")
        src = _BlockNoise(model, noise)
    elif rqmc:
        if model.normal_draw_count is None:
            raise DimensionError(f"{model.name} cannot be driven by quasi-random normals")
        if density != "plugin":
            raise DomainError("RQMC is implemented for the plug-in density only")
        src = _RqmcNoise(model, noise, n)
    else:
        src = _StreamNoise(model, noise, n)

    P = np.atleast_2d(model.obs_matrix())
    S = np.atleast_2d(model.obs_cov(theta))
    S_sqrt_T = psd_sqrt(S).T
    d_y = model.dim_y
    n_obs = data.n_obs
    kind = ENKF if density == "plugin" else ENKF_UNBIASED

    log_b = None
    if reject_below is not None:
        log_b = _log_bound(S)
        bound = n_obs * log_b
        if bound < reject_below:
            return LogLikelihoodEstimate(bound, kind, n, 0, stopped_at=0)

    x = src.initial(theta, n)
    ll = 0.0
    steps = 0
    # one-dimensional plug-in filters (the ecology models) skip the matrix algebra
    scalar = density == "plugin" and model.dim_x == 1 and d_y == 1
    if scalar:
        p_ = float(P[0, 0])
        s_ = float(S[0, 0])
        s_sd = float(S_sqrt_T[0, 0])
    for j in range(n_obs):
        t = int(data.times[j])
        src.begin(j)
        if t > 0:
            x = src.evolve(x, theta, t, j)
            steps += 1
        y = data.y[j]
        last = j == n_obs - 1

        if scalar:
            xv = x[:, 0]
            mu = float(xv.sum()) / n
            if not math.isfinite(mu):
                raise NonFiniteStateError(f"ensemble became non-finite at observation time {t}", step=t)
            xc = xv - mu
            var = float(xc @ xc) / (n - 1)
            f = p_ * p_ * var + s_
            if not f > 0.0:
                raise SingularCovarianceError("innovation variance is not positive")
            resid = float(y[0]) - p_ * mu
            ll += -0.5 * (LOG_2PI + math.log(f) + resid * resid / f)
            if log_b is not None:
                bound = ll + (n_obs - j - 1) * log_b
                if bound < reject_below:
                    return LogLikelihoodEstimate(bound, kind, n, steps, stopped_at=j + 1)
            if last:
                break
            gain = p_ * var / f
            pseudo = p_ * xv + s_sd * src.shift(j, n, 1)[:, 0]
            x = model.post_shift((xv + gain * (float(y[0]) - pseudo))[:, None])
            continue

        mean = x.sum(axis=0) / n
        _check_finite(mean, t)
        xc = x - mean
        cov = xc.T @ xc / (n - 1)
        PC = P @ cov
        chol = spd_cholesky(PC @ P.T + S)

        if density == "plugin":
            ll += _chol_logpdf(y - P @ mean, chol)
            if last and reject_below is None:
                break
            pseudo = None
        else:
            pseudo = x @ P.T + src.shift(j, n, d_y) @ S_sqrt_T
            pm = pseudo.mean(axis=0)
            pc = pseudo - pm
            ll += unbiased_gaussian_logpdf(y, pm, pc.T @ pc / (n - 1), n)
            if ll == -math.inf:
                return LogLikelihoodEstimate(-math.inf, kind, n, steps)

        if log_b is not None:
            bound = ll + (n_obs - j - 1) * log_b
            if bound < reject_below:
                return LogLikelihoodEstimate(bound, kind, n, steps, stopped_at=j + 1)
        if last:
            break

        # shift step; the filtering ensemble after the last observation is never used
        if pseudo is None:
            pseudo = x @ P.T + src.shift(j, n, d_y) @ S_sqrt_T
        gain_T = _chol_solve(chol, PC)
        x = model.post_shift(x + (y - pseudo) @ gain_T)
    return LogLikelihoodEstimate(float(ll), kind, n, steps)


def enkf_shift(x: np.ndarray, y, P, S, z: np.ndarray) -> np.ndarray:
    """Stochastic EnKF analysis step for a forecast ensemble ``x``.

    Each member moves by ``K (y - y~)`` where ``y~ = P x + S^{1/2} z`` is
    its pseudo-observation and ``K`` the sample Kalman gain.
    """
    x = np.asarray(x, dtype=float)
    P = np.atleast_2d(P)
    S = np.atleast_2d(S)
    gain = kalman_gain(sample_moments(x), P, S)
    pseudo = x @ P.T + np.asarray(z, dtype=float) @ psd_sqrt(S).T
    return x + (np.asarray(y, dtype=float) - pseudo) @ gain.T


def enkf_moments_rqmc(
    model: StateSpaceModel,
    theta,
    forecast_prev: np.ndarray,
    y_prev: np.ndarray,
    t: int,
    source: Union[SobolSampler, RngStream],
) -> ForecastMoments:
    """Forecast moments at ``t`` from the forecast ensemble at ``t - 1``.

    Each member consumes one ``dim_y + m`` vector of normals: ``dim_y``
    for its pseudo-observation in the shift at ``t - 1`` and ``m`` for
    its evolution to ``t``.  With a :class:`SobolSampler` the normals are
    quantile-transformed Sobol points; with an :class:`RngStream` they are
    pseudo-random, which is the baseline RQMC improves on.
    """
    theta = as_theta(theta, model.n_params)
    m = model.normal_draw_count
    if m is None:
        raise DimensionError(f"{model.name} does not declare normal_draw_count")
    d_y = model.dim_y
    n = forecast_prev.shape[0]
    if isinstance(source, SobolSampler):
        if source.dimension != d_y + m:
            raise DimensionError(f"Sobol dimension must be dim_y + m = {d_y + m}")
        z = normals_from_uniforms(source.next(n))
    else:
        z = source.normals((n, d_y + m))
    P = np.atleast_2d(model.obs_matrix())
    S = np.atleast_2d(model.obs_cov(theta))
    shifted = model.post_shift(enkf_shift(forecast_prev, y_prev, P, S, z[:, :d_y]))
    return sample_moments(model.evolve_normals(shifted, theta, t, z[:, d_y:]))


# ---------------------------------------------------------------------------
# Exact Kalman filter
# ---------------------------------------------------------------------------


def kalman_loglik(params, data) -> float:
    """Exact log-likelihood of a linear Gaussian state space model.

    ``params`` supplies ``A, Q, P, S, m0, C0`` for
    ``x_t = A x_{t-1} + N(0, Q)``, ``y_t = P x_t + N(0, S)``,
    ``x_0 ~ N(m0, C0)``.  A row at time 0 is treated as an observation
    of ``x_0``.

    Raises:
        SingularCovarianceError: if an innovation covariance is singular.
    """
    A = np.atleast_2d(params.A)
    Q = np.atleast_2d(params.Q)
    P = np.atleast_2d(params.P)
    S = np.atleast_2d(params.S)
    m = np.atleast_1d(np.asarray(params.m0, dtype=float))
    C = np.atleast_2d(params.C0)
    ll = 0.0
    for j in range(data.n_obs):
        if data.times[j] > 0:
            m = A @ m
            C = A @ C @ A.T + Q
        PC = P @ C
        F = PC @ P.T + S
        try:
            chol = np.linalg.cholesky(F)
        except np.linalg.LinAlgError as exc:
            raise SingularCovarianceError("innovation covariance is singular") from exc
        resid = data.y[j] - P @ m
        ll += _chol_logpdf(resid, chol)
        gain_T = _chol_solve(chol, PC)
        m = m + resid @ gain_T
        C = C - gain_T.T @ PC
        C = 0.5 * (C + C.T)
    return float(ll)


# ---------------------------------------------------------------------------
# Estimator selection
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LikelihoodEstimator:
    """A likelihood estimator kind plus its particle or ensemble size.

    Calling it returns a :class:`LogLikelihoodEstimate`.  ``reject_below``
    is forwarded to the plug-in EnKF kinds for early rejection.
    """

    kind: str
    n: int = 100

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise DomainError(f"unknown estimator {self.kind!r}; choose from {ESTIMATOR_KINDS}")
        minimum = 2 if self.kind.startswith("enkf") else 1
        if self.kind != KALMAN_EXACT and self.n < minimum:
            raise DomainError(f"{self.kind} needs at least {minimum} particles")

    @property
    def supports_early_rejection(self) -> bool:
        return self.kind in (ENKF, ENKF_RQMC)

    def check_model(self, model: StateSpaceModel) -> None:
        """Raise :class:`DomainError` when the model cannot be used with this estimator."""
        if self.kind == ENKF_RQMC and model.normal_draw_count is None:
            raise DomainError(f"{model.name} has no fixed-size normal driver; RQMC is unavailable")
        if self.kind == KALMAN_EXACT and not hasattr(model, "kalman_params"):
            raise DomainError("the exact Kalman estimator needs a linear Gaussian model")
        if self.kind == ENKF_UNBIASED and self.n <= model.dim_y + 3:
            raise DomainError(f"unbiased density needs n > dim_y + 3 = {model.dim_y + 3}")

    def __call__(self, model, theta, data, rng: RngStream,
                 reject_below: Optional[float] = None) -> LogLikelihoodEstimate:
        if reject_below is not None and not self.supports_early_rejection:
            raise DomainError(f"early rejection is not available for {self.kind}")
        if self.kind == BPF:
            return bpf_loglik(model, theta, data, self.n, rng)
        if self.kind == ENKF:
            return enkf_loglik(model, theta, data, self.n, rng, reject_below=reject_below)
        if self.kind == ENKF_UNBIASED:
            return enkf_loglik(model, theta, data, self.n, rng, density="unbiased")
        if self.kind == ENKF_RQMC:
            return enkf_loglik(model, theta, data, self.n, rng, rqmc=True, reject_below=reject_below)
        value = kalman_loglik(model.kalman_params(theta), data)
        return LogLikelihoodEstimate(value, KALMAN_EXACT, 0, data.n_obs - int(data.has_y0))
