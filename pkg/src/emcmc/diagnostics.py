"""Chain diagnostics: multivariate ESS, acceptance rates and likelihood-noise probes."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from emcmc.core import DimensionError, EmcmcError, SingularCovarianceError
from emcmc.filters import LikelihoodEstimator
from emcmc.rand import RngStream


@dataclass(frozen=True)
class EssReport:
    n: int
    p: int
    mess: float
    batch_size: int
    sample_cov: np.ndarray
    batch_cov: np.ndarray

    @property
    def efficiency(self) -> float:
        return self.mess / self.n


def _logdet_spd(matrix: np.ndarray, what: str) -> float:
    try:
        chol = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            f"{what} is singular; the chain may be too short or have redundant columns"
        ) from exc
    return 2.0 * float(np.log(np.diag(chol)).sum())


def multivariate_ess(chain, batch_size: Optional[int] = None) -> EssReport:
    """Multivariate effective sample size from non-overlapping batch means.

    ``mESS = n (det Lambda / det Sigma)^(1/p)`` where ``Lambda`` is the
    sample covariance and ``Sigma`` the batch-means estimate of the
    long-run covariance, with batches of ``floor(sqrt(n))`` draws by
    default.

    Raises:
        DimensionError: for fewer than 100 draws.
        SingularCovarianceError: if either covariance is singular.
    """
    x = np.asarray(chain, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, p = x.shape
    if n < 100:
        raise DimensionError("multivariate ESS needs at least 100 draws")
    b = int(math.isqrt(n)) if batch_size is None else int(batch_size)
    if not 1 <= b <= n // 2:
        raise DimensionError(f"batch size {b} invalid for {n} draws")
    a = n // b
    used = x[: a * b]
    means = used.reshape(a, b, p).mean(axis=1)
    centred = means - used.mean(axis=0)
    batch_cov = b * centred.T @ centred / (a - 1)
    sample_cov = np.atleast_2d(np.cov(x, rowvar=False))
    logdet_l = _logdet_spd(sample_cov, "sample covariance")
    logdet_s = _logdet_spd(batch_cov, "batch-means covariance")
    mess = n * math.exp((logdet_l - logdet_s) / p)
    return EssReport(n, p, mess, b, sample_cov, batch_cov)


def acceptance_rate(accepted) -> float:
    """Fraction of accepted iterations; takes a trace or a boolean array."""
    flags = np.asarray(getattr(accepted, "accepted", accepted), dtype=bool)
    if flags.size == 0:
        raise DimensionError("empty trace")
    return float(flags.mean())


@dataclass(frozen=True)
class NoiseProbe:
    """Spread of repeated log-likelihood estimates at one parameter value.

    ``sd`` is taken over the finite replicates; ``n_neg_inf`` counts the
    replicates that returned ``-inf``.
    """

    sd: float
    mean: float
    n_finite: int
    n_neg_inf: int
    values: np.ndarray = field(repr=False)

    @property
    def frac_neg_inf(self) -> float:
        return self.n_neg_inf / (self.n_finite + self.n_neg_inf)


def loglik_noise_probe(model, data, theta, estimator: LikelihoodEstimator,
                       replicates: int, rng: RngStream) -> NoiseProbe:
    """Sample standard deviation of ``replicates`` independent estimates.

    Replicate ``r`` uses the child stream ``rng.spawn(r)``.

    Raises:
        DimensionError: for fewer than 10 replicates.
        EmcmcError: if every replicate is ``-inf``.
    """
    if replicates < 10:
        raise DimensionError("need at least 10 replicates")
    vals = np.array(
        [estimator(model, theta, data, rng.spawn(r)).value for r in range(replicates)]
    )
    finite = np.isfinite(vals)
    if not finite.any():
        raise EmcmcError("every replicate log-likelihood was -inf")
    good = vals[finite]
    sd = float(good.std(ddof=1)) if good.size > 1 else 0.0
    return NoiseProbe(sd, float(good.mean()), int(finite.sum()), int((~finite).sum()), vals)


@dataclass(frozen=True)
class EfficiencySummary:
    filter_kind: str
    n: int
    tau: float
    acceptance_rate: float
    mess: float
    wall_time: float

    def __post_init__(self):
        if not 0.0 <= self.acceptance_rate <= 1.0:
            raise ValueError("acceptance rate must lie in [0, 1]")
        if not self.wall_time > 0.0:
            raise ValueError("wall time must be positive")

    @property
    def mess_per_second(self) -> float:
        return self.mess / self.wall_time

    def as_dict(self) -> dict:
        return {
            "filter": self.filter_kind,
            "N": self.n,
            "tau": self.tau,
            "acceptance_rate": self.acceptance_rate,
            "mESS": self.mess,
            "wall_time_s": self.wall_time,
            "mESS_per_s": self.mess_per_second,
        }

    def table_row(self) -> str:
        return (
            f"{self.filter_kind:<16}{self.n:>8d}{self.tau:>10.3f}{self.acceptance_rate:>10.3f}"
            f"{self.mess:>12.1f}{self.wall_time:>12.2f}{self.mess_per_second:>12.2f}"
        )

    @staticmethod
    def table_header() -> str:
        return f"{'filter':<16}{'N':>8}{'tau':>10}{'acc':>10}{'mESS':>12}{'time_s':>12}{'mESS/s':>12}"


def efficiency_summary(trace, tau: float, burn_in: float = 0.1) -> EfficiencySummary:
    """Table-style summary of a chain after discarding ``burn_in`` of it."""
    samples = trace.samples[int(burn_in * trace.n_iters):]
    try:
        mess = multivariate_ess(samples).mess
    except (SingularCovarianceError, DimensionError) as exc:
        warnings.warn(f"mESS unavailable: {exc}", RuntimeWarning, stacklevel=2)
        mess = float("nan")
    return EfficiencySummary(
        trace.estimator, trace.n_particles, float(tau), acceptance_rate(trace.accepted),
        mess, max(trace.wall_time, 1e-9),
    )


def tau_table(probes: Sequence[tuple[int, NoiseProbe]]) -> list[dict]:
    return [{"N": n, "tau": pr.sd, "frac_neg_inf": pr.frac_neg_inf} for n, pr in probes]
