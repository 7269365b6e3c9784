"""Acceptance checks for the whole package.

Each test prints one ``PASS``/``FAIL`` line for its criterion before
asserting, so the run log doubles as a report.
"""

import math
import time

import numpy as np
import pytest
from scipy import signal, stats

from emcmc.diagnostics import multivariate_ess
from emcmc.filters import (
    LikelihoodEstimator,
    bpf_loglik,
    enkf_loglik,
    enkf_moments_rqmc,
    kalman_loglik,
    unbiased_gaussian_logpdf,
)
from emcmc.mcmc import ProposalSpec, correlated_emcmc_run, pilot_proposal, pmmh_run, tune_particles
from emcmc.models import (
    AUTOREGULATORY,
    AutoregulatoryModel,
    LinearGaussianModel,
    LinearGaussianParams,
    LotkaVolterraModel,
    build_model,
    gillespie_evolve,
    gillespie_step,
    simulate_dataset,
)
from emcmc.rand import RngStream, SobolSampler, crank_nicolson


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'} {title}: {detail}")

    return emit


@pytest.fixture(scope="module")
def ricker_setup():
    model = build_model("ricker")
    theta = model.default_theta()
    data = simulate_dataset(model, theta, 119, RngStream(7), include_y0=True)
    return model, theta, data


RICKER_SDS = np.array([0.09, 0.0043, 0.025, 0.045, 0.075])


def observed_rotation(n_steps, seed=1):
    """Damped rotation in two dimensions with both coordinates observed."""

    def matrices(theta):
        A = np.array([[0.8, 0.2], [-0.2, 0.8]])
        return LinearGaussianParams.of(A, 0.25 * np.eye(2), np.eye(2), 0.25 * np.eye(2), [0.0, 0.0],
                                       np.eye(2))

    model = LinearGaussianModel(matrices, ("dummy",), lambda theta: 0.0, truth=(0.0,))
    data = simulate_dataset(model, model.default_theta(), n_steps, RngStream(seed))
    return model, data


def linear_toy(n_steps, seed=1):
    model = build_model("linear-gaussian")
    data = simulate_dataset(model, model.default_theta(), n_steps, RngStream(seed))
    return model, data


def test_unbiased_density_estimator(report):
    start = time.perf_counter()
    rng = RngStream(101)
    reps, chunk = 10**6, 10**5
    worst = 0.0
    for d, n in ((1, 6), (2, 10), (3, 12)):
        queries = np.stack([np.zeros(d), 0.5 * np.ones(d), np.eye(d)[0]])
        total = np.zeros(3)
        total_sq = np.zeros(3)
        for _ in range(reps // chunk):
            x = rng.normals((chunk, n, d))
            mean = x.mean(axis=1)
            centred = x - mean[:, None, :]
            cov = np.einsum("rni,rnj->rij", centred, centred) / (n - 1)
            for q, y in enumerate(queries):
                est = np.exp(unbiased_gaussian_logpdf(y, mean, cov, n))
                total[q] += est.sum()
                total_sq[q] += (est * est).sum()
        mc_mean = total / reps
        se = np.sqrt((total_sq / reps - mc_mean**2) / reps)
        truth = stats.multivariate_normal(np.zeros(d), np.eye(d)).pdf(queries)
        worst = max(worst, float(np.max(np.abs(mc_mean - truth) / se)))
    elapsed = time.perf_counter() - start
    ok = worst < 3.0 and elapsed < 120
    report(1, "unbiased Gaussian density", ok, f"max |bias|/SE = {worst:.2f}, {elapsed:.1f}s")
    assert ok


def test_enkf_converges_to_kalman(report):
    start = time.perf_counter()
    model, data = observed_rotation(10)
    theta = model.default_theta()
    exact = kalman_loglik(model.kalman_params(theta), data)
    biases, variances = [], []
    for n in (50, 500, 5000):
        vals = np.array([enkf_loglik(model, theta, data, n, RngStream(s, n)).value for s in range(200)])
        biases.append(abs(vals.mean() - exact))
        variances.append(vals.var(ddof=1))
    elapsed = time.perf_counter() - start
    ok = (
        biases[0] > biases[1] > biases[2]
        and biases[2] < 0.05
        and variances[0] > variances[1] > variances[2]
        and elapsed < 60
    )
    detail = (f"|bias| {[round(float(b), 4) for b in biases]}, var {[f'{v:.2e}' for v in variances]}, "
              f"{elapsed:.1f}s")
    report(2, "EnKF to Kalman consistency", ok, detail)
    assert ok


def test_bpf_unbiased(report):
    start = time.perf_counter()
    model, data = observed_rotation(5)
    theta = model.default_theta()
    exact = kalman_loglik(model.kalman_params(theta), data)
    rng = RngStream(303)
    ratio = np.exp([bpf_loglik(model, theta, data, 100, rng.spawn(r)).value - exact for r in range(10**4)])
    se = ratio.std(ddof=1) / math.sqrt(ratio.size)
    z = abs(ratio.mean() - 1.0) / se
    elapsed = time.perf_counter() - start
    ok = z < 3.0 and elapsed < 60
    report(3, "BPF likelihood unbiasedness", ok,
           f"mean L_hat/L = {ratio.mean():.4f} (SE {se:.4f}, z={z:.2f}), {elapsed:.1f}s")
    assert ok


def test_lorenz_enkf_less_variable_than_bpf(report):
    start = time.perf_counter()
    model = build_model("lorenz63")
    theta = model.default_theta()
    data = simulate_dataset(model, theta, 30, RngStream(404))
    rng = RngStream(405)
    enkf = [enkf_loglik(model, theta, data, 100, rng.spawn(r)).value for r in range(30)]
    bpf = [bpf_loglik(model, theta, data, 100, rng.spawn(100 + r)).value for r in range(30)]
    sd_e, sd_b = np.std(enkf, ddof=1), np.std(bpf, ddof=1)
    elapsed = time.perf_counter() - start
    ok = bool(np.all(np.isfinite(enkf))) and sd_e < sd_b and elapsed < 120
    report(4, "Lorenz estimator variance ordering", ok,
           f"sd EnKF {sd_e:.3f} < sd BPF {sd_b:.3f}, {elapsed:.1f}s")
    assert ok


def test_early_rejection_exact(report, ricker_setup):
    start = time.perf_counter()
    model, theta, data = ricker_setup
    est = LikelihoodEstimator("enkf", 250)
    proposal = ProposalSpec.diagonal(RICKER_SDS)
    plain = pmmh_run(model, data, est, proposal, 2000, theta, RngStream(505))
    early = pmmh_run(model, data, est, proposal, 2000, theta, RngStream(505), early_rejection=True)
    identical = (
        np.array_equal(plain.samples, early.samples)
        and np.array_equal(plain.accepted, early.accepted)
        and np.array_equal(plain.log_like, early.log_like)
    )
    elapsed = time.perf_counter() - start
    ok = identical and early.total_steps < plain.total_steps and elapsed < 120
    report(5, "early-rejection exactness", ok,
           f"identical={identical}, steps {early.total_steps} < {plain.total_steps}, "
           f"acc {plain.acceptance_rate:.3f}, {elapsed:.1f}s")
    assert ok


def test_correlated_variant(report, ricker_setup):
    start = time.perf_counter()
    model, theta, data = ricker_setup
    proposed = []
    correlated_emcmc_run(
        model, data, 25, 0.1, ProposalSpec(np.zeros((5, 5))), 500, theta, RngStream(606),
        callback=lambda i, state, info: proposed.append(info.proposed_log_like),
    )
    ll = np.array(proposed)
    corr = float(np.corrcoef(ll[:-1], ll[1:])[0, 1])
    rng = RngStream(607)
    u = rng.normals(20000)
    for k in range(50):
        u = crank_nicolson(u, 0.1, rng.spawn(k))
    ks_p = stats.kstest(u, "norm").pvalue
    elapsed = time.perf_counter() - start
    ok = corr > 0.9 and ks_p > 1e-3 and elapsed < 60
    report(6, "correlated pseudo-marginal", ok,
           f"lag-1 corr {corr:.3f}, KS p {ks_p:.3f}, {elapsed:.1f}s")
    assert ok


def test_rqmc_variance_reduction(report):
    start = time.perf_counter()
    model, data = linear_toy(5)
    theta = model.default_theta()
    n = 256
    prev = model.sample_initial(theta, n, RngStream(707))
    d = model.dim_y + model.normal_draw_count
    qmc_means, mc_means = [], []
    for s in range(200):
        qmc_means.append(enkf_moments_rqmc(model, theta, prev, data.y[0], 1, SobolSampler(d, True, s)).mean)
        mc_means.append(enkf_moments_rqmc(model, theta, prev, data.y[0], 1, RngStream(708, s)).mean)
    var_qmc = np.var(qmc_means, axis=0, ddof=1).sum()
    var_mc = np.var(mc_means, axis=0, ddof=1).sum()
    elapsed = time.perf_counter() - start
    ok = var_qmc <= 0.25 * var_mc and elapsed < 120
    report(7, "RQMC variance reduction", ok,
           f"var ratio {var_qmc / var_mc:.4f} (<= 0.25), {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_end_to_end_posterior_recovery(report, ricker_setup):
    start = time.perf_counter()
    model, theta, data = ricker_setup
    iters = 50_000
    enkf = LikelihoodEstimator("enkf", 250)
    proposal, pilot = pilot_proposal(model, data, enkf, theta, 5000, RngStream(11))
    rep = np.median(pilot.samples[2500:], axis=0)
    tuned = tune_particles(model, data, rep, "bpf", [250, 500, 1000, 1500, 2000, 2500, 3000, 4000, 5000],
                           20, RngStream(12))
    emcmc = pmmh_run(model, data, enkf, proposal, iters, theta, RngStream(13))
    pmcmc = pmmh_run(model, data, LikelihoodEstimator("bpf", tuned.n), proposal, iters, theta,
                     RngStream(14))
    burn = iters // 10
    e, b = emcmc.samples[burn:], pmcmc.samples[burn:]
    pooled = np.sqrt(0.5 * (e.var(axis=0) + b.var(axis=0)))
    gap = np.abs(e.mean(axis=0) - b.mean(axis=0)) / pooled
    ratio = emcmc.wall_time / pmcmc.wall_time
    elapsed = time.perf_counter() - start
    ok = bool(np.all(gap < 0.5)) and ratio < 0.2 and elapsed < 1800
    report(8, "end-to-end posterior recovery", ok,
           f"tuned N={tuned.n}, mean gap/pooled sd {np.round(gap, 3).tolist()}, "
           f"time ratio {ratio:.3f} (eMCMC {emcmc.wall_time:.0f}s, pMCMC {pmcmc.wall_time:.0f}s), "
           f"total {elapsed:.0f}s")
    assert ok


def conjugate_model(obs_sd, prior_sd):
    def matrices(theta):
        return LinearGaussianParams.of(1.0, 0.0, 1.0, obs_sd**2, [theta[0]], 0.0)

    def log_prior(theta):
        return float(stats.norm.logpdf(theta[0], 0.0, prior_sd))

    return LinearGaussianModel(matrices, ("mu",), log_prior, truth=(1.0,))


def test_exact_sampler_matches_conjugate_posterior(report):
    start = time.perf_counter()
    obs_sd, prior_sd = 1.0, 2.0
    model = conjugate_model(obs_sd, prior_sd)
    data = simulate_dataset(model, model.default_theta(), 20, RngStream(909))
    precision = 1.0 / prior_sd**2 + data.n_obs / obs_sd**2
    post_mean = data.y.sum() / obs_sd**2 / precision
    post_sd = 1.0 / math.sqrt(precision)
    trace = pmmh_run(model, data, LikelihoodEstimator("kalman"), ProposalSpec.diagonal([2.4 * post_sd]),
                     40_000, [0.0], RngStream(910))
    draws = trace.samples[2000::38, 0]
    edges = stats.norm.ppf(np.linspace(0, 1, 21), post_mean, post_sd)
    counts = np.histogram(draws, bins=edges)[0]
    pvalue = stats.chisquare(counts).pvalue
    elapsed = time.perf_counter() - start
    ok = pvalue > 1e-3 and elapsed < 60
    report(9, "exact-sampler conjugate check", ok,
           f"chi-squared p {pvalue:.4f} on {draws.size} thinned draws, {elapsed:.1f}s")
    assert ok


def test_gillespie_correctness(report):
    start = time.perf_counter()
    lv = LotkaVolterraModel()
    c = lv.rates(lv.default_theta())
    x = np.tile([71.0, 79.0], (10**5, 1))
    dwell = gillespie_step(x, c, lv.network, RngStream(1010))[0]
    expected = 1.0 / 73.2225
    z = abs(dwell.mean() - expected) / (dwell.std(ddof=1) / math.sqrt(dwell.size))

    ar = AutoregulatoryModel()
    rates = ar.rates(ar.default_theta())
    violations = []

    def check(idx, states):
        if np.any(states < 0):
            violations.append("negative state")
        h = AUTOREGULATORY.hazards(states, rates)
        short = np.any(states[:, None, :] < AUTOREGULATORY.reactants[None], axis=2)
        if np.any(h[short] != 0.0):
            violations.append("hazard with missing reactant")
        if np.any(h[states[:, 3] <= 1.0, 4] != 0.0):
            violations.append("dimerisation with fewer than two proteins")

    start_states = np.tile(ar.x0, (10**4, 1))
    final = gillespie_evolve(start_states, rates, 10.0, RngStream(1011), AUTOREGULATORY, on_event=check)
    elapsed = time.perf_counter() - start
    ok = z < 3.0 and not violations and bool(np.all(final >= 0)) and elapsed < 120
    report(10, "Gillespie correctness", ok,
           f"dwell mean {dwell.mean():.6f} vs {expected:.6f} (z={z:.2f}), "
           f"{len(violations)} invariant violations, {elapsed:.1f}s")
    assert ok


def test_mess_calibration(report):
    start = time.perf_counter()
    rng = RngStream(1111)
    n = 10**4
    iid = rng.normals((n, 3))
    iid_ratio = multivariate_ess(iid).mess / n

    rho, m = 0.9, 10**5
    noise = rng.normals((m, 2)) * math.sqrt(1 - rho**2)
    noise[0] = rng.normals(2)
    ar = signal.lfilter([1.0], [1.0, -rho], noise, axis=0)
    factor = (1 - rho) / (1 + rho)
    ar_ratio = multivariate_ess(ar).mess / m / factor
    elapsed = time.perf_counter() - start
    ok = 0.8 <= iid_ratio <= 1.2 and 0.7 <= ar_ratio <= 1.3 and elapsed < 60
    report(11, "mESS calibration", ok,
           f"iid mESS/n {iid_ratio:.3f}, AR(1) mESS/(n*factor) {ar_ratio:.3f}, {elapsed:.1f}s")
    assert ok
