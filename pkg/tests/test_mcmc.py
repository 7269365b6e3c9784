import math
from dataclasses import dataclass

import numpy as np
import pytest

from emcmc.core import ConfigError, DomainError, SingularCovarianceError
from emcmc.diagnostics import multivariate_ess
from emcmc.filters import LikelihoodEstimator
from emcmc.mcmc import (
    ChainState,
    InitializationError,
    ProposalSpec,
    correlated_emcmc_run,
    early_rejection_emcmc_step,
    initial_state,
    log_acceptance_ratio,
    pilot_proposal,
    pmmh_run,
    tune_particles,
)
from emcmc.models import LinearGaussianModel, LinearGaussianParams, build_model, simulate_dataset
from emcmc.rand import RngStream

from conftest import constant_mean_model, dataset, scalar_walk

RICKER_SDS = [0.09, 0.0043, 0.025, 0.045, 0.075]


@dataclass(frozen=True)
class CountingEstimator(LikelihoodEstimator):
    calls: list = None

    def __call__(self, *args, **kwargs):
        self.calls.append(1)
        return super().__call__(*args, **kwargs)


def test_zero_covariance_proposal_never_moves(ricker_data):
    model, data = ricker_data
    theta = model.default_theta()
    trace = pmmh_run(model, data, LikelihoodEstimator("enkf", 25), ProposalSpec(np.zeros((5, 5))), 200,
                     theta, RngStream(1))
    assert np.all(trace.samples == theta)
    assert 0.0 < trace.acceptance_rate < 1.0


def test_flat_prior_constant_likelihood_always_accepts(walk_data):
    model, data = walk_data
    trace = pmmh_run(model, data, LikelihoodEstimator("kalman"), ProposalSpec.diagonal([1.0]), 500, [0.0],
                     RngStream(2))
    assert trace.acceptance_rate == 1.0


def test_conjugate_posterior_mean():
    model = constant_mean_model(1.0, 2.0)
    data = simulate_dataset(model, model.default_theta(), 15, RngStream(3))
    precision = 1 / 4 + data.n_obs
    post_mean = data.y.sum() / precision
    post_sd = 1 / math.sqrt(precision)
    trace = pmmh_run(model, data, LikelihoodEstimator("kalman"), ProposalSpec.diagonal([2.4 * post_sd]),
                     5000, [0.0], RngStream(4))
    draws = trace.samples[500:]
    mcse = draws.std() / math.sqrt(multivariate_ess(draws).mess)
    assert abs(draws.mean() - post_mean) < 3 * mcse


def test_acceptance_ratio_antisymmetric():
    assert log_acceptance_ratio(-3.0, -1.0, -5.0, -0.5) == -log_acceptance_ratio(-5.0, -0.5, -3.0, -1.0)
    assert log_acceptance_ratio(-math.inf, 0.0, 1.0, 1.0) == -math.inf


def test_rejections_never_reevaluate_incumbent(walk_data):
    model, data = walk_data
    est = CountingEstimator("bpf", 20, [])
    pmmh_run(model, data, est, ProposalSpec.diagonal([0.5]), 100, [0.0], RngStream(5))
    assert len(est.calls) == 100 + 1


def test_incumbent_estimate_carried_forward(ricker_data):
    model, data = ricker_data
    trace = pmmh_run(model, data, LikelihoodEstimator("enkf", 25), ProposalSpec.diagonal(RICKER_SDS), 300,
                     model.default_theta(), RngStream(6))
    rejected = ~trace.accepted[1:]
    np.testing.assert_array_equal(trace.log_like[1:][rejected], trace.log_like[:-1][rejected])


def test_early_rejection_equivalence(ricker_data):
    model, data = ricker_data
    est = LikelihoodEstimator("enkf", 50)
    prop = ProposalSpec.diagonal(RICKER_SDS)
    a = pmmh_run(model, data, est, prop, 300, model.default_theta(), RngStream(7))
    b = pmmh_run(model, data, est, prop, 300, model.default_theta(), RngStream(7), early_rejection=True)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.accepted, b.accepted)
    assert b.total_steps < a.total_steps
    assert np.all(b.early_stop_t[b.accepted] == data.n_obs + 1)


def test_early_rejection_step_function(ricker_data):
    model, data = ricker_data
    theta = model.default_theta()
    state = initial_state(model, data, LikelihoodEstimator("enkf", 30), theta, RngStream(1))
    new, info = early_rejection_emcmc_step(state, model, data, 30, ProposalSpec.diagonal(RICKER_SDS),
                                           RngStream(2))
    assert isinstance(new, ChainState) and 0 <= info.stop <= data.n_obs + 1


def test_early_rejection_needs_plugin_enkf(walk_data):
    model, data = walk_data
    with pytest.raises(ConfigError):
        pmmh_run(model, data, LikelihoodEstimator("bpf", 10), ProposalSpec.diagonal([1.0]), 10, [0.0],
                 RngStream(0), early_rejection=True)


def test_early_rejection_singular_covariance_fails_loudly():
    def matrices(theta):
        return LinearGaussianParams.of(1.0, 1.0, 1.0, 0.0 if theta[0] > 0.5 else 1.0, [0.0], 1.0)

    model = LinearGaussianModel(matrices, ("a",), lambda th: 0.0, truth=(0.0,))
    with pytest.raises(SingularCovarianceError) as info:
        pmmh_run(model, dataset([0.1, 0.2]), LikelihoodEstimator("enkf", 10), ProposalSpec.diagonal([5.0]),
                 200, [0.0], RngStream(1), early_rejection=True)
    assert info.value.partial_trace.n_iters < 200


def test_correlated_full_refresh_matches_plain(linear_model_data):
    model, data = linear_model_data
    theta = model.default_theta()
    prop = ProposalSpec.diagonal([0.05, 0.1, 0.1])
    # same master seed shares the proposal and uniform draws, and a large ensemble
    # keeps the two chains coupled so the check is not swamped by chain noise
    plain = pmmh_run(model, data, LikelihoodEstimator("enkf", 200), prop, 10**4, theta, RngStream(8))
    corr = correlated_emcmc_run(model, data, 200, 1.0, prop, 10**4, theta, RngStream(8))
    assert abs(plain.acceptance_rate - corr.acceptance_rate) < 0.02


def test_correlated_estimates_are_correlated(ricker_data):
    model, data = ricker_data
    proposed = []
    correlated_emcmc_run(model, data, 25, 0.01, ProposalSpec(np.zeros((5, 5))), 500, model.default_theta(),
                         RngStream(10), callback=lambda i, s, info: proposed.append(info.proposed_log_like))
    ll = np.array(proposed)
    assert np.corrcoef(ll[:-1], ll[1:])[0, 1] > 0.9


def test_correlated_rejection_keeps_joint_state(ricker_data):
    model, data = ricker_data
    states = []
    trace = correlated_emcmc_run(model, data, 25, 0.1, ProposalSpec.diagonal(RICKER_SDS), 100,
                                 model.default_theta(), RngStream(11),
                                 callback=lambda i, s, info: states.append((s.theta, s.u)))
    for i in range(1, 100):
        if not trace.accepted[i]:
            assert states[i][0] is states[i - 1][0] and states[i][1] is states[i - 1][1]


def test_correlated_unavailable_for_jump_processes():
    model = build_model("lotka-volterra")
    data = simulate_dataset(model, model.default_theta(), 3, RngStream(0))
    with pytest.raises(ConfigError):
        correlated_emcmc_run(model, data, 10, 0.1, ProposalSpec.diagonal([0.1] * 5), 5,
                             model.default_theta(), RngStream(0))


def test_correlated_sigma_domain(walk_data):
    model, data = walk_data
    with pytest.raises(DomainError):
        correlated_emcmc_run(model, data, 10, 0.0, ProposalSpec.diagonal([1.0]), 5, [0.0], RngStream(0))


def test_initialization_failures():
    model = build_model("ricker")
    data = simulate_dataset(model, model.default_theta(), 5, RngStream(0))
    with pytest.raises(InitializationError):
        initial_state(model, data, LikelihoodEstimator("enkf", 10), [0, 0, -1.0, 0.1, 0.0], RngStream(0))
    hopeless = scalar_walk(obs_var=1e-300, proc_var=0.0, init_var=0.0)
    with pytest.raises(InitializationError):
        initial_state(hopeless, dataset([1e5]), LikelihoodEstimator("bpf", 5), [0.0], RngStream(0),
                      max_tries=5)


def test_proposal_validation():
    with pytest.raises(DomainError):
        ProposalSpec(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(DomainError):
        ProposalSpec(np.array([[-1.0]]))
    with pytest.raises(DomainError):
        ProposalSpec(np.eye(2), scale=0.0)


def test_proposal_dimension_checked(walk_data):
    model, data = walk_data
    with pytest.raises(ConfigError):
        pmmh_run(model, data, LikelihoodEstimator("kalman"), ProposalSpec(np.eye(2)), 5, [0.0], RngStream(0))


def test_tuning_exact_estimator_picks_smallest(linear_model_data):
    model, data = linear_model_data
    result = tune_particles(model, data, model.default_theta(), "kalman", [10, 100], 10, RngStream(0))
    assert result.n == 10 and result.met_target
    assert all(p.sd == pytest.approx(0.0, abs=1e-10) for _, p in result.table)


def test_tuning_reports_every_candidate(ricker_data):
    model, data = ricker_data
    result = tune_particles(model, data, model.default_theta(), "enkf", [5, 50, 500], 20, RngStream(1))
    sds = [p.sd for _, p in result.table]
    assert [n for n, _ in result.table] == [5, 50, 500]
    assert sds[0] > sds[1] > sds[2]


def test_tuning_without_qualifying_candidate_warns(ricker_data):
    model, data = ricker_data
    with pytest.warns(RuntimeWarning):
        result = tune_particles(model, data, model.default_theta(), "bpf", [2, 3], 10, RngStream(2),
                                target_sd=1e-6)
    assert result.n == 3 and not result.met_target


def test_tuning_input_checks(walk_data):
    model, data = walk_data
    with pytest.raises(ConfigError):
        tune_particles(model, data, [0.0], "enkf", [], 10, RngStream(0))
    with pytest.raises(ConfigError):
        tune_particles(model, data, [0.0], "enkf", [10], 5, RngStream(0))


def test_pilot_returns_positive_definite_covariance(ricker_data):
    model, data = ricker_data
    prop, trace = pilot_proposal(model, data, LikelihoodEstimator("enkf", 30), model.default_theta(), 600,
                                 RngStream(12), initial=ProposalSpec.diagonal(RICKER_SDS))
    assert np.linalg.eigvalsh(prop.covariance).min() > 0
    assert trace.n_iters == 600


def test_runs_are_reproducible(ricker_data):
    model, data = ricker_data
    args = (model, data, LikelihoodEstimator("enkf", 20), ProposalSpec.diagonal(RICKER_SDS), 100,
            model.default_theta())
    np.testing.assert_array_equal(pmmh_run(*args, RngStream(3)).samples, pmmh_run(*args, RngStream(3)).samples)
