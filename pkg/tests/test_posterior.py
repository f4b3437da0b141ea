import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from bro.errors import ConfigError, DomainError
from bro.models import rate_lambda, rate_mu
from bro.posterior import (
    EmpiricalPosterior,
    GaussianPosterior,
    MCMCConfig,
    PointPosterior,
    chain_convergence_report,
    config_hash,
    interarrival_log_likelihood,
    metropolis_hastings,
    quadratic_posterior,
    read_chain,
    synthetic_interarrivals,
    wasserstein_1d,
    write_chain,
)

FLAT = lambda theta: 0.0


def test_gaussian_moments():
    draws = quadratic_posterior().sample(np.random.default_rng(0), 1_000_000)
    assert draws.shape == (1_000_000, 2)
    assert draws[:, 0].mean() == pytest.approx(-15, abs=0.02)
    assert draws[:, 0].var() == pytest.approx(16, abs=0.1)
    assert draws[:, 1].mean() == pytest.approx(10, abs=0.01)
    assert draws[:, 1].var() == pytest.approx(4, abs=0.05)


def test_gaussian_tiny_std_collapses_to_mean():
    post = GaussianPosterior(np.array([-15.0, 10.0]), np.array([1e-12, 1e-12]))
    draws = post.sample(np.random.default_rng(0), 100)
    assert np.allclose(draws, [-15.0, 10.0], atol=1e-9)


def test_gaussian_rejects_nonpositive_std():
    with pytest.raises(DomainError):
        GaussianPosterior(np.array([0.0]), np.array([0.0]))


def test_gaussian_from_variance():
    post = GaussianPosterior.from_variance([-15, 10], [16, 4])
    assert np.allclose(post.std, [4, 2])
    assert np.allclose(post.variance, [16, 4])


def test_point_posterior():
    draws = PointPosterior(np.array([0.1, 0.05])).sample(np.random.default_rng(0), 5)
    assert np.array_equal(draws, np.tile([0.1, 0.05], (5, 1)))


def test_log_likelihood_single_datum():
    assert interarrival_log_likelihood(0.0, [1.0], lambda p, t: 1.0, 10.0) == pytest.approx(-1.0)


@given(
    data=st.lists(st.floats(1e-3, 10), min_size=1, max_size=30),
    rate=st.floats(0.1, 50),
)
@settings(max_examples=50, deadline=None)
def test_log_likelihood_closed_form(data, rate):
    ll = interarrival_log_likelihood(0.0, data, lambda p, t: rate, 10.0)
    expected = len(data) * math.log(rate) - rate * math.fsum(data)
    assert ll == pytest.approx(expected, rel=1e-10, abs=1e-9)


def test_log_likelihood_rejects_bad_input():
    with pytest.raises(DomainError):
        interarrival_log_likelihood(0.1, [1.0, -1.0], rate_lambda, 10.0)
    with pytest.raises(DomainError):
        interarrival_log_likelihood(0.1, [1.0], lambda p, t: 0.0, 10.0)


@pytest.mark.parametrize("rate_fn,theta", [(rate_lambda, 0.1), (rate_mu, 0.05)])
def test_grid_mle_recovers_generating_theta(rate_fn, theta):
    grid = np.linspace(0.01, 0.5, 4901)
    errors = []
    for size in (100, 10_000):
        data = synthetic_interarrivals(rate_fn(10.0, theta), size, np.random.default_rng(size))
        ll = [interarrival_log_likelihood(g, data, rate_fn, 10.0) for g in grid]
        errors.append(abs(grid[int(np.argmax(ll))] - theta))
    assert errors[1] < 0.005
    assert errors[1] <= errors[0] + 1e-4


def test_mcmc_config_validation():
    with pytest.raises(ConfigError) as err:
        MCMCConfig(init=0.6)
    assert err.value.field == "init"
    with pytest.raises(ConfigError):
        MCMCConfig(proposal_std=0.0)
    with pytest.raises(ConfigError):
        MCMCConfig(chain_length=10, burn_in=10)


def flat_acceptance(sigma, lo, hi):
    # P(candidate stays in bounds) with the current state ~ Uniform(lo, hi)
    inside = lambda x: stats.norm.cdf((hi - x) / sigma) - stats.norm.cdf((lo - x) / sigma)
    return integrate.quad(inside, lo, hi)[0] / (hi - lo)


def test_flat_likelihood_targets_uniform_prior():
    cfg = MCMCConfig(proposal_std=0.1, chain_length=200_000, burn_in=10_000, seed=3)
    res = metropolis_hastings(cfg, FLAT)
    q = np.linspace(0.05, 0.95, 19)
    assert np.max(np.abs(np.quantile(res.states, q) - (0.01 + 0.49 * q))) < 0.01
    assert res.acceptance_rate == pytest.approx(flat_acceptance(0.1, 0.01, 0.5), abs=0.01)
    assert res.accepted == res.proposed - res.out_of_bounds


def test_states_stay_inside_prior():
    cfg = MCMCConfig(proposal_std=0.3, chain_length=50_000, burn_in=1000, init=0.49, seed=1)
    res = metropolis_hastings(cfg, lambda t: -100 * t)
    assert np.all(res.states > 0.01) and np.all(res.states < 0.5)
    assert res.out_of_bounds > 0


def test_out_of_bounds_candidate_never_accepted():
    # likelihood increasing without bound outside the support would pull the chain out
    cfg = MCMCConfig(proposal_std=0.05, chain_length=20_000, burn_in=100, init=0.45, seed=2)
    res = metropolis_hastings(cfg, lambda t: 1e6 * t)
    assert res.states.max() < 0.5
    assert res.states.max() > 0.45


def test_chain_length_counts_post_burn_in_states():
    res = metropolis_hastings(MCMCConfig(chain_length=1234, burn_in=100, seed=0), FLAT)
    assert res.states.shape == (1234,)
    assert res.proposed == 1334


def test_mcmc_seed_determinism():
    cfg = MCMCConfig(chain_length=5000, burn_in=100, seed=7)
    a = metropolis_hastings(cfg, FLAT).states
    b = metropolis_hastings(cfg, FLAT).states
    assert np.array_equal(a, b)


def test_flat_chain_detailed_balance():
    cfg = MCMCConfig(proposal_std=0.1, chain_length=300_000, burn_in=1000, seed=4)
    s = metropolis_hastings(cfg, FLAT).states
    bins = np.digitize(s, [0.17, 0.34])
    counts = np.zeros((3, 3))
    np.add.at(counts, (bins[:-1], bins[1:]), 1)
    for i, j in [(0, 1), (1, 2), (0, 2)]:
        total = counts[i, j] + counts[j, i]
        assert total > 100
        assert abs(counts[i, j] - counts[j, i]) < 4 * math.sqrt(total)


def test_empirical_index_uniform():
    n_states = 50
    post = EmpiricalPosterior([np.arange(n_states, dtype=float)])
    draws = 1_000_000
    idx = post.sample_indices(np.random.default_rng(0), draws)[:, 0]
    hist = np.bincount(idx, minlength=n_states)
    p = 1 / n_states
    band = 4 * math.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(hist - draws * p) < band)


def test_empirical_product_of_chains():
    post = EmpiricalPosterior([np.array([1.0, 2.0]), np.array([10.0, 20.0, 30.0])])
    draws = post.sample(np.random.default_rng(0), 60_000)
    assert post.dim == 2
    assert set(draws[:, 0]) == {1.0, 2.0}
    assert set(draws[:, 1]) == {10.0, 20.0, 30.0}
    # independent indices: the joint cell frequencies factorise
    joint = np.mean((draws[:, 0] == 1.0) & (draws[:, 1] == 10.0))
    assert joint == pytest.approx(1 / 6, abs=0.01)


def test_empirical_rejects_empty():
    with pytest.raises(DomainError):
        EmpiricalPosterior([np.array([])])


def test_wasserstein_examples():
    a = np.random.default_rng(0).normal(size=100)
    assert wasserstein_1d(a, a) == 0.0
    assert wasserstein_1d([0.0], [1.0]) == 1.0
    with pytest.raises(DomainError):
        wasserstein_1d([], [1.0])


@given(
    st.lists(st.floats(-100, 100), min_size=1, max_size=40).flatmap(
        lambda a: st.tuples(
            st.just(a),
            st.lists(st.floats(-100, 100), min_size=len(a), max_size=len(a)),
            st.lists(st.floats(-100, 100), min_size=len(a), max_size=len(a)),
        )
    )
)
@settings(max_examples=100, deadline=None)
def test_wasserstein_metric_properties(triple):
    a, b, c = triple
    ab = wasserstein_1d(a, b)
    assert ab == pytest.approx(wasserstein_1d(b, a))
    assert ab >= 0
    assert wasserstein_1d(a, c) <= ab + wasserstein_1d(b, c) + 1e-9
    assert ab == pytest.approx(stats.wasserstein_distance(a, b), abs=1e-9)
    if ab == 0:
        assert sorted(a) == sorted(b)


def test_wasserstein_unequal_sizes_near_scipy():
    rng = np.random.default_rng(1)
    a = rng.normal(size=3000)
    b = rng.normal(0.5, 1.0, size=20_000)
    assert wasserstein_1d(a, b) == pytest.approx(stats.wasserstein_distance(a, b), abs=0.01)


def test_report_iid_is_stationary():
    chain = np.random.default_rng(0).uniform(0.01, 0.5, 200_000)
    rep = chain_convergence_report(chain, 20_000)
    assert rep.stationary
    assert len(rep.consecutive) == 9
    assert rep.mean_consecutive < 0.01


def test_report_flags_drift():
    rng = np.random.default_rng(0)
    chain = rng.normal(size=200_000) * 0.01 + np.linspace(0, 1, 200_000)
    rep = chain_convergence_report(chain, 20_000)
    assert not rep.stationary
    assert rep.mean_arbitrary > rep.mean_consecutive


def test_report_random_pairs():
    chain = np.random.default_rng(0).uniform(size=100_000)
    rep = chain_convergence_report(chain, 10_000, rng=np.random.default_rng(1), pairs=12)
    assert len(rep.arbitrary) == 12


def test_report_short_chain_rejected():
    with pytest.raises(DomainError):
        chain_convergence_report(np.zeros(10), 6)


def test_chain_round_trip(tmp_path):
    states = np.random.default_rng(0).uniform(0.01, 0.5, 1000)
    h = config_hash(MCMCConfig())
    path = tmp_path / "chain.csv"
    write_chain(path, states, "customer", h, 5)
    back, header = read_chain(path)
    assert np.array_equal(back, states)
    assert header == {"chain_id": "customer", "config_hash": h, "seed": "5"}


def test_config_hash_stable():
    assert config_hash(MCMCConfig()) == config_hash(MCMCConfig())
    assert config_hash(MCMCConfig()) != config_hash(MCMCConfig(seed=1))
