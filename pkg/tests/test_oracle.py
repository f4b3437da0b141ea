import numpy as np
import pytest

from bro.errors import DomainError
from bro.estimators import RiskSpec
from bro.models import MarketModel, QuadraticModel, rate_lambda, rate_mu
from bro.oracle import (
    OracleCache,
    brute_force_objective,
    crn_finite_difference,
    grid_search,
    mle_theta,
    quadratic_closed_form,
    quadratic_optimum,
)
from bro.posterior import PointPosterior, quadratic_posterior, synthetic_interarrivals

from conftest import central_diff, normal_cvar, normal_h, normal_var

POST = quadratic_posterior()
CVAR = RiskSpec.cvar(0.75)
SPECS = [RiskSpec.expectation(), RiskSpec.mean_variance(0.5), RiskSpec.var(0.75), CVAR]
PROBES = [-1.0, -0.3, 0.3, 0.474775, 1.2]


def test_closed_form_expectation_plug_in():
    assert quadratic_closed_form(1.0, RiskSpec.expectation(), POST).value == pytest.approx(-5.0)


@pytest.mark.parametrize("x", PROBES)
def test_closed_form_matches_independent_formulas(x):
    mean, sd = normal_h(x)
    assert quadratic_closed_form(x, RiskSpec.var(0.75), POST).value == pytest.approx(normal_var(x, 0.75), rel=1e-12)
    assert quadratic_closed_form(x, CVAR, POST).value == pytest.approx(normal_cvar(x, 0.75), rel=1e-12)
    assert quadratic_closed_form(x, RiskSpec.mean_variance(0.5), POST).value == pytest.approx(mean + 0.5 * sd**2)


def test_closed_form_cvar_at_reported_optimum():
    cf = quadratic_closed_form(0.474775, CVAR, POST)
    assert cf.value == pytest.approx(-2.38647, abs=1e-5)
    assert abs(cf.gradient) < 1e-4


def test_closed_form_gradient_zero_at_exact_optimum():
    x, _ = quadratic_optimum(CVAR, POST)
    assert abs(quadratic_closed_form(x, CVAR, POST).gradient) < 1e-6


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.label)
@pytest.mark.parametrize("x", [-2.0, -0.5, 0.2, 0.474775, 1.5, 3.0])
def test_closed_form_gradient_matches_finite_difference(spec, x):
    fd = central_diff(lambda v: quadratic_closed_form(v, spec, POST).value, x, 1e-5)
    g = quadratic_closed_form(x, spec, POST).gradient
    assert abs(g - fd) <= 1e-6 * max(1.0, abs(g))


def test_closed_form_kink_at_zero_is_flagged():
    cf = quadratic_closed_form(0.0, CVAR, POST)
    assert cf.one_sided
    right = (quadratic_closed_form(1e-7, CVAR, POST).value - cf.value) / 1e-7
    assert cf.gradient == pytest.approx(right, rel=1e-4)
    assert not quadratic_closed_form(0.0, RiskSpec.expectation(), POST).one_sided
    assert not quadratic_closed_form(0.1, CVAR, POST).one_sided


def test_optimum_cvar():
    x, v = quadratic_optimum(CVAR, POST)
    assert x == pytest.approx(0.474775, abs=1e-5)
    assert v == pytest.approx(-2.38647, abs=1e-5)


def test_optimum_expectation():
    x, v = quadratic_optimum(RiskSpec.expectation(), POST)
    assert x == pytest.approx(0.75, abs=1e-8)
    assert v == pytest.approx(-15 * 0.75 + 10 * 0.5625, abs=1e-10)


@pytest.mark.parametrize("theta", [(-15.0, 10.0), (-3.0, 2.0), (4.0, 5.0)])
def test_optimum_degenerate_posterior(theta):
    x, _ = quadratic_optimum(CVAR, PointPosterior(np.array(theta)))
    assert x == pytest.approx(-theta[0] / (2 * theta[1]), abs=1e-8)


def test_closed_form_rejects_empirical_posterior():
    from bro.posterior import EmpiricalPosterior

    with pytest.raises(DomainError):
        quadratic_closed_form(0.3, CVAR, EmpiricalPosterior([np.zeros((3, 2))]))


def test_brute_force_expectation_spec_example():
    value, se = brute_force_objective(QuadraticModel(), POST, RiskSpec.expectation(), 1.0, 10_000, 10_000, 0)
    assert abs(value + 5.0) < 3 * se


def test_brute_force_cvar_at_optimum():
    value, se = brute_force_objective(QuadraticModel(), POST, CVAR, 0.474775, 10_000, 1000, 1)
    assert abs(value + 2.38647) < 3 * se


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.label)
def test_brute_force_matches_closed_form(spec):
    for i, x in enumerate(PROBES):
        value, se = brute_force_objective(QuadraticModel(), POST, spec, x, 10_000, 500, 100 + i)
        exact = quadratic_closed_form(x, spec, POST).value
        assert abs(value - exact) <= 3 * se, (x, value, exact, se)


def test_brute_force_deterministic_and_crn():
    args = (QuadraticModel(), POST, CVAR)
    a = brute_force_objective(*args, 0.3, 500, 20, 5)
    b = brute_force_objective(*args, 0.3, 500, 20, 5)
    assert a == b
    # shared randomness: neighbouring decisions give nearby values
    c = brute_force_objective(*args, 0.3001, 500, 20, 5)
    assert abs(c[0] - a[0]) < 1e-2 * a[1]


def test_crn_finite_difference_matches_closed_form_gradient():
    fd, se = crn_finite_difference(QuadraticModel(), POST, CVAR, 1.0, 1e-3, 20_000, 50, 3)
    # 0.05 allows for the O(1/m) nesting bias at m=50
    assert abs(fd - quadratic_closed_form(1.0, CVAR, POST).gradient) < 3 * se + 0.05


def test_grid_search_quadratic_cvar():
    x, value = grid_search(QuadraticModel(), POST, CVAR, 0.01, 20_000, 100, 0, exact_means=True)
    assert abs(x - 0.474775) <= 0.01
    assert value == pytest.approx(-2.386, abs=0.05)


def test_grid_search_rejects_bad_step():
    with pytest.raises(DomainError):
        grid_search(QuadraticModel(), POST, CVAR, 0.0, 10, 2, 0)


def test_mle_exponential_identity():
    data_c = np.array([0.05, 0.04, 0.06])
    data_p = np.array([0.2, 0.1, 0.15])
    th = mle_theta(data_c, data_p)
    assert rate_lambda(10.0, th[0]) == pytest.approx(1 / data_c.mean(), rel=1e-10)
    assert rate_mu(10.0, th[1]) == pytest.approx(1 / data_p.mean(), rel=1e-10)


def test_mle_consistency():
    errs = []
    for size in (100, 100_000):
        rng = np.random.default_rng(size)
        data_c = synthetic_interarrivals(rate_lambda(10.0, 0.1), size, rng)
        data_p = synthetic_interarrivals(rate_mu(10.0, 0.05), size, rng)
        errs.append(np.abs(mle_theta(data_c, data_p) - [0.1, 0.05]))
    assert np.all(errs[1] < 2e-3)
    assert np.all(errs[1] < errs[0])


def test_mle_rejects_degenerate_data():
    with pytest.raises(DomainError):
        mle_theta(np.zeros(5), np.ones(5))


def test_market_grid_search_small():
    # true-theta expected cost: reference minimizer near 20.47
    model = MarketModel()
    x, value = grid_search(model, PointPosterior(np.array([0.1, 0.05])), RiskSpec.expectation(), 0.5, 1, 20_000, 0,
                           box=(17.0, 24.0))
    assert abs(x - 20.47) <= 1.0
    assert value == pytest.approx(-7.16, abs=0.05)


def test_oracle_cache_round_trip(tmp_path):
    path = tmp_path / "cache.csv"
    cache = OracleCache(path)
    first = cache.brute_force("quadratic", QuadraticModel(), POST, CVAR, 0.3, 200, 10, 1)
    reloaded = OracleCache(path)
    key = OracleCache.key("quadratic", CVAR, 0.3, 200, 10, 1)
    assert reloaded.get(key) == first
    assert reloaded.brute_force("quadratic", None, None, CVAR, 0.3, 200, 10, 1) == first
