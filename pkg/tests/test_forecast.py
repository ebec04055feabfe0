import numpy as np
import pytest
from scipy.stats import norm

from paneltobit.forecast import (
    ForecastError, PredictiveDrawComponents, SetForecast, build_predictive_density,
    direct_multistep_estimate, hpd_average, hpd_pointwise, hpd_pointwise_all,
    predictive_components,
)
from paneltobit.gibbs import PosteriorDraws, SamplerSettings
from paneltobit.montecarlo import DgpSpec, simulate_dgp
from paneltobit.panel import PanelData, per_unit_variance_mean
from paneltobit.priors import PriorTuning, default_priors, named_spec
from paneltobit.rng import stream


def _fake_draws(rho, lam, sig2, yT, beta=None, N=1):
    M = np.size(rho)
    arrays = {"rho": np.atleast_1d(np.asarray(rho, float)),
              "lam": np.broadcast_to(np.asarray(lam, float), (N, M)).T.copy(),
              "sig2": np.broadcast_to(np.asarray(sig2, float), (N, M)).T.copy(),
              "ystar_T": np.broadcast_to(np.asarray(yT, float), (N, M)).T.copy(),
              "beta": np.zeros((M, 0)) if beta is None else np.atleast_2d(beta)}
    return PosteriorDraws(arrays, named_spec("normal_hetero"), PriorTuning(),
                          SamplerSettings(), [str(i) for i in range(N)], T=2)


def _pd(mu, var, seed=0):
    mu = np.atleast_2d(np.asarray(mu, float))
    var = np.broadcast_to(np.asarray(var, float), mu.shape).copy()
    return build_predictive_density(PredictiveDrawComponents(mu, var), stream(seed))


def test_one_and_two_step_moments():
    d = _fake_draws(0.8, 1.0, 1.0, 0.0)
    data = PanelData(np.ones((1, 3)))
    c1 = predictive_components(d, data, h=1)
    assert np.allclose(c1.mu, 1.0) and np.allclose(c1.var, 1.0)
    c2 = predictive_components(d, data, h=2)
    assert np.allclose(c2.mu, 1.8) and np.allclose(c2.var, 1.64)


def test_memoryless_case_with_regressor():
    y = np.ones((1, 3))
    x = np.arange(4.0).reshape(1, 4, 1)        # x_{-1}..x_2, so x_T = 3
    data = PanelData(y, x)
    d = _fake_draws(0.0, 0.5, 2.0, 7.0, beta=[[0.25]])
    c = predictive_components(d, data, h=1)
    assert np.allclose(c.mu, 0.5 + 0.25 * data.x[0, 3, 0]) and np.allclose(c.var, 2.0)
    xf = np.full((1, 2, 1), 4.0)
    c3 = predictive_components(d, data, h=3, x_future=xf)
    assert np.allclose(c3.mu, 0.5 + 0.25 * 4.0) and np.allclose(c3.var, 2.0)
    with pytest.raises(ForecastError):
        predictive_components(d, PanelData(y, x), h=2)


@pytest.mark.parametrize("mu, expected", [
    ([-50.0], 1.0),
    ([0.0], 0.5),
    ([-1.0, 1.0], 0.5),
])
def test_zero_probability(mu, expected):
    pd = _pd([mu], 1.0)
    assert pd.pi0[0] == pytest.approx(expected, abs=1e-12)


def test_weight_sum_identity():
    r = np.random.default_rng(0)
    pd = _pd(r.normal(0, 2, (5, 300)), r.uniform(0.2, 3, (5, 300)))
    assert np.allclose(pd.weights.mean(axis=1) + pd.pi0, 1.0, atol=1e-10)
    assert np.all(pd.samples >= 0)


def test_density_methods_agree():
    r = np.random.default_rng(1)
    mu, var = r.normal(1, 1, (3, 1000)), r.uniform(0.5, 2, (3, 1000))
    comp = PredictiveDrawComponents(mu, var)
    a = build_predictive_density(comp, stream(2), density_method="exact")
    b = build_predictive_density(comp, stream(2), density_method="grid")
    assert np.array_equal(a.samples, b.samples)
    assert np.max(np.abs(a.density - b.density)) < 1e-3


def test_point_forecast_matches_simulation():
    pd = _pd([[0.3, -0.5, 1.2]], [[1.0, 0.5, 2.0]])
    z = np.random.default_rng(3).normal([0.3, -0.5, 1.2], np.sqrt([1.0, 0.5, 2.0]),
                                         (400000, 3))
    assert pd.point_forecast()[0] == pytest.approx(np.maximum(z, 0).mean(), abs=5e-3)


def _analytic_mass(pd, i, sf):
    mu, sd = pd.components.mu[i], pd.components.sd[i]
    m = pd.pi0[i] if sf.includes_zero else 0.0
    for a, b in sf.segments:
        m += np.mean(norm.cdf((b - mu) / sd) - norm.cdf((a - mu) / sd))
    return m


def test_pointwise_zero_only_when_atom_dominates():
    pd = _pd([[-1.645] * 50], 1.0)
    assert pd.pi0[0] >= 0.9
    sf = hpd_pointwise(pd, 0.10)
    assert sf.includes_zero and sf.segments == [] and sf.kind() == "zero_only"


def test_pointwise_unimodal_single_interval():
    M = 4000
    pd = _pd(np.full((1, M), 8.0), 1.0)
    sf = hpd_pointwise(pd, 0.10)
    assert len(sf.segments) == 1
    a, b = sf.segments[0]
    assert a < 8.0 < b
    assert abs(_analytic_mass(pd, 0, sf) - 0.90) < 2 / np.sqrt(M)


def test_pointwise_bimodal_matches_threshold_search():
    M = 4000
    mu = np.where(np.arange(M) % 2 == 0, 5.0, 12.0)[None, :]
    pd = _pd(mu, 1.0, seed=4)
    sf = hpd_pointwise(pd, 0.10)
    assert len(sf.segments) == 2
    assert abs(_analytic_mass(pd, 0, sf) - 0.90) < 2 / np.sqrt(M)
    # brute force: the largest threshold whose super-level set has enough weight
    dens, w, y = pd.density[0], pd.weights[0], pd.samples[0]
    target = (0.90 - pd.pi0[0]) * M
    kappa = max(k for k in np.unique(dens) if w[dens >= k].sum() >= target)
    inside = np.zeros(M, bool)
    for a, b in sf.segments:
        inside |= (y >= a) & (y <= b)
    assert dens[inside].min() >= dens[~inside].max() - 1e-15
    assert np.all(inside[dens > kappa] | (dens[dens > kappa] < 0))  # everything above kappa kept


def test_average_with_one_unit_equals_pointwise():
    pd = _pd(np.random.default_rng(5).normal(1, 1, (1, 800)), 1.0)
    a, = hpd_average(pd, 0.10)
    p = hpd_pointwise(pd, 0.10)
    assert a.segments == p.segments and a.includes_zero == p.includes_zero


def test_average_identical_units_equal_pointwise():
    mu = np.random.default_rng(6).normal(2, 1, 600)
    comp = PredictiveDrawComponents(np.tile(mu, (3, 1)), np.ones((3, 600)))
    pd = build_predictive_density(comp, stream(7))
    # reuse unit 0's samples for all units so the units are exactly identical
    for arr in (pd.samples, pd.density, pd.weights):
        arr[1:] = arr[0]
    avg = hpd_average(pd, 0.10)
    pw = hpd_pointwise(pd, 0.10, 0)
    for s in avg:
        assert np.allclose(s.segments, pw.segments, atol=np.ptp(pd.samples[0]) / 100)


def test_average_shorter_than_pointwise_with_heterogeneous_scales():
    M = 3000
    mu = np.full((2, M), 10.0)
    var = np.array([[0.25], [4.0]]) * np.ones((2, M))
    pd = build_predictive_density(PredictiveDrawComponents(mu, var), stream(8))
    avg = hpd_average(pd, 0.10)
    pw = hpd_pointwise_all(pd, 0.10)
    assert sum(s.length for s in avg) < sum(s.length for s in pw)
    mean_mass = np.mean([_analytic_mass(pd, i, s) for i, s in enumerate(avg)])
    assert abs(mean_mass - 0.90) < 2 / np.sqrt(2 * M)


def test_average_zero_branch_includes_boundary_unit():
    pd = _pd([[-5.0] * 10, [-5.0] * 10, [0.0] * 10], 1.0)
    sets = hpd_average(pd, 0.20)
    kinds = [s.kind() for s in sets]
    assert kinds.count("zero_only") == 3 or (kinds.count("empty") >= 1
                                             and np.mean([s.mass for s in sets]) >= 0.8)


def test_pointwise_monotone_in_alpha():
    pd = _pd(np.random.default_rng(9).normal([[1.0] * 300 + [6.0] * 300], 1.0), 1.0)
    small = hpd_pointwise(pd, 0.20)
    big = hpd_pointwise(pd, 0.05)
    for a, b in small.segments:
        assert any(c <= a and b <= d for c, d in big.segments)


def test_set_semantics():
    s = SetForecast(False, [(0.5, 1.0)], 0.1, "pointwise")
    assert not s.contains(0.0) and s.contains(0.7) and not s.contains(1.1)
    e = SetForecast(False, [], 0.1, "average", is_empty=True)
    assert e.length == 0 and not e.contains(0.0) and e.kind() == "empty"
    assert SetForecast(True, [(0.0, 2.0)], 0.1, "pointwise").kind() == "zero_to_b"


@pytest.fixture(scope="module")
def ar_panel():
    return simulate_dgp(DgpSpec(N=1000, seed=21), 0)[0]


@pytest.mark.xfail(strict=True, reason="incidental-parameter bias at T=10: the lag-2 error is "
                   "MA(1) and the intercepts are estimated, giving rho_direct near 0.58")
def test_direct_two_step_estimates_squared_rho(ar_panel):
    spec = named_spec("normal_hetero", y0_known=(0.0, 1.0))
    pri = default_priors(spec, PriorTuning(v_star=per_unit_variance_mean(ar_panel.y)))
    d = direct_multistep_estimate(ar_panel, spec, pri,
                                  SamplerSettings(n_draws=150, burn_in=150, seed=3), h=2)
    assert abs(d["rho"].mean() - 0.64) < 0.05


def test_direct_two_step_consistent_as_T_grows():
    # known-intercept OLS on the latent panel gives 0.64; the gap closes with T
    data = simulate_dgp(DgpSpec(N=300, T=40, seed=21), 0)[0]
    spec = named_spec("normal_hetero", y0_known=(0.0, 1.0))
    pri = default_priors(spec, PriorTuning(v_star=per_unit_variance_mean(data.y)))
    d = direct_multistep_estimate(data, spec, pri,
                                  SamplerSettings(n_draws=200, burn_in=300, seed=3), h=2)
    assert abs(d["rho"].mean() - 0.64) < 0.02
    c = predictive_components(d, data, h=2)
    assert c.mu.shape == (300, 200)
    with pytest.raises(ForecastError):
        predictive_components(d, data, h=1)


def test_direct_two_step_white_noise():
    data = simulate_dgp(DgpSpec(N=400, rho=0.0, seed=22), 0)[0]
    spec = named_spec("normal_hetero", y0_known=(0.0, 1.0))
    pri = default_priors(spec, PriorTuning(v_star=per_unit_variance_mean(data.y)))
    d = direct_multistep_estimate(data, spec, pri,
                                  SamplerSettings(n_draws=100, burn_in=100, seed=3), h=2)
    assert abs(d["rho"].mean()) < 0.05
