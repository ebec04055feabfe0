import numpy as np
import pytest

from paneltobit.gibbs import (
    GibbsContext, SamplerError, SamplerSettings, find_segments, fod_gmm, initialize, kmeans,
    run_chain, segment_conditional_moments, step1_draw_latents, step3_draw_sigma2, sweep,
    estimate,
)
from paneltobit.forecast import direct_multistep_estimate
from paneltobit.montecarlo import DgpSpec, simulate_dgp
from paneltobit.panel import CommonParams, PanelData
from paneltobit.priors import PriorTuning, default_priors, named_spec
from paneltobit.rng import stream


def _joint_cov(lam, s2, rho, m0, v0, T):
    """Mean and covariance of y*_{0..T} built from the moving-average form."""
    mean = np.empty(T + 1)
    mean[0] = m0
    for t in range(1, T + 1):
        mean[t] = lam + rho * mean[t - 1]
    cov = np.empty((T + 1, T + 1))
    for s in range(T + 1):
        for t in range(T + 1):
            k = min(s, t)
            acc = rho ** (s + t) * v0
            acc += sum(rho ** (s - j) * rho ** (t - j) * s2 for j in range(1, k + 1))
            cov[s, t] = acc
    return mean, cov


def _condition(mean, cov, free, fixed, values):
    S12 = cov[np.ix_(free, fixed)]
    S22 = cov[np.ix_(fixed, fixed)]
    m = mean[free] + S12 @ np.linalg.solve(S22, values - mean[fixed])
    C = cov[np.ix_(free, free)] - S12 @ np.linalg.solve(S22, S12.T)
    return m, C


@pytest.mark.parametrize("row", [
    [1.0, 0.0, 0.0, 0.5, 2.0],     # interior run with both anchors
    [0.0, 0.0, 1.5, 0.2, 0.0],     # run at t=0 and a run at the end
])
def test_segment_moments_match_dense_conditioning(row):
    lam, s2, rho, m0, v0 = 0.3, 0.8, 0.7, 0.1, 1.4
    y = np.array(row)
    T = y.size - 1
    mean, cov = _joint_cov(lam, s2, rho, m0, v0, T)
    for seg in find_segments(y):
        run = list(range(seg.t1, seg.t2 + 1))
        # the run depends only on its Markov blanket: the anchors
        fixed = [t for t in (seg.t1 - 1, seg.t2 + 1) if 0 <= t <= T]
        m, C = _condition(mean, cov, run, fixed, y[fixed])
        spec = segment_conditional_moments(seg, lam, s2, CommonParams(rho),
                                           init_conditional=(m0, v0))
        assert np.allclose(spec.mean, m) and np.allclose(spec.cov, C)


def test_find_segments():
    segs = find_segments([0, 0, 1, 0, 2, 0])
    assert [(s.t1, s.t2, s.left_anchor, s.right_anchor) for s in segs] == [
        (0, 1, None, 1.0), (3, 3, 1.0, 2.0), (5, 5, 2.0, None)]


def _one_unit_ctx(y, spec_name="normal_hetero", method="checkerboard"):
    data = PanelData(np.atleast_2d(y))
    spec = named_spec(spec_name, y0_known=(0.0, 1.0))
    pri = default_priors(spec, PriorTuning(v_star=1.0))
    st = SamplerSettings(n_draws=1, burn_in=0, latent_method=method, latent_scans=2)
    ctx = GibbsContext(data, spec, pri, st)
    state = initialize(ctx, stream(0, 1))
    return ctx, state


@pytest.mark.parametrize("method", ["checkerboard", "segment"])
def test_latent_step_targets_truncated_conditional(method):
    y = np.array([1.0, 0.0, 0.0, 0.0, 0.8, 0.0, 0.0])
    ctx, state = _one_unit_ctx(y, method=method)
    state.lam[:] = 0.2
    state.sig2[:] = 0.9
    state.rho = 0.6
    n = 6000
    draws = np.empty((n, 5))
    for s in range(n):
        step1_draw_latents(state, ctx, stream(1, s))
        draws[s] = state.y_star[0, [1, 2, 3, 5, 6]]
    # oracle: rejection from the Gaussian conditional on the positive cells
    mean, cov = _joint_cov(0.2, 0.9, 0.6, 0.0, 1.0, y.size - 1)
    m, C = _condition(mean, cov, [1, 2, 3, 5, 6], [0, 4], y[[0, 4]])
    z = stream(2).multivariate_normal(m, C, size=400000)
    ref = z[np.all(z <= 0, axis=1)]
    half = n // 2
    # batch means for the chain standard error
    b = draws.reshape(30, -1, 5).mean(axis=1)
    se = np.sqrt(b.var(axis=0, ddof=1) / 30 + ref.var(axis=0) / len(ref))
    assert np.all(draws <= 0)
    assert np.all(np.abs(draws.mean(axis=0) - ref.mean(axis=0)) < 4 * se)


def test_rwmh_adapts_to_target():
    data, _ = simulate_dgp(DgpSpec(N=200, seed=3), 0)
    spec = named_spec("flexible_hetero", y0_known=(0.0, 1.0))
    pri = default_priors(spec, PriorTuning(v_star=1.0))
    ctx = GibbsContext(data, spec, pri, SamplerSettings(n_draws=1, burn_in=0))
    state = initialize(ctx, stream(0, 2))
    acc = []
    for s in range(600):
        a = step3_draw_sigma2(state, ctx, stream(5, s), adapt_iter=s + 1)
        acc.append(a.mean())
    assert abs(np.mean(acc[-200:]) - 0.30) < 0.05
    frozen = state.log_step.copy()
    step3_draw_sigma2(state, ctx, stream(6), adapt_iter=None)
    assert np.array_equal(frozen, state.log_step)


def test_fod_gmm_recovers_rho_uncensored():
    r = np.random.default_rng(1)
    N, T = 2000, 6
    lam = r.standard_normal(N)
    y = np.empty((N, T + 1))
    y[:, 0] = lam / 0.4 + r.standard_normal(N)
    for t in range(1, T + 1):
        y[:, t] = lam + 0.6 * y[:, t - 1] + r.standard_normal(N)
    theta, resid = fod_gmm(y, np.zeros((N, T + 2, 0)))
    assert abs(theta[0] - 0.6) < 0.05


def test_kmeans_separates_clusters():
    r = np.random.default_rng(2)
    X = np.vstack([r.normal(-5, 0.1, (50, 2)), r.normal(5, 0.1, (50, 2))])
    lab = kmeans(X, 2, stream(3))
    assert len(set(lab[:50])) == 1 and len(set(lab[50:])) == 1 and lab[0] != lab[-1]


@pytest.fixture(scope="module")
def panel():
    return simulate_dgp(DgpSpec(N=300, seed=11), 0)[0]


def test_chain_recovers_rho(panel):
    spec = named_spec("flexible_hetero", y0_known=(0.0, 1.0))
    d = estimate(panel, spec, PriorTuning(), SamplerSettings(n_draws=400, burn_in=300, seed=1))
    assert abs(d["rho"].mean() - 0.8) < 0.03
    assert d["lam"].shape == (400, 300)
    assert np.all(d["sig2"] > 0)


def test_chain_deterministic_and_parallel_invariant(panel):
    spec = named_spec("flexible_hetero_cre")
    tun = PriorTuning()
    base = SamplerSettings(n_draws=30, burn_in=20, seed=9)
    a = estimate(panel, spec, tun, base)
    b = estimate(panel, spec, tun, base)
    c = estimate(panel, spec, tun, SamplerSettings(n_draws=30, burn_in=20, seed=9,
                                                   parallel_units=True, n_workers=3))
    for k in a.arrays:
        assert np.array_equal(a[k], b[k]) and np.array_equal(a[k], c[k]), k


@pytest.mark.parametrize("name", ["normal_homo", "pooled_tobit", "pooled_linear",
                                  "normal_hetero_cre", "flexible_homo_cre"])
def test_all_specs_run(panel, name):
    spec = named_spec(name)
    d = estimate(panel, spec, PriorTuning(), SamplerSettings(n_draws=20, burn_in=10, seed=2))
    assert np.all(np.isfinite(d["rho"]))
    if spec.pooled:
        assert np.allclose(d["lam"], d["lam"][:, :1])
    if not spec.hetero:
        assert np.allclose(d["sig2"], d["sig2"][:, :1])


def test_direct_h1_matches_standard(panel):
    spec = named_spec("normal_hetero", y0_known=(0.0, 1.0))
    tun = PriorTuning(v_star=float(np.mean(np.var(panel.y, axis=1, ddof=1))))
    pri = default_priors(spec, tun)
    st = SamplerSettings(n_draws=20, burn_in=10, seed=4)
    a = run_chain(panel, spec, pri, st)
    b = direct_multistep_estimate(panel, spec, pri, st, h=1)
    for k in a.arrays:
        assert np.array_equal(a[k], b[k])


def test_sampler_errors_name_the_step(panel):
    spec = named_spec("normal_hetero")
    pri = default_priors(spec, PriorTuning(v_star=1.0))
    ctx = GibbsContext(panel, spec, pri, SamplerSettings(n_draws=1, burn_in=0))
    state = initialize(ctx, stream(0))
    state.sig2[:] = np.nan
    state.xi.sig_var[:] = -1.0
    with pytest.raises(SamplerError, match="sweep 7, step"):
        sweep(state, ctx, 7)


def test_settings_validation():
    with pytest.raises(SamplerError):
        SamplerSettings(n_draws=0)
    with pytest.raises(SamplerError):
        SamplerSettings(latent_method="exact")
