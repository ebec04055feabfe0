import numpy as np
import pytest

from paneltobit.diagnostics import (
    PPC_STATS, DiagnosticsError, autocorrelation, chain_diagnostics, effective_sample_size,
    posterior_predictive_check, ppc_simulate, robust_autocorr, treatment_effect_decomposition,
    treatment_effect_draws, write_chain_diagnostics, write_ppc_csv,
)
from paneltobit.gibbs import PosteriorDraws, SamplerSettings, estimate
from paneltobit.montecarlo import DgpSpec, simulate_dgp
from paneltobit.panel import PanelData
from paneltobit.priors import PriorTuning, named_spec
from paneltobit.rng import stream


def _ar1(phi, n, seed):
    r = np.random.default_rng(seed)
    e = r.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - phi ** 2)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + e[t]
    return x


def test_acf_of_iid_chain():
    M = 5000
    acf = autocorrelation(np.random.default_rng(0).standard_normal(M), 10)
    assert acf[0] == 1.0 and abs(acf[1]) < 2 / np.sqrt(M)


def test_ess_of_ar1_chain():
    M = 20000
    ess = np.mean([effective_sample_size(_ar1(0.9, M, s)) for s in range(5)])
    assert abs(ess / (M * 0.1 / 1.9) - 1.0) < 0.2


def test_ess_of_iid_chain_near_n():
    M = 4000
    assert abs(effective_sample_size(np.random.default_rng(1).standard_normal(M)) / M - 1) < 0.2


def test_robust_autocorr_shift_invariant_and_sensible():
    x = _ar1(0.7, 200, 2) + 10.0
    a = robust_autocorr(x)
    assert robust_autocorr(x + 3.25) == pytest.approx(a, abs=1e-12)
    assert 0.3 < a <= 1.0
    assert np.isnan(robust_autocorr(np.array([0, 0, 0, 1.0, 0, 2.0])))


def _treatment_fixture(beta, lam, M=200, N=4):
    y = np.ones((N, 3))
    x = np.zeros((N, 4, 2))
    data = PanelData(y, x)
    arrays = {"rho": np.full(M, 0.5), "beta": np.tile(beta, (M, 1)),
              "lam": np.tile(lam, (M, 1)), "sig2": np.ones((M, N)),
              "ystar_T": np.zeros((M, N))}
    draws = PosteriorDraws(arrays, named_spec("normal_hetero", n_x=2), PriorTuning(),
                           SamplerSettings(), [str(i) for i in range(N)], T=2)
    return draws, data


def test_treatment_terms_sum_to_total():
    draws, data = _treatment_fixture([0.8, -0.3], [-1.0, 0.0, 0.5, 2.0])
    iota = np.array([0.6, 0.8])
    t1, t2, tot = treatment_effect_draws(draws, data, iota, 1.5, stream(0))
    assert np.max(np.abs(t1 + t2 - tot)) < 1e-10
    assert (t2 != 0).any()


def test_treatment_zero_beta_and_extremes():
    draws, data = _treatment_fixture([0.0, 0.0], [0.0] * 4)
    t1, t2, _ = treatment_effect_draws(draws, data, [1.0, 0.0], 1.0, stream(1))
    assert np.all(t1 == 0) and np.all(t2 == 0)
    draws, data = _treatment_fixture([0.4, 0.2], [1e6, 1e6, -1e6, -1e6])
    dec = treatment_effect_decomposition(draws, data, [1.0, 0.0], 0.5, stream(2))
    assert np.allclose(dec["I"]["mean"], [0.4, 0.4, 0.0, 0.0])
    assert np.allclose(dec["II"]["mean"], 0.0)


def test_treatment_input_checks():
    draws, data = _treatment_fixture([0.1, 0.1], [0.0] * 4)
    with pytest.raises(DiagnosticsError):
        treatment_effect_draws(draws, data, [1.0, 0.0], 0.0)
    with pytest.raises(DiagnosticsError):
        treatment_effect_draws(draws, data, [1.0, 1.0], 1.0)
    with pytest.raises(DiagnosticsError):
        treatment_effect_draws(draws, PanelData(np.ones((4, 3))), [1.0], 1.0)


@pytest.fixture(scope="module")
def fitted():
    data, _ = simulate_dgp(DgpSpec(N=300, seed=41), 0)
    spec = named_spec("flexible_hetero_cre")
    d = estimate(data, spec, PriorTuning(), SamplerSettings(n_draws=100, burn_in=150, seed=5))
    return d, data


def test_ppc_shapes_and_empty(fitted):
    d, data = fitted
    assert ppc_simulate(d, data, 0) == []
    reps = ppc_simulate(d, data, 7, seed=1)
    assert len(reps) == 7
    for r in reps:
        assert r.y.shape == (data.n_units, data.n_periods_T + 2)
        assert np.all(r.y >= 0)
    stats = posterior_predictive_check(d, data, n_hairlines=7, seed=1)
    assert [s.name for s in stats] == list(PPC_STATS)
    for s in stats:
        assert s.replicated.shape == (7, len(s.labels)) and len(s.observed) == len(s.labels)
    again = posterior_predictive_check(d, data, n_hairlines=7, seed=1)
    assert all(np.array_equal(a.replicated, b.replicated, equal_nan=True)
               for a, b in zip(stats, again))
    with pytest.raises(DiagnosticsError):
        posterior_predictive_check(d, data, stats=("nope",))


def test_ppc_zero_fraction_calibration():
    hits = 0
    trials = 10
    for k in range(trials):
        data, _ = simulate_dgp(DgpSpec(N=200, seed=100 + k), 0)
        d = estimate(data, named_spec("flexible_hetero", y0_known=(0.0, 1.0)),
                     PriorTuning.preset("montecarlo"),
                     SamplerSettings(n_draws=100, burn_in=150, seed=k))
        s, = posterior_predictive_check(d, data, n_hairlines=100, seed=k,
                                        stats=("density_positive_yT1",))
        lo, _, hi = s.band()
        hits += lo[0] <= s.observed[0] <= hi[0]
    assert hits >= 0.8 * trials


def test_chain_report_files(fitted, tmp_path):
    d, data = fitted
    rep = chain_diagnostics(d, max_lag=20)
    names = [r["parameter"] for r in rep["summary"]]
    assert names[0] == "rho" and "lam_1" in names
    assert 0.1 < rep["acceptance"]["sigma2_rwmh_sampling"] < 0.6
    write_chain_diagnostics(tmp_path, rep)
    for f in ("chain_summary.csv", "chain_acf.csv", "chain_trace.csv", "acceptance.csv"):
        assert (tmp_path / f).stat().st_size > 0
    write_ppc_csv(tmp_path / "ppc.csv", posterior_predictive_check(d, data, 5))
    assert (tmp_path / "ppc.csv").read_text().startswith("statistic,label,observed")
