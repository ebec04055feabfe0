import numpy as np
import pytest

from paneltobit.priors import (
    MC_SPECS, ModelSpec, PriorTuning, SpecError, count_modes, default_priors, draw_prior_xi,
    ig_moments, lognormal_nig_moments, mixture_moments, named_spec, prior_summary, probe_point,
)
from paneltobit.rng import stream


def tuning(**kw):
    kw.setdefault("v_star", 1.0)
    return PriorTuning(**kw)


def test_montecarlo_defaults():
    b = default_priors(named_spec("normal_hetero"), tuning())
    n = b.lam_nig
    assert (n.m, n.v, n.a, n.b) == (0.0, 5.0, 3.0, 2.0)
    assert np.allclose(b.theta_var, [5.0])


def test_homo_hetero_moments_agree():
    for tv, vs in ((1.0, 1.0), (0.5, 3.2)):
        t = tuning(tau_v=tv, v_star=vs)
        hetero = default_priors(named_spec("flexible_hetero"), t)
        homo = default_priors(named_spec("flexible_homo"), t)
        m1, v1 = lognormal_nig_moments(hetero.sig_nig)
        m2, v2 = ig_moments(*homo.sigma2_ig)
        assert abs(m1 - m2) < 1e-10 and abs(v1 - v2) < 1e-10


def test_ig_3_2_moments():
    assert ig_moments(3.0, 2.0) == (1.0, 1.0)


def test_spec_validation():
    with pytest.raises(SpecError):
        ModelSpec("pooled", "cre")
    with pytest.raises(SpecError):
        ModelSpec(K=0)
    with pytest.raises(SpecError):
        ModelSpec(cre="cre", y0_known=(0.0, 1.0))
    with pytest.raises(SpecError):
        default_priors(ModelSpec(), PriorTuning())


def test_spec_dict_round_trip():
    for name in MC_SPECS:
        s = named_spec(name, y0_known=(0.0, 1.0))
        assert ModelSpec.from_dict(s.to_dict()) == s


def test_all_specs_round_trip_through_prior_draws():
    for name in list(MC_SPECS) + ["flexible_hetero_cre", "normal_homo_cre"]:
        spec = named_spec(name, n_x=2, K=5) if name.endswith("_cre") else named_spec(name, K=5)
        b = default_priors(spec, tuning())
        xi = draw_prior_xi(b, spec, stream(1))
        xi.check()


def test_single_component_collapse():
    spec = named_spec("normal_hetero")
    xi = draw_prior_xi(default_priors(spec, tuning()), spec, stream(2))
    assert np.array_equal(xi.lam_pi, [1.0])


def test_prior_lambda_variance_and_alpha():
    spec = named_spec("flexible_hetero", K=2)
    b = default_priors(spec, tuning())
    draws = [draw_prior_xi(b, spec, stream(3, k)) for k in range(10000)]
    lam_var = np.array([d.lam_cov[0] for d in draws])
    assert abs(lam_var.mean() - 1.0) < 0.03 * 1.0 + 3 * lam_var.std() / 100
    alpha = np.array([d.alpha_lam for d in draws])
    assert abs(alpha.mean() - 1.0) < 0.03
    lo, hi = np.quantile(alpha, [0.025, 0.975])
    assert abs(lo - 0.12) < 0.02 and abs(hi - 2.75) < 0.1


def test_cre_iw_mean():
    spec = named_spec("normal_hetero_cre", n_x=1)
    b = default_priors(spec, tuning(tau_sigma_lambda=2.0, tau_sigma_y=0.5))
    S = np.array([draw_prior_xi(b, spec, stream(4, k)).lam_cov[0] for k in range(10000)])
    assert np.allclose(S.mean(axis=0), np.diag([2.0, 0.5]), atol=0.1)


def test_mode_counting():
    assert count_modes([1.0], [0.0], [1.0]) == 1
    assert count_modes([0.5, 0.5], [-3.0, 3.0], [0.1, 0.1]) == 2
    mu, sd, skew, kurt = mixture_moments([1.0], [0.3], [2.0])
    assert abs(skew) < 1e-12 and abs(kurt) < 1e-12


def test_table1_lambda_mixture_mean():
    mu, *_ = mixture_moments([1 / 9, 8 / 9], [2.5, 0.25], [0.5, 0.5])
    assert mu == pytest.approx(0.5)


def test_prior_summary_rows():
    spec = named_spec("flexible_hetero_cre", n_x=2, K=4)
    b = default_priors(spec, tuning())
    xis = [draw_prior_xi(b, spec, stream(5, k)) for k in range(5)]
    rows = prior_summary(xis, probe_point(2, 0.5))
    assert len(rows) == 5
    assert {"lambda_mean", "y0_sd", "lambda_modes", "corr_lambda_y0"} <= set(rows[0])


def test_probe_point_radius():
    p = probe_point(2, 0.5)
    assert np.linalg.norm(p) == pytest.approx(np.sqrt(-2 * np.log(0.5)))


def test_presets():
    a = PriorTuning.preset("adjusted")
    assert (a.tau_phi, a.tau_sigma_y) == (20.0, 4.0)
    with pytest.raises(SpecError):
        PriorTuning.preset("nope")
