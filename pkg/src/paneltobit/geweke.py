"""Joint-distribution test of the Gibbs sampler.

The marginal-conditional simulator draws (parameters, data) from prior and
likelihood directly.  The successive-conditional simulator alternates one
Gibbs sweep with a fresh draw of the data given the current parameters.
Both target the same joint distribution, so moments of any function of the
parameters must agree up to Monte Carlo error.
"""

from dataclasses import dataclass

import numpy as np

from .gibbs import ChainState, GibbsContext, SamplerSettings, sweep
from .panel import PanelData
from .priors import draw_prior_xi
from .rng import stream


def _draw_units(xi, spec, N, rng):
    """Memberships, lambda, y0* and sigma2 from the mixture hyperparameters."""
    gl = rng.choice(xi.lam_pi.size, size=N, p=xi.lam_pi / xi.lam_pi.sum())
    lam = xi.lam_loc[gl] + np.sqrt(xi.lam_cov[gl]) * rng.standard_normal(N)
    y0 = xi.y0_loc + np.sqrt(xi.y0_var) * rng.standard_normal(N)
    gs = rng.choice(xi.sig_pi.size, size=N, p=xi.sig_pi / xi.sig_pi.sum())
    sig2 = np.exp(xi.sig_loc[gs] + np.sqrt(xi.sig_var[gs]) * rng.standard_normal(N))
    return gl, gs, lam, y0, sig2


def _latent_path(y0, lam, sig2, rho, T, rng):
    ys = np.empty((y0.size, T + 1))
    ys[:, 0] = y0
    z = rng.standard_normal((y0.size, T))
    for t in range(1, T + 1):
        ys[:, t] = lam + rho * ys[:, t - 1] + np.sqrt(sig2) * z[:, t - 1]
    return ys


def _data(ys):
    return PanelData(np.maximum(ys, 0.0))


def statistics(state):
    """Test functions: rho, lambda_1, ln sigma_1^2, pi_{lambda,1} and a few
    indicators (first moments only; E[sigma2] itself is infinite)."""
    s1 = np.log(state.sig2[0])
    return np.array([
        state.rho, state.rho ** 2, state.lam[0], state.lam[0] ** 2, s1,
        float(state.lam[0] > 0), float(s1 > 0), state.xi.lam_pi[0],
    ])


STAT_NAMES = ("rho", "rho^2", "lambda_1", "lambda_1^2", "ln sigma2_1",
              "1{lambda_1>0}", "1{ln sigma2_1>0}", "pi_lambda_1")


def prior_state(priors, spec, N, T, rng):
    """One draw of every unknown from the prior, plus data."""
    xi = draw_prior_xi(priors, spec, rng)
    gl, gs, lam, y0, sig2 = _draw_units(xi, spec, N, rng)
    rho = float(np.sqrt(priors.theta_var[0]) * rng.standard_normal())
    ys = _latent_path(y0, lam, sig2, rho, T, rng)
    st = ChainState(ys, lam, sig2, rho, np.zeros(0), xi, gl, gs, np.zeros(N))
    return st


def marginal_conditional(priors, spec, N, T, n, seed=0):
    rng = stream(seed, 0x6E1)
    return np.array([statistics(prior_state(priors, spec, N, T, rng)) for _ in range(n)])


def successive_conditional(priors, spec, N, T, n, seed=0, log_step=None):
    """Gibbs sweeps alternating with data regeneration; the RWMH kernel is
    frozen at ``log_step`` (no adaptation)."""
    settings = SamplerSettings(n_draws=1, burn_in=0, seed=seed)
    rng = stream(seed, 0x6E2)
    state = prior_state(priors, spec, N, T, rng)
    state.log_step[:] = np.log(2.38 * np.sqrt(2.0 / T)) if log_step is None else log_step
    out = np.empty((n, len(STAT_NAMES)))
    for s in range(n):
        ctx = GibbsContext(_data(state.y_star), spec, priors, settings)
        sweep(state, ctx, s)
        out[s] = statistics(state)
        state.y_star = _latent_path(state.y_star[:, 0], state.lam, state.sig2, state.rho, T,
                                    stream(seed, 0x6E3, s))
    return out


def batch_means_se(x, n_batches=50):
    x = np.asarray(x, float)
    b = x.size // n_batches
    m = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(m.std(ddof=1) / np.sqrt(n_batches))


@dataclass
class GewekeResult:
    names: tuple
    mc_mean: np.ndarray
    mc_se: np.ndarray
    sc_mean: np.ndarray
    sc_se: np.ndarray

    @property
    def z(self):
        return (self.sc_mean - self.mc_mean) / np.sqrt(self.mc_se ** 2 + self.sc_se ** 2)


def geweke_test(priors, spec, N=20, T=4, n_mc=20000, n_sc=50000, burn=1000, seed=0):
    mc = marginal_conditional(priors, spec, N, T, n_mc, seed)
    sc = successive_conditional(priors, spec, N, T, n_sc + burn, seed)[burn:]
    return GewekeResult(STAT_NAMES, mc.mean(axis=0), mc.std(axis=0, ddof=1) / np.sqrt(n_mc),
                        sc.mean(axis=0), np.array([batch_means_se(c) for c in sc.T]))
