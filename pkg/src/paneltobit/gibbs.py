"""Gibbs sampler with data augmentation for the dynamic panel Tobit model.

One sweep runs six blocks:

1. latent values at censored cells,
2. unit intercepts lambda_i,
3. innovation variances (adaptive RWMH on ln sigma_i^2, or a pooled IG draw),
4. common coefficients theta = (rho, beta),
5. mixture memberships,
6. mixture hyperparameters xi (component parameters, weights, alpha).

Randomness for sweep s and block b comes from the counter-based stream
(seed, s, b).  Unit-level blocks draw all their uniforms in one call and
index them by unit, so splitting units across threads cannot change the
result.

Throughout, ``lag`` is 1 except for direct multi-step fits, where the
period-t mean uses y*_{t-lag} and x_{t-lag}.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import ndtri

from . import distributions as dist
from .distributions import (
    MNIWParams, TruncatedMvnSpec, categorical_from_logits, draw_inverse_gamma,
    draw_mniw, draw_tsb, mniw_posterior, nig_posterior, norm_logpdf,
    truncnorm_neg_icdf,
)
from .panel import CommonParams, LatentPanel, UnitParams, per_unit_variance_mean
from .priors import MixtureHyperparams
from .rng import open_uniform, stream

log = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-12

# stream ids for the blocks of a sweep
_S1, _S2, _S3, _S4, _S5, _S6 = 1, 2, 3, 4, 5, 6
_INIT = 0xB1


class SamplerError(RuntimeError):
    pass


@dataclass
class SamplerSettings:
    n_draws: int = 10000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    rwmh_target_accept: float = 0.30
    parallel_units: bool = False
    n_workers: int = 4
    latent_scans: int = 10
    latent_method: str = "checkerboard"   # checkerboard | segment

    def __post_init__(self):
        if self.n_draws <= 0 or self.burn_in < 0 or self.thin < 1:
            raise SamplerError("need n_draws > 0, burn_in >= 0, thin >= 1")
        if self.latent_method not in ("checkerboard", "segment"):
            raise SamplerError(f"unknown latent_method {self.latent_method!r}")

    def to_dict(self):
        return asdict(self)


@dataclass
class ChainState:
    y_star: np.ndarray
    lam: np.ndarray
    sig2: np.ndarray
    rho: float
    beta: np.ndarray
    xi: MixtureHyperparams
    gam_lam: np.ndarray
    gam_sig: np.ndarray
    log_step: np.ndarray

    @property
    def latent(self):
        return LatentPanel(self.y_star)

    @property
    def unit(self):
        return UnitParams(self.lam, self.sig2)

    @property
    def common(self):
        return CommonParams(self.rho, self.beta)

    def copy(self):
        return ChainState(self.y_star.copy(), self.lam.copy(), self.sig2.copy(),
                          float(self.rho), self.beta.copy(), self.xi.copy(),
                          self.gam_lam.copy(), self.gam_sig.copy(), self.log_step.copy())

    def check(self, data, spec):
        if spec.censoring == "tobit":
            LatentPanel(self.y_star).check(data)
        if np.any(self.sig2 <= 0) or not np.all(np.isfinite(self.lam)):
            raise SamplerError("invalid unit parameters")
        for g, K in ((self.gam_lam, spec.K_lambda), (self.gam_sig, spec.K_sigma)):
            if np.any((g < 0) | (g >= K)):
                raise SamplerError("membership label out of range")
        self.xi.check()


# ---------------------------------------------------------------------------
# censored segments (reference path)


@dataclass
class CensoredSegment:
    unit: int
    t1: int
    t2: int
    left_anchor: float = None    # observed y*_{t1-1}; None when t1 == 0
    right_anchor: float = None   # observed y_{t2+1}; None when t2 == T


def find_segments(y_row, unit=0):
    """Maximal runs of zeros in one unit's path t = 0..T, with anchors."""
    y_row = np.asarray(y_row, dtype=float)
    T = y_row.size - 1
    segs = []
    t = 0
    while t <= T:
        if y_row[t] == 0:
            t1 = t
            while t + 1 <= T and y_row[t + 1] == 0:
                t += 1
            left = None if t1 == 0 else float(y_row[t1 - 1])
            right = None if t == T else float(y_row[t + 1])
            segs.append(CensoredSegment(unit, t1, t, left, right))
        t += 1
    return segs


def segment_conditional_moments(seg, lambda_i, sigma2_i, common, x_rows=None,
                                init_conditional=None):
    """Mean and covariance of a zero-run's latent values given its anchors.

    ``x_rows`` is the unit's regressor block of shape (T+2, n_x) in the
    panel layout.  Runs starting at t = 0 need ``init_conditional`` =
    (mu_star, sigma_star2), the distribution of y*_0 given lambda_i.
    The right anchor enters through standard Normal conditioning.
    """
    rho, beta = common.rho, common.beta
    s_run = seg.t2 - seg.t1 + 1
    has_right = seg.right_anchor is not None
    n = s_run + int(has_right)
    times = np.arange(seg.t1, seg.t1 + n)
    if x_rows is None or beta.size == 0:
        xb = np.zeros(n)
    else:
        xb = x_rows[times] @ beta          # x dated t-1 for period t
    if seg.t1 == 0:
        if init_conditional is None:
            raise SamplerError("run starting at t=0 needs init_conditional")
        m0, v0 = init_conditional
        mean = np.empty(n)
        scale = np.empty(n)
        mean[0], scale[0] = m0, v0
        for k in range(1, n):
            mean[k] = lambda_i + rho * mean[k - 1] + xb[k]
            scale[k] = sigma2_i
    else:
        if seg.left_anchor is None:
            raise SamplerError("interior run lacks its left anchor")
        mean = np.empty(n)
        prev = seg.left_anchor
        for k in range(n):
            mean[k] = lambda_i + rho * prev + xb[k]
            prev = mean[k]
        scale = np.full(n, sigma2_i)
    # Y = mean + A e with e_k independent of variance scale_k
    idx = np.arange(n)
    A = np.tril(rho ** np.clip(idx[:, None] - idx[None, :], 0, None))
    cov = (A * scale) @ A.T
    if has_right:
        c12 = cov[:s_run, -1]
        c22 = cov[-1, -1]
        cmean = mean[:s_run] + c12 / c22 * (seg.right_anchor - mean[-1])
        ccov = cov[:s_run, :s_run] - np.outer(c12, c12) / c22
        return TruncatedMvnSpec(cmean, 0.5 * (ccov + ccov.T))
    return TruncatedMvnSpec(mean, cov)


# ---------------------------------------------------------------------------
# run context


class GibbsContext:
    """Data-dependent constants shared by all sweeps."""

    def __init__(self, data, spec, priors, settings):
        self.data = data
        self.spec = spec
        self.priors = priors
        self.settings = settings
        self.N = data.n_units
        self.T = data.n_periods_T
        self.L = spec.lag
        if self.T < self.L:
            raise SamplerError("not enough periods for the requested lag")
        self.n_obs = self.T - self.L + 1
        self.y = data.y
        self.x = data.x
        self.W = np.column_stack([np.ones(self.N), data.x[:, 0, :]])
        self.censored_cells = spec.censoring == "tobit"
        self.zero = (data.y == 0) if self.censored_cells else np.zeros_like(data.y, bool)
        nchunk = max(1, settings.n_workers) if settings.parallel_units else 1
        bounds = np.linspace(0, self.N, min(nchunk, self.N) + 1).astype(int)
        self.chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        self.pool = ThreadPoolExecutor(len(self.chunks)) if len(self.chunks) > 1 else None
        self._build_cells()

    def _build_cells(self):
        L, T = self.L, self.T
        self.cells = []
        for ch in self.chunks:
            per_color = []
            sub = self.zero[ch]
            for color in (0, 1):
                r, c = np.nonzero(sub)
                keep = (c // L) % 2 == color
                r = r[keep] + ch.start
                c = c[keep]
                per_color.append({
                    "r": r, "c": c,
                    "init": c < L,
                    "cprev": np.maximum(c - L, 0),
                    "xprev": np.maximum(c - L + 1, 0),
                    "has_next": c + L <= T,
                    "cnext": np.minimum(c + L, T),
                })
            self.cells.append(per_color)

    def map_chunks(self, fn):
        if self.pool is None:
            for i, ch in enumerate(self.chunks):
                fn(i, ch)
        else:
            list(self.pool.map(lambda a: fn(*a), enumerate(self.chunks)))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()
            self.pool = None

    # helpers -------------------------------------------------------------

    def xb(self, beta):
        """beta'x for every stored regressor date, shape (N, T+2)."""
        if beta.size == 0:
            return np.zeros(self.x.shape[:2])
        return self.x @ beta

    def residuals(self, state, xb=None, sl=slice(None)):
        """y*_t - rho y*_{t-L} - beta'x_{t-L} for t = L..T (lambda not removed)."""
        L, T = self.L, self.T
        xb = self.xb(state.beta) if xb is None else xb
        ys = state.y_star[sl]
        return ys[:, L:] - state.rho * ys[:, : T + 1 - L] - xb[sl, 1 : T + 2 - L]


# ---------------------------------------------------------------------------
# conditional pieces of the heterogeneity distribution


def lambda_prior(state, ctx, sl=slice(None)):
    """Prior mean/variance of lambda_i given its component (and y0* for CRE)."""
    xi = state.xi
    g = state.gam_lam[sl]
    if ctx.spec.is_cre:
        mu = np.einsum("np,npj->nj", ctx.W[sl], xi.lam_loc[g])
        S = xi.lam_cov[g]
        m = mu[:, 0] + S[:, 0, 1] / S[:, 1, 1] * (state.y_star[sl, 0] - mu[:, 1])
        v = S[:, 0, 0] - S[:, 0, 1] ** 2 / S[:, 1, 1]
        return m, v
    return xi.lam_loc[g], xi.lam_cov[g]


def initial_prior(state, ctx, sl=slice(None)):
    """Distribution of the initial latent value y*_0 given lambda_i."""
    xi = state.xi
    n = state.lam[sl].size
    if ctx.spec.is_cre:
        g = state.gam_lam[sl]
        mu = np.einsum("np,npj->nj", ctx.W[sl], xi.lam_loc[g])
        S = xi.lam_cov[g]
        m = mu[:, 1] + S[:, 0, 1] / S[:, 0, 0] * (state.lam[sl] - mu[:, 0])
        v = S[:, 1, 1] - S[:, 0, 1] ** 2 / S[:, 0, 0]
        return m, v
    return np.full(n, xi.y0_loc), np.full(n, xi.y0_var)


# ---------------------------------------------------------------------------
# steps


def step1_draw_latents(state, ctx, rng):
    """Redraw latent values at censored cells; positive cells are untouched."""
    if not ctx.censored_cells or not ctx.zero.any():
        return state.y_star
    if ctx.settings.latent_method == "segment":
        return _step1_segments(state, ctx, rng)
    S = ctx.settings.latent_scans
    U = open_uniform(rng, (ctx.N, S, ctx.T + 1))
    xb = ctx.xb(state.beta)
    m0, v0 = initial_prior(state, ctx)
    rho = state.rho
    ys = state.y_star
    flat = ys.reshape(-1)
    Tp = ctx.T + 1

    def work(i, ch):
        # the full conditional of a cell is N(A + Bp y*_prev + Bn y*_next, sd^2)
        # with A, Bp, Bn fixed within the sweep
        coef = []
        for cell in ctx.cells[i]:
            r, c = cell["r"], cell["c"]
            if r.size == 0:
                coef.append(None)
                continue
            lam = state.lam[r]
            s2 = state.sig2[r]
            init = cell["init"]
            nxt = cell["has_next"]
            v = np.where(init, v0[r], s2)
            mconst = np.where(init, m0[r], lam + xb[r, cell["xprev"]])
            prec = 1.0 / v + np.where(nxt, rho * rho / s2, 0.0)
            A = (mconst / v - np.where(nxt, rho * (lam + xb[r, c + 1]) / s2, 0.0)) / prec
            Bp = np.where(init, 0.0, rho / v) / prec
            Bn = np.where(nxt, rho / s2, 0.0) / prec
            sd = 1.0 / np.sqrt(prec)
            coef.append((r * Tp + c, r * Tp + cell["cprev"], r * Tp + cell["cnext"],
                         A, Bp, Bn, sd, r * (S * Tp) + c))
        for scan in range(S):
            for cf in coef:
                if cf is None:
                    continue
                fi, fp, fn, A, Bp, Bn, sd, fu = cf
                mean = A + Bp * flat[fp] + Bn * flat[fn]
                flat[fi] = truncnorm_neg_icdf(mean, sd, U.reshape(-1)[fu + scan * Tp])

    ctx.map_chunks(work)
    return ys


def _step1_segments(state, ctx, rng):
    """Reference path: one truncated-MVN draw per zero-run (lag 1 only)."""
    if ctx.L != 1:
        raise SamplerError("segment latent method supports lag 1 only")
    m0, v0 = initial_prior(state, ctx)
    common = state.common
    for i in np.nonzero(ctx.zero.any(axis=1))[0]:
        for seg in find_segments(ctx.y[i], i):
            spec = segment_conditional_moments(
                seg, state.lam[i], state.sig2[i], common, ctx.x[i], (m0[i], v0[i]))
            draw = dist.draw_truncated_mvn_neg(spec, rng)
            state.y_star[i, seg.t1 : seg.t2 + 1] = draw
    return state.y_star


def step2_draw_lambda(state, ctx, rng):
    if ctx.spec.pooled:
        return state.lam
    U = open_uniform(rng, ctx.N)
    xb = ctx.xb(state.beta)

    def work(i, sl):
        e = ctx.residuals(state, xb, sl)
        m, v = lambda_prior(state, ctx, sl)
        prec = 1.0 / v + ctx.n_obs / state.sig2[sl]
        mean = (m / v + e.sum(axis=1) / state.sig2[sl]) / prec
        state.lam[sl] = mean + ndtri(U[sl]) / np.sqrt(prec)

    ctx.map_chunks(work)
    return state.lam


def _log_target_s(s, rss, n, psi, omega2):
    return -0.5 * n * s - 0.5 * rss * np.exp(-s) - 0.5 * (s - psi) ** 2 / omega2


def step3_draw_sigma2(state, ctx, rng, adapt_iter=None):
    """Heteroskedastic: one RWMH move per unit.  Homoskedastic: exact IG draw.

    ``adapt_iter`` (1-based burn-in iteration) turns on step-size adaptation;
    None freezes the kernel.  Returns the per-unit acceptance indicators
    (heteroskedastic) or None.
    """
    pri = ctx.priors
    if pri.fixed_sigma2 is not None:
        state.sig2[:] = pri.fixed_sigma2
        return None
    xb = ctx.xb(state.beta)
    if not (ctx.spec.hetero and not ctx.spec.pooled):
        e = ctx.residuals(state, xb) - state.lam[:, None]
        a0, b0 = pri.sigma2_ig
        s2 = float(draw_inverse_gamma(a0 + 0.5 * e.size, b0 + 0.5 * np.sum(e * e), rng))
        state.sig2[:] = s2
        return None

    U = open_uniform(rng, (ctx.N, 2))
    acc = np.zeros(ctx.N)
    target = ctx.settings.rwmh_target_accept
    n = ctx.n_obs
    xi = state.xi

    def work(i, sl):
        e = ctx.residuals(state, xb, sl) - state.lam[sl, None]
        rss = np.sum(e * e, axis=1)
        g = state.gam_sig[sl]
        psi, om2 = xi.sig_loc[g], xi.sig_var[g]
        s_old = np.log(state.sig2[sl])
        s_new = s_old + np.exp(state.log_step[sl]) * ndtri(U[sl, 0])
        logr = _log_target_s(s_new, rss, n, psi, om2) - _log_target_s(s_old, rss, n, psi, om2)
        ok = (np.log(U[sl, 1]) < logr) & (np.exp(s_new) >= SIGMA2_FLOOR)
        state.sig2[sl] = np.where(ok, np.exp(s_new), state.sig2[sl])
        acc[sl] = ok
        if adapt_iter is not None:
            gamma = min(1.0, 2.0 * adapt_iter ** -0.6)
            a = np.minimum(np.exp(np.minimum(logr, 0.0)), 1.0)
            a = np.where(np.exp(s_new) >= SIGMA2_FLOOR, a, 0.0)
            state.log_step[sl] += gamma * (a - target)

    ctx.map_chunks(work)
    return acc


def step4_draw_theta(state, ctx, rng):
    """Weighted Bayesian regression for (rho, beta), plus the intercept when pooled."""
    L, T = ctx.L, ctx.T
    ys = state.y_star
    lagged = ys[:, : T + 1 - L]
    xs = ctx.x[:, 1 : T + 2 - L, :]
    cols = [lagged[..., None], xs]
    resp = ys[:, L:]
    if ctx.spec.pooled:
        cols.insert(0, np.ones(lagged.shape + (1,)))
    else:
        resp = resp - state.lam[:, None]
    Z = np.concatenate(cols, axis=2)                     # (N, n_obs, p)
    w = 1.0 / state.sig2
    ZtWZ = np.einsum("ntp,ntq,n->pq", Z, Z, w)
    ZtWy = np.einsum("ntp,nt,n->p", Z, resp, w)
    P = ZtWZ + np.diag(1.0 / ctx.priors.theta_var)
    try:
        C = np.linalg.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise SamplerError("posterior precision of theta is singular") from exc
    mean = np.linalg.solve(P, ZtWy)
    draw = mean + np.linalg.solve(C.T, rng.standard_normal(P.shape[0]))
    if ctx.spec.pooled:
        state.lam[:] = draw[0]
        draw = draw[1:]
    state.rho = float(draw[0])
    state.beta = draw[1:].copy()
    return state.common


def membership_logits(state, ctx, sl=slice(None)):
    """(lambda-block, sigma-block) log responsibilities up to a constant."""
    xi = state.xi
    out_l = out_s = None
    if not ctx.spec.pooled and ctx.spec.K_lambda > 1:
        with np.errstate(divide="ignore"):
            logpi = np.log(xi.lam_pi)
        if ctx.spec.is_cre:
            mu = np.einsum("np,kpj->nkj", ctx.W[sl], xi.lam_loc)
            z = np.column_stack([state.lam[sl], state.y_star[sl, 0]])
            out_l = logpi + _bvn_logpdf(z[:, None, :] - mu, xi.lam_cov)
        else:
            out_l = logpi + norm_logpdf(state.lam[sl, None], xi.lam_loc, xi.lam_cov)
    if ctx.spec.hetero and not ctx.spec.pooled and ctx.spec.K_sigma > 1:
        with np.errstate(divide="ignore"):
            logpi = np.log(xi.sig_pi)
        out_s = logpi + norm_logpdf(np.log(state.sig2[sl, None]), xi.sig_loc, xi.sig_var)
    return out_l, out_s


def _bvn_logpdf(d, S):
    """log N2(d; 0, S_k) with d of shape (n, K, 2) and S of shape (K, 2, 2)."""
    det = S[:, 0, 0] * S[:, 1, 1] - S[:, 0, 1] ** 2
    q = (S[:, 1, 1] * d[..., 0] ** 2 - 2 * S[:, 0, 1] * d[..., 0] * d[..., 1]
         + S[:, 0, 0] * d[..., 1] ** 2) / det
    return -np.log(2 * np.pi) - 0.5 * np.log(det) - 0.5 * q


def step5_draw_memberships(state, ctx, rng):
    U = open_uniform(rng, (ctx.N, 2))

    def work(i, sl):
        ll, ls = membership_logits(state, ctx, sl)
        if ll is not None:
            state.gam_lam[sl] = categorical_from_logits(ll, U[sl, 0])
        if ls is not None:
            state.gam_sig[sl] = categorical_from_logits(ls, U[sl, 1])

    ctx.map_chunks(work)
    return state.gam_lam, state.gam_sig


def _tsb_update(labels, K, alpha, shape, rate, rng):
    n = np.bincount(labels, minlength=K).astype(float)
    tail = np.concatenate([np.cumsum(n[::-1])[::-1][1:], [0.0]])
    pi, log_last = draw_tsb(1.0 + n, alpha + tail, K, rng, return_log_last=True)
    alpha = float(rng.gamma(shape + K - 1, 1.0 / (rate - log_last)))
    return pi, max(alpha, 1e-300)


def _nig_components(values, labels, K, prior, rng, fixed_var=None):
    n = np.bincount(labels, minlength=K).astype(float)
    sz = np.bincount(labels, weights=values, minlength=K)
    szz = np.bincount(labels, weights=values * values, minlength=K)
    mn, vn, an, bn = nig_posterior(prior, n, sz, szz)
    if fixed_var is not None:
        var = np.full(K, float(fixed_var))
    else:
        var = bn / rng.gamma(an, 1.0, size=K)
    loc = mn + np.sqrt(var * vn) * rng.standard_normal(K)
    return loc, var


def step6_draw_xi(state, ctx, rng):
    spec, pri = ctx.spec, ctx.priors
    xi = state.xi
    if not spec.pooled:
        K = spec.K_lambda
        if K > 1:
            xi.lam_pi, xi.alpha_lam = _tsb_update(
                state.gam_lam, K, xi.alpha_lam, pri.alpha_shape, pri.alpha_rate, rng)
        else:
            xi.lam_pi = np.ones(1)
        if spec.is_cre:
            Y = np.column_stack([state.lam, state.y_star[:, 0]])
            locs = np.empty((K,) + pri.lam_mniw.M.shape)
            covs = np.empty((K, 2, 2))
            for k in range(K):
                members = state.gam_lam == k
                post = pri.lam_mniw if not members.any() else mniw_posterior(
                    pri.lam_mniw, ctx.W[members], Y[members])
                locs[k], covs[k] = draw_mniw(post, rng)
            xi.lam_loc, xi.lam_cov = locs, covs
        else:
            xi.lam_loc, xi.lam_cov = _nig_components(
                state.lam, state.gam_lam, K, pri.lam_nig, rng, pri.fixed_lambda_var)
    if not spec.is_cre:
        if spec.y0_known is not None:
            xi.y0_loc, xi.y0_var = spec.y0_known
        else:
            init = state.y_star[:, : ctx.L].ravel()
            loc, var = _nig_components(init, np.zeros(init.size, int), 1, pri.y0_nig, rng)
            xi.y0_loc, xi.y0_var = float(loc[0]), float(var[0])
    if pri.sig_nig is not None and pri.fixed_sigma2 is None:
        K = spec.K_sigma
        if K > 1:
            xi.sig_pi, xi.alpha_sig = _tsb_update(
                state.gam_sig, K, xi.alpha_sig, pri.alpha_shape, pri.alpha_rate, rng)
        else:
            xi.sig_pi = np.ones(1)
        xi.sig_loc, xi.sig_var = _nig_components(
            np.log(state.sig2), state.gam_sig, K, pri.sig_nig, rng)
    return xi


def log_joint(state, ctx):
    """Complete-data log density up to a constant (diagnostic only)."""
    e = ctx.residuals(state) - state.lam[:, None]
    lp = np.sum(norm_logpdf(e, 0.0, state.sig2[:, None]))
    if not ctx.spec.pooled:
        if ctx.spec.is_cre:
            mu = np.einsum("np,npj->nj", ctx.W, state.xi.lam_loc[state.gam_lam])
            z = np.column_stack([state.lam, state.y_star[:, 0]]) - mu
            lp += _bvn_rowwise(z, state.xi.lam_cov[state.gam_lam])
        else:
            m, v = lambda_prior(state, ctx)
            lp += np.sum(norm_logpdf(state.lam, m, v))
    if not ctx.spec.is_cre:
        init = state.y_star[:, : ctx.L]
        lp += np.sum(norm_logpdf(init, state.xi.y0_loc, state.xi.y0_var))
    if ctx.priors.sig_nig is not None and ctx.priors.fixed_sigma2 is None:
        g = state.gam_sig
        lp += np.sum(norm_logpdf(np.log(state.sig2), state.xi.sig_loc[g], state.xi.sig_var[g]))
    return float(lp)


def _bvn_rowwise(z, S):
    det = S[:, 0, 0] * S[:, 1, 1] - S[:, 0, 1] ** 2
    q = (S[:, 1, 1] * z[:, 0] ** 2 - 2 * S[:, 0, 1] * z[:, 0] * z[:, 1]
         + S[:, 0, 0] * z[:, 1] ** 2) / det
    return float(np.sum(-np.log(2 * np.pi) - 0.5 * np.log(det) - 0.5 * q))


# ---------------------------------------------------------------------------
# initialization


def fod_gmm(y, x, xb_cols=None):
    """One-step GMM for (rho, beta) on forward-orthogonal deviations.

    Instruments for the period-t equation are the levels y_0..y_{t-1}; the
    transformed regressors serve as their own instruments.  Returns None
    when T < 3 or the moment matrix is singular.
    """
    N, T1 = y.shape
    T = T1 - 1
    if T < 3:
        return None
    n_x = x.shape[2]
    ycur = y[:, 1:]                      # t = 1..T
    ylag = y[:, :-1]
    xr = x[:, 1 : T + 1, :]              # regressor dated t-1 for period t

    def fod(a):
        # a has time on axis 1 with length T
        rev = np.cumsum(a[:, ::-1], axis=1)[:, ::-1]
        cnt = np.arange(T, 0, -1).reshape((1, T) + (1,) * (a.ndim - 2))
        fwd_mean = (rev[:, 1:] ) / cnt[:, 1:]
        c = np.sqrt((cnt[:, 1:]) / (cnt[:, 1:] + 1.0))
        return c * (a[:, :-1] - fwd_mean)

    ty, tl, tx = fod(ycur), fod(ylag), fod(xr)   # equations t = 1..T-1
    X = np.concatenate([tl[..., None], tx], axis=2)  # (N, T-1, 1+n_x)
    q = T * (T - 1) // 2
    Z = np.zeros((N, T - 1, q + n_x))
    col = 0
    for t in range(1, T):
        Z[:, t - 1, col : col + t] = y[:, :t]
        col += t
    Z[:, :, q:] = tx
    G = np.einsum("ntp,ntq->pq", Z, Z)
    A = np.einsum("ntp,ntq->pq", Z, X)
    b = np.einsum("ntp,nt->p", Z, ty)
    try:
        Gi = np.linalg.pinv(G)
        H = A.T @ Gi @ A
        if np.linalg.cond(H) > 1e12:
            return None
        theta = np.linalg.solve(H, A.T @ Gi @ b)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(theta)):
        return None
    resid = ty - np.einsum("ntp,p->nt", X, theta)
    return theta, resid


def pooled_ols_positive(y, x, lag=1):
    """OLS of y_t on (1, y_{t-lag}, x_{t-lag}) over pairs with both values positive."""
    T = y.shape[1] - 1
    cur, prev = y[:, lag:], y[:, : T + 1 - lag]
    xr = x[:, 1 : T + 2 - lag, :]
    keep = (cur > 0) & (prev > 0)
    if keep.sum() < 3 + x.shape[2]:
        keep = np.ones_like(keep)
    Z = np.column_stack([np.ones(keep.sum()), prev[keep], xr[keep]])
    coef, *_ = np.linalg.lstsq(Z, cur[keep], rcond=None)
    return coef[1:]


def kmeans(data, k, rng, n_iter=100):
    """Lloyd's algorithm with k-means++ seeding; empty clusters are re-seeded
    at the points farthest from their centers."""
    n = data.shape[0]
    k = min(k, n)
    centers = np.empty((k, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    d2 = np.sum((data - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        tot = d2.sum()
        idx = rng.choice(n, p=d2 / tot) if tot > 0 else rng.integers(n)
        centers[j] = data[idx]
        d2 = np.minimum(d2, np.sum((data - centers[j]) ** 2, axis=1))
    labels = np.zeros(n, dtype=int)
    for it in range(n_iter):
        dist2 = np.sum((data[:, None, :] - centers[None]) ** 2, axis=2)
        new = np.argmin(dist2, axis=1)
        counts = np.bincount(new, minlength=k)
        if np.any(counts == 0):
            far = np.argsort(-dist2[np.arange(n), new])
            for slot, j in enumerate(np.nonzero(counts == 0)[0]):
                new[far[slot]] = j
        if it > 0 and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            centers[j] = data[labels == j].mean(axis=0)
    return labels


def initialize(ctx, rng):
    """Starting state: latents at observed values, GMM/OLS estimate of theta,
    within-unit intercepts and variances, k-means memberships, and one
    conditional draw of xi."""
    spec, pri = ctx.spec, ctx.priors
    y, x = ctx.y, ctx.x
    N, L = ctx.N, ctx.L
    n_x = ctx.data.n_x
    ys = y.copy()
    res = fod_gmm(ys, x) if L == 1 else None
    if res is None:
        theta = pooled_ols_positive(ys, x, L)
        fod_resid = None
    else:
        theta, fod_resid = res
    rho, beta = float(theta[0]), np.asarray(theta[1:], float)
    state = ChainState(ys, np.zeros(N), np.ones(N), rho, beta, MixtureHyperparams(),
                       np.zeros(N, int), np.zeros(N, int), np.zeros(N))
    e = ctx.residuals(state)
    lam = e.mean(axis=1)
    all_zero = np.all(y[:, L:] == 0, axis=1) if spec.censoring == "tobit" else np.zeros(N, bool)
    pos = y[y > 0]
    lam[all_zero] = -(pos.std() if pos.size > 1 else 1.0)
    v_star = pri.tuning.v_star
    floor = 1e-2 * (v_star if v_star and v_star > 0 else 1.0)
    if fod_resid is not None:
        s2 = np.mean(fod_resid ** 2, axis=1)
    else:
        s2 = np.var(e, axis=1)
    s2 = np.maximum(s2, floor)

    if spec.pooled:
        lam[:] = lam.mean()
    state.lam = lam
    if pri.fixed_sigma2 is not None:
        state.sig2 = np.full(N, float(pri.fixed_sigma2))
    elif spec.hetero and not spec.pooled:
        state.sig2 = s2
    else:
        state.sig2 = np.full(N, float(np.mean(s2)))
    state.log_step = np.full(N, np.log(2.38 * np.sqrt(2.0 / ctx.n_obs)))

    k = min(10, N, spec.K_lambda if not spec.pooled else 1)
    if k > 1:
        feats = np.column_stack([lam, np.log(s2)])
        sd = feats.std(axis=0)
        feats = (feats - feats.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        labels = kmeans(feats, k, rng)
    else:
        labels = np.zeros(N, int)
    state.gam_lam = labels.copy() if not spec.pooled and spec.K_lambda > 1 else np.zeros(N, int)
    state.gam_sig = labels.copy() if spec.K_sigma > 1 and spec.hetero and not spec.pooled \
        else np.zeros(N, int)

    xi = state.xi
    xi.alpha_lam = xi.alpha_sig = pri.alpha_shape / pri.alpha_rate
    if not spec.pooled:
        xi.lam_pi = np.full(spec.K_lambda, 1.0 / spec.K_lambda)
    if pri.sig_nig is not None:
        xi.sig_pi = np.full(spec.K_sigma, 1.0 / spec.K_sigma)
    if spec.y0_known is not None:
        xi.y0_loc, xi.y0_var = spec.y0_known
    step6_draw_xi(state, ctx, rng)
    return state


# ---------------------------------------------------------------------------
# chain driver


@dataclass
class PosteriorDraws:
    """Thinned post-burn-in draws.

    ``arrays`` maps names to arrays whose first axis indexes draws:
    rho (M,), beta (M, n_x), lam / sig2 / ystar_T (M, N), plus the xi
    blocks.  ``diagnostics`` holds per-sweep traces (not persisted:
    timing varies between runs).
    """

    arrays: dict
    spec: object
    tuning: object
    settings: SamplerSettings
    unit_ids: list
    diagnostics: dict = field(default_factory=dict)
    T: int = None

    @property
    def n_draws(self):
        return self.arrays["rho"].shape[0]

    @property
    def n_units(self):
        return self.arrays["lam"].shape[1]

    def __getitem__(self, key):
        return self.arrays[key]

    def xi(self, j):
        a = self.arrays
        get = lambda k: a[k][j] if k in a else None
        return MixtureHyperparams(
            get("lam_loc"), get("lam_cov"), get("lam_pi"),
            float(a["y0_loc"][j]), float(a["y0_var"][j]),
            get("sig_loc"), get("sig_var"), get("sig_pi"),
            float(a["alpha_lam"][j]), float(a["alpha_sig"][j]))

    def posterior_means(self):
        return {k: v.mean(axis=0) for k, v in self.arrays.items()}


def _record(store, j, state, ctx):
    store["rho"][j] = state.rho
    store["beta"][j] = state.beta
    store["lam"][j] = state.lam
    store["sig2"][j] = state.sig2
    store["ystar_T"][j] = state.y_star[:, -1]
    xi = state.xi
    for k in ("lam_loc", "lam_cov", "lam_pi", "sig_loc", "sig_var", "sig_pi"):
        if k in store:
            store[k][j] = getattr(xi, k)
    store["y0_loc"][j] = xi.y0_loc
    store["y0_var"][j] = xi.y0_var
    store["alpha_lam"][j] = xi.alpha_lam
    store["alpha_sig"][j] = xi.alpha_sig


def _allocate(M, state, N, n_x):
    store = {
        "rho": np.empty(M), "beta": np.empty((M, n_x)), "lam": np.empty((M, N)),
        "sig2": np.empty((M, N)), "ystar_T": np.empty((M, N)),
        "y0_loc": np.empty(M), "y0_var": np.empty(M),
        "alpha_lam": np.empty(M), "alpha_sig": np.empty(M),
    }
    xi = state.xi
    for k in ("lam_loc", "lam_cov", "lam_pi", "sig_loc", "sig_var", "sig_pi"):
        v = getattr(xi, k)
        if v is not None:
            store[k] = np.empty((M,) + np.shape(v))
    return store


STEPS = (
    ("latent", _S1, step1_draw_latents),
    ("lambda", _S2, step2_draw_lambda),
    ("sigma2", _S3, step3_draw_sigma2),
    ("theta", _S4, step4_draw_theta),
    ("membership", _S5, step5_draw_memberships),
    ("xi", _S6, step6_draw_xi),
)


def sweep(state, ctx, sweep_index, adapt_iter=None, timings=None):
    """Run one full sweep in place.  Returns the RWMH acceptance rate (or nan)."""
    seed = ctx.settings.seed
    acc_rate = np.nan
    for name, sid, fn in STEPS:
        t0 = time.perf_counter()
        rng = stream(seed, sweep_index, sid)
        try:
            if sid == _S3:
                acc = fn(state, ctx, rng, adapt_iter=adapt_iter)
                if acc is not None:
                    acc_rate = float(acc.mean())
            else:
                fn(state, ctx, rng)
        except Exception as exc:
            raise SamplerError(f"sweep {sweep_index}, step {name}: {exc}") from exc
        if timings is not None:
            timings[name] += time.perf_counter() - t0
    return acc_rate


def run_chain(data, spec, priors, settings, init_state=None, check_every=0, progress=None):
    """Initialize and run burn_in + n_draws * thin sweeps; keep every thin-th
    post-burn-in state."""
    ctx = GibbsContext(data, spec, priors, settings)
    try:
        state = init_state.copy() if init_state is not None else initialize(
            ctx, stream(settings.seed, _INIT))
        M = settings.n_draws
        total = settings.burn_in + M * settings.thin
        store = _allocate(M, state, ctx.N, data.n_x)
        logjoint = np.empty(total)
        accept = np.empty(total)
        timings = {name: 0.0 for name, _, _ in STEPS}
        j = 0
        t_start = time.perf_counter()
        for s in range(total):
            burning = s < settings.burn_in
            accept[s] = sweep(state, ctx, s, adapt_iter=s + 1 if burning else None,
                              timings=timings)
            logjoint[s] = log_joint(state, ctx)
            if check_every and s % check_every == 0:
                state.check(data, spec)
            if not burning and (s - settings.burn_in + 1) % settings.thin == 0:
                _record(store, j, state, ctx)
                j += 1
            if progress is not None:
                progress(s, total)
        diag = {"logjoint": logjoint, "accept_sigma": accept, "timing": timings,
                "seconds": time.perf_counter() - t_start,
                "final_log_step": state.log_step.copy()}
        return PosteriorDraws(store, spec, priors.tuning, settings, list(data.unit_ids),
                              diag, data.n_periods_T)
    finally:
        ctx.close()


def estimate(data, spec, tuning, settings, **prior_kw):
    """Convenience wrapper: compute V*, build default priors, run the chain."""
    from dataclasses import replace
    from .priors import default_priors

    tuning = replace(tuning, v_star=per_unit_variance_mean(data.y))
    priors = default_priors(spec, tuning, **prior_kw)
    return run_chain(data, spec, priors, settings)
