"""Random sources and density kernels used by the sampler.

Inverse-Gamma convention: IG(a, b) has density proportional to
x^(-a-1) exp(-b/x), so E[X] = b/(a-1) and Var[X] = E[X]^2/(a-2).
Gamma G(a, b) uses shape a and rate b.
"""

from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import log_ndtr, ndtr, ndtri, ndtri_exp

from .rng import as_generator, open_uniform

LOG_2PI = np.log(2.0 * np.pi)
DEEP_TAIL = 6.0


class DistributionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# truncated univariate Normal on (-inf, 0]


def truncnorm_neg_icdf(mean, sd, u):
    """Inverse-CDF map from uniforms to N(mean, sd^2) truncated to y <= 0.

    Vectorized and deterministic in ``u``; the Gibbs sweeps use this form.
    Cells whose truncation probability underflows are handled in log space.
    """
    mean, sd, u = np.broadcast_arrays(np.asarray(mean, float), np.asarray(sd, float),
                                      np.asarray(u, float))
    a = -mean / sd
    p = ndtr(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = ndtri(u * p)
    deep = ~(p > 1e-300)
    if np.any(deep):
        z = np.array(z, copy=True)
        z[deep] = ndtri_exp(np.log(u[deep]) + log_ndtr(a[deep]))
    return np.minimum(mean + sd * z, 0.0)


def truncnorm_pos_icdf(mean, sd, u):
    """Same as above for the region y > 0 (by reflection)."""
    return -truncnorm_neg_icdf(-np.asarray(mean, dtype=float), sd, u)


def _robert_tail(c, rng):
    # draw z >= c from a standard Normal tail, c > 0, exponential proposal
    lam = 0.5 * (c + np.sqrt(c * c + 4.0))
    while True:
        z = c + rng.exponential(1.0 / lam)
        if np.log(rng.random()) <= -0.5 * (z - lam) ** 2:
            return z


def draw_truncated_normal_neg(mean, sd, rng=None, size=None):
    """Draw from N(mean, sd^2) conditioned on y <= 0.

    Mild truncation uses the inverse CDF.  When mean/sd > 6 the lower tail
    is sampled by rejection from a shifted exponential proposal.
    """
    if sd <= 0:
        raise DistributionError("sd must be positive")
    rng = as_generator(rng)
    n = 1 if size is None else int(np.prod(size))
    if mean / sd > DEEP_TAIL:
        c = mean / sd
        out = np.array([mean - sd * _robert_tail(c, rng) for _ in range(n)])
    else:
        p = ndtr(-mean / sd)
        out = mean + sd * ndtri(open_uniform(rng, n) * p)
    out = np.minimum(out, 0.0)
    return float(out[0]) if size is None else out.reshape(size)


# ---------------------------------------------------------------------------
# truncated multivariate Normal on the negative orthant


@dataclass
class TruncatedMvnSpec:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        s = self.mean.size
        if self.cov.shape != (s, s):
            raise DistributionError("mean/cov dimension mismatch")
        if not np.allclose(self.cov, self.cov.T):
            raise DistributionError("cov must be symmetric")
        if np.any(np.diag(self.cov) < 0):
            raise DistributionError("cov diagonal must be non-negative")

    @property
    def dim(self):
        return self.mean.size


def repaired_cholesky(cov):
    """Cholesky factor after adding a ridge of 1e-10 * trace / s."""
    s = cov.shape[0]
    ridge = 1e-10 * max(np.trace(cov), 1e-300) / s
    try:
        return np.linalg.cholesky(cov + ridge * np.eye(s))
    except np.linalg.LinAlgError as exc:
        raise DistributionError("covariance is not PSD after ridge repair") from exc


def _gibbs_refined(mu, L, rng, n, n_scans):
    """GHK-style sequential draws refined by coordinate-wise Gibbs scans.

    Approximate: the scans only move toward the target, so strongly
    correlated blocks keep some bias from the sequential start.
    """
    s = mu.size
    e = np.empty((n, s))
    for k in range(s):
        m = mu[k] + e[:, :k] @ L[k, :k]
        e[:, k] = truncnorm_neg_icdf(m, L[k, k], open_uniform(rng, n))
        e[:, k] = (e[:, k] - m) / L[k, k]
    x = np.minimum(mu + e @ L.T, 0.0)
    if s > 1 and n_scans > 0:
        Q = np.linalg.inv(L @ L.T)
        qd = np.diag(Q)
        csd = 1.0 / np.sqrt(qd)
        for _ in range(n_scans):
            for k in range(s):
                dev = x - mu
                cm = mu[k] - (dev @ Q[k] - Q[k, k] * dev[:, k]) / qd[k]
                x[:, k] = truncnorm_neg_icdf(cm, csd[k], open_uniform(rng, n))
    return x


def _mills(t):
    """phi(t) / Phi(t), stable for very negative t."""
    return np.exp(-0.5 * t * t - 0.5 * LOG_2PI - log_ndtr(t))


class _Tilting:
    """Minimax exponential tilting for Z ~ N(0, I) subject to B Z <= ub,
    with B unit lower-triangular.

    The proposal draws Z_k ~ N(mu_k, 1) truncated to its sequential bound;
    the log importance weight is psi(Z; mu).  The tilt solves the saddle
    point of psi, whose value bounds psi over the whole space, so accepting
    with probability exp(psi - psi_star) gives exact draws.
    """

    def __init__(self, B, ub):
        self.B = B - np.eye(B.shape[0])       # strictly lower part
        self.ub = ub
        d = ub.size
        self.mu = np.zeros(d)
        self.psi_star = 0.0
        if d == 1:
            self.psi_star = float(log_ndtr(ub[0]))
            return
        sol = optimize.root(self._grad, np.zeros(2 * (d - 1)), jac=True, method="hybr")
        y = sol.x if sol.success else self._fallback()
        x = np.append(y[: d - 1], 0.0)
        self.mu = np.append(y[d - 1:], 0.0)
        # psi(., mu) is concave in x, so its stationary value is the supremum
        xs = self._argmax_x(x)
        self.psi_star = self._psi(xs[None, :])[0]

    def _split(self, y):
        d = self.ub.size
        x = np.append(y[: d - 1], 0.0)
        mu = np.append(y[d - 1:], 0.0)
        return x, mu

    def _grad(self, y):
        d = self.ub.size
        x, mu = self._split(y)
        t = self.ub - mu - self.B @ x
        r = _mills(t)
        dr = -r * (t + r)                      # derivative of the Mills ratio term
        gx = -(r @ self.B) - mu
        gm = mu - x - r
        g = np.concatenate([gx[: d - 1], gm[: d - 1]])
        Jxx = (self.B.T * dr) @ self.B
        Jxm = (self.B.T * dr) - np.eye(d)      # d gx_j / d mu_l = dr_l B_lj - delta
        Jmm = np.diag(1.0 + dr)
        Jmx = (dr[:, None] * self.B) - np.eye(d)
        n = d - 1
        J = np.block([[Jxx[:n, :n], Jxm[:n, :n]], [Jmx[:n, :n], Jmm[:n, :n]]])
        return g, J

    def _fallback(self):
        d = self.ub.size
        f = lambda y: 0.5 * np.sum(self._grad(y)[0] ** 2)
        res = optimize.minimize(f, np.zeros(2 * (d - 1)), method="BFGS")
        return res.x

    def _psi(self, Z):
        t = self.ub - self.mu - Z @ self.B.T
        return np.sum(log_ndtr(t) + 0.5 * self.mu ** 2 - Z * self.mu, axis=1)

    def _argmax_x(self, x0):
        d = self.ub.size
        f = lambda v: -self._psi(np.append(v, 0.0)[None, :])[0]

        def g(v):
            x = np.append(v, 0.0)
            t = self.ub - self.mu - self.B @ x
            return -(-(_mills(t) @ self.B) - self.mu)[: d - 1]
        res = optimize.minimize(f, x0[: d - 1], jac=g, method="BFGS", options={"gtol": 1e-10})
        return np.append(res.x, 0.0)

    def propose(self, rng, n):
        d = self.ub.size
        Z = np.empty((n, d))
        for k in range(d):
            bound = self.ub[k] - Z[:, :k] @ self.B[k, :k]
            # Z_k = bound + s with s ~ N(mu_k - bound, 1) restricted to s <= 0
            Z[:, k] = bound + truncnorm_neg_icdf(self.mu[k] - bound, 1.0, open_uniform(rng, n))
        return Z, self._psi(Z)


def draw_truncated_mvn_neg(spec, rng=None, n_scans=10, n_draws=None, method="tilting",
                           max_rounds=200):
    """Draw from N(mean, cov) restricted to the orthant y <= 0.

    ``method="tilting"`` (default) is an exact accept-reject sampler with a
    minimax exponentially tilted sequential proposal.  ``method="gibbs"``
    is a cheaper approximation: a sequential start followed by ``n_scans``
    coordinate-wise Gibbs scans.  ``n_draws`` independent draws are
    produced together when given.
    """
    rng = as_generator(rng)
    mu = spec.mean
    n = 1 if n_draws is None else int(n_draws)
    L = repaired_cholesky(spec.cov)
    if method == "gibbs":
        x = _gibbs_refined(mu, L, rng, n, n_scans)
        return x[0] if n_draws is None else x
    if method != "tilting":
        raise DistributionError(f"unknown method {method!r}")
    D = np.diag(L)
    tilt = _Tilting(L / D[:, None], -mu / D)
    out = np.empty((0, mu.size))
    for _ in range(max_rounds):
        Z, psi = tilt.propose(rng, max(n - out.shape[0], 16))
        keep = -np.log(open_uniform(rng, psi.size)) > tilt.psi_star - psi
        out = np.vstack([out, Z[keep]])
        if out.shape[0] >= n:
            break
    else:
        raise DistributionError("truncated MVN acceptance rate too low")
    x = np.minimum(mu + out[:n] @ L.T, 0.0)
    return x[0] if n_draws is None else x


# ---------------------------------------------------------------------------
# conjugate families


def draw_inverse_gamma(a, b, rng=None, size=None):
    rng = as_generator(rng)
    return b / rng.gamma(a, 1.0, size=size)


@dataclass
class NIGParams:
    """sigma2 ~ IG(a, b), theta | sigma2 ~ N(m, sigma2 * v)."""

    m: np.ndarray
    v: np.ndarray
    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise DistributionError("NIG requires a > 0 and b > 0")


def draw_nig(params, rng=None):
    rng = as_generator(rng)
    sigma2 = float(draw_inverse_gamma(params.a, params.b, rng))
    m = np.asarray(params.m, dtype=float)
    v = np.asarray(params.v, dtype=float)
    if m.ndim == 0:
        theta = float(m + np.sqrt(sigma2 * v) * rng.standard_normal())
    else:
        vv = np.atleast_2d(v) if v.ndim else v * np.eye(m.size)
        theta = m + np.sqrt(sigma2) * (repaired_cholesky(vv) @ rng.standard_normal(m.size))
    return theta, sigma2


def nig_posterior(prior, n, sum_z, sum_zz):
    """Scalar-location NIG update from n observations z_i ~ N(theta, sigma2).

    Works elementwise so a whole vector of mixture components is updated at
    once.  Returns (m, v, a, b) arrays.
    """
    v0 = float(prior.v)
    m0 = float(prior.m)
    vn = 1.0 / (1.0 / v0 + n)
    mn = vn * (m0 / v0 + sum_z)
    an = prior.a + 0.5 * n
    bn = prior.b + 0.5 * (sum_zz + m0 * m0 / v0 - mn * mn / vn)
    return mn, vn, an, np.maximum(bn, 1e-300)


@dataclass
class MNIWParams:
    """Sigma ~ IW(nu, S), vec(Phi) | Sigma ~ N(vec(M), Sigma kron V)."""

    M: np.ndarray
    V: np.ndarray
    nu: float
    S: np.ndarray

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        self.V = np.atleast_2d(np.asarray(self.V, dtype=float))
        self.S = np.atleast_2d(np.asarray(self.S, dtype=float))
        p = self.S.shape[0]
        if self.nu <= p + 1:
            raise DistributionError("nu must exceed dim(S) + 1")
        try:
            np.linalg.cholesky(self.S)
        except np.linalg.LinAlgError as exc:
            raise DistributionError("S must be positive definite") from exc


def draw_inverse_wishart(nu, S, rng=None):
    """IW(nu, S) with E = S / (nu - p - 1), via the Bartlett decomposition."""
    rng = as_generator(rng)
    S = np.atleast_2d(S)
    p = S.shape[0]
    Sinv = np.linalg.inv(S)
    C = np.linalg.cholesky(0.5 * (Sinv + Sinv.T))
    A = np.zeros((p, p))
    A[np.diag_indices(p)] = np.sqrt(rng.chisquare(nu - np.arange(p)))
    A[np.tril_indices(p, -1)] = rng.standard_normal(p * (p - 1) // 2)
    CA = C @ A
    W = CA @ CA.T
    Sigma = np.linalg.inv(W)
    return 0.5 * (Sigma + Sigma.T)


def draw_mniw(params, rng=None):
    rng = as_generator(rng)
    Sigma = draw_inverse_wishart(params.nu, params.S, rng)
    LV = repaired_cholesky(params.V)
    LS = repaired_cholesky(Sigma)
    Z = rng.standard_normal(params.M.shape)
    return params.M + LV @ Z @ LS.T, Sigma


def mniw_posterior(prior, W, Y):
    """Conjugate MNIW update for the regression Y = W Phi + E, rows of E ~ N(0, Sigma)."""
    V0inv = np.linalg.inv(prior.V)
    prec = V0inv + W.T @ W
    Vn = np.linalg.inv(prec)
    Vn = 0.5 * (Vn + Vn.T)
    Mn = Vn @ (V0inv @ prior.M + W.T @ Y)
    Sn = prior.S + Y.T @ Y + prior.M.T @ V0inv @ prior.M - Mn.T @ prec @ Mn
    Sn = 0.5 * (Sn + Sn.T)
    return MNIWParams(Mn, Vn, prior.nu + Y.shape[0], Sn)


# ---------------------------------------------------------------------------
# truncated stick-breaking


def tsb_from_sticks(zeta):
    """Weights from stick fractions zeta_1..zeta_{K-1}; the last takes the remainder."""
    zeta = np.asarray(zeta, dtype=float)
    K = zeta.size + 1
    pi = np.empty(K)
    rest = 1.0
    for k in range(K - 1):
        pi[k] = rest * zeta[k]
        rest *= 1.0 - zeta[k]
    pi[K - 1] = max(1.0 - pi[: K - 1].sum(), 0.0)
    return pi


def draw_tsb(ones, alphas, K, rng=None, return_log_last=False):
    """Truncated stick-breaking weights with zeta_k ~ B(ones_k, alphas_k)."""
    rng = as_generator(rng)
    if K < 1:
        raise DistributionError("K must be at least 1")
    if K == 1:
        pi = np.ones(1)
        return (pi, 0.0) if return_log_last else pi
    ones = np.broadcast_to(np.asarray(ones, dtype=float), (K,))[: K - 1]
    alphas = np.broadcast_to(np.asarray(alphas, dtype=float), (K,))[: K - 1]
    zeta = rng.beta(ones, alphas)
    zeta = np.clip(zeta, 0.0, 1.0 - 1e-16)
    pi = tsb_from_sticks(zeta)
    if return_log_last:
        return pi, float(np.sum(np.log1p(-zeta)))
    return pi


# ---------------------------------------------------------------------------
# densities


def norm_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def categorical_from_logits(logw, u):
    """Inverse-CDF categorical draw per row of ``logw`` given uniforms ``u``.

    Labels are found by scanning components in index order.
    """
    logw = np.atleast_2d(logw)
    mx = np.max(logw, axis=1, keepdims=True)
    if np.any(~np.isfinite(mx)):
        raise DistributionError("all component log weights are -inf")
    w = np.exp(logw - mx)
    c = np.cumsum(w, axis=1)
    target = u * c[:, -1]
    lab = np.sum(c < target[:, None], axis=1)
    return np.minimum(lab, logw.shape[1] - 1)
