"""Model specifications, prior bundles, and prior-draw summaries."""

from dataclasses import dataclass, field, asdict, replace

import numpy as np
from scipy.stats import chi2

from .distributions import (
    MNIWParams, NIGParams, draw_mniw, draw_nig, draw_tsb,
)
from .rng import as_generator


class SpecError(ValueError):
    pass


@dataclass
class PriorTuning:
    tau_theta: float = 5.0
    tau_phi: float = 5.0
    tau_sigma_lambda: float = 1.0
    tau_sigma_y: float = 1.0
    tau_v: float = 1.0
    v_star: float = None

    def __post_init__(self):
        for name in ("tau_theta", "tau_phi", "tau_sigma_lambda", "tau_sigma_y", "tau_v"):
            if not getattr(self, name) > 0:
                raise SpecError(f"{name} must be positive")

    @classmethod
    def preset(cls, name):
        """``montecarlo`` (synthetic defaults) or ``adjusted`` (empirical-style)."""
        if name == "montecarlo":
            return cls()
        if name == "adjusted":
            return cls(tau_theta=5.0, tau_phi=20.0, tau_sigma_lambda=1.0,
                       tau_sigma_y=4.0, tau_v=1.0)
        raise SpecError(f"unknown tuning preset {name!r}")


@dataclass(frozen=True)
class ModelSpec:
    heterogeneity: str = "flexible"      # flexible | normal | pooled
    cre: str = "cre"                     # re | cre
    variance: str = "heteroskedastic"    # heteroskedastic | homoskedastic
    censoring: str = "tobit"             # tobit | linear
    K: int = 20
    n_x: int = 0
    y0_known: tuple = None               # (mean, var) of y0* when it is known
    lag: int = 1                         # >1 only for direct multi-step fits

    def __post_init__(self):
        if self.heterogeneity not in ("flexible", "normal", "pooled"):
            raise SpecError(f"bad heterogeneity {self.heterogeneity!r}")
        if self.cre not in ("re", "cre"):
            raise SpecError(f"bad cre flag {self.cre!r}")
        if self.variance not in ("heteroskedastic", "homoskedastic"):
            raise SpecError(f"bad variance flag {self.variance!r}")
        if self.censoring not in ("tobit", "linear"):
            raise SpecError(f"bad censoring flag {self.censoring!r}")
        if self.K < 1 or self.lag < 1:
            raise SpecError("K and lag must be at least 1")
        if self.heterogeneity == "pooled" and self.cre != "re":
            raise SpecError("pooled specification requires re")
        if self.y0_known is not None and self.cre == "cre":
            raise SpecError("a known y0 distribution only applies to re")

    @property
    def K_lambda(self):
        return self.K if self.heterogeneity == "flexible" else 1

    @property
    def K_sigma(self):
        return self.K if self.heterogeneity == "flexible" else 1

    @property
    def hetero(self):
        return self.variance == "heteroskedastic"

    @property
    def pooled(self):
        return self.heterogeneity == "pooled"

    @property
    def is_cre(self):
        return self.cre == "cre"

    def label(self):
        if self.pooled:
            return "pooled_linear" if self.censoring == "linear" else "pooled_tobit"
        v = "hetero" if self.hetero else "homo"
        return f"{self.heterogeneity}_{self.cre}_{v}"

    def to_dict(self):
        d = asdict(self)
        d["y0_known"] = None if self.y0_known is None else list(self.y0_known)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("y0_known") is not None:
            d["y0_known"] = tuple(float(v) for v in d["y0_known"])
        return cls(**d)


def named_spec(name, n_x=0, K=20, y0_known=None):
    """The six Monte Carlo specifications by short name."""
    table = {
        "flexible_hetero": ("flexible", "heteroskedastic", "tobit"),
        "normal_hetero": ("normal", "heteroskedastic", "tobit"),
        "flexible_homo": ("flexible", "homoskedastic", "tobit"),
        "normal_homo": ("normal", "homoskedastic", "tobit"),
        "pooled_tobit": ("pooled", "homoskedastic", "tobit"),
        "pooled_linear": ("pooled", "homoskedastic", "linear"),
    }
    if name.endswith("_cre"):
        het, var, cens = table[name[:-4]]
        return ModelSpec(het, "cre", var, cens, K, n_x)
    het, var, cens = table[name]
    return ModelSpec(het, "re", var, cens, K, n_x, y0_known)


MC_SPECS = ("flexible_hetero", "normal_hetero", "flexible_homo", "normal_homo",
            "pooled_tobit", "pooled_linear")


@dataclass
class MixtureHyperparams:
    """The xi vector.

    Lambda block: for CRE ``lam_loc`` is (K, n_x+1, 2) with column 0 for
    lambda and column 1 for y0*, and ``lam_cov`` is (K, 2, 2); for RE both
    are (K,).  Pooled specs leave the lambda block empty.
    """

    lam_loc: np.ndarray = None
    lam_cov: np.ndarray = None
    lam_pi: np.ndarray = None
    y0_loc: float = 0.0
    y0_var: float = 1.0
    sig_loc: np.ndarray = None
    sig_var: np.ndarray = None
    sig_pi: np.ndarray = None
    alpha_lam: float = 1.0
    alpha_sig: float = 1.0

    def check(self):
        for pi in (self.lam_pi, self.sig_pi):
            if pi is not None:
                if abs(pi.sum() - 1.0) > 1e-10 or np.any(pi < 0):
                    raise SpecError("mixture weights must be a probability vector")
        if self.lam_cov is not None:
            if self.lam_cov.ndim == 1:
                ok = np.all(self.lam_cov > 0)
            else:
                ok = all(np.all(np.linalg.eigvalsh(S) > 0) for S in self.lam_cov)
            if not ok:
                raise SpecError("lambda component variances must be positive")
        if self.sig_var is not None and np.any(self.sig_var <= 0):
            raise SpecError("log-variance component variances must be positive")
        if not self.y0_var > 0:
            raise SpecError("y0 variance must be positive")

    def copy(self):
        c = lambda a: None if a is None else np.array(a, copy=True)
        return MixtureHyperparams(c(self.lam_loc), c(self.lam_cov), c(self.lam_pi),
                                  self.y0_loc, self.y0_var, c(self.sig_loc),
                                  c(self.sig_var), c(self.sig_pi),
                                  self.alpha_lam, self.alpha_sig)


@dataclass
class PriorBundle:
    spec: ModelSpec
    tuning: PriorTuning
    theta_var: np.ndarray
    lam_nig: NIGParams = None
    lam_mniw: MNIWParams = None
    y0_nig: NIGParams = None
    sig_nig: NIGParams = None
    sigma2_ig: tuple = None
    alpha_shape: float = 2.0
    alpha_rate: float = 2.0
    fixed_sigma2: float = None
    fixed_lambda_var: float = None


def default_priors(spec, tuning, fixed_sigma2=None, fixed_lambda_var=None):
    """Prior bundle for ``spec`` under ``tuning`` (``v_star`` must be set)."""
    if tuning.v_star is None or not tuning.v_star > 0:
        raise SpecError("tuning.v_star must be computed from the data first")
    tv = tuning.tau_v * tuning.v_star
    p = spec.n_x + 1
    theta_var = np.full(p, tuning.tau_theta)
    if spec.pooled:
        theta_var = np.concatenate([[tuning.tau_phi], theta_var])
    b = PriorBundle(spec, tuning, theta_var,
                    fixed_sigma2=fixed_sigma2, fixed_lambda_var=fixed_lambda_var)
    if not spec.pooled:
        if spec.is_cre:
            D = np.diag([tuning.tau_sigma_lambda, tuning.tau_sigma_y])
            b.lam_mniw = MNIWParams(np.zeros((p, 2)), tuning.tau_phi * np.eye(p), 7.0, 4.0 * D)
        else:
            b.lam_nig = NIGParams(0.0, tuning.tau_phi, 3.0, 2.0 * tuning.tau_sigma_lambda)
    if not spec.is_cre:
        b.y0_nig = NIGParams(0.0, tuning.tau_phi, 3.0, 2.0 * tuning.tau_sigma_y)
    if spec.hetero and not spec.pooled:
        b.sig_nig = NIGParams(np.log(tv) - np.log(2.0) / 2.0, 1.0, 3.0, 2.0 * np.log(2.0))
    else:
        b.sigma2_ig = (3.0, 2.0 * tv)
    return b


def ig_moments(a, b):
    mean = b / (a - 1.0)
    return mean, mean * mean / (a - 2.0)


def lognormal_nig_moments(nig):
    """Mean and variance of sigma2 = exp(s), s ~ N(psi, omega2), with psi at
    the prior location and omega2 at its prior mean.  These are the moments
    matched against the homoskedastic IG prior."""
    omega2 = nig.b / (nig.a - 1.0)
    mean = np.exp(float(nig.m) + omega2 / 2.0)
    var = mean * mean * (np.exp(omega2) - 1.0)
    return mean, var


def draw_prior_xi(bundle, spec, rng=None):
    rng = as_generator(rng)
    xi = MixtureHyperparams()
    a_s, a_r = bundle.alpha_shape, bundle.alpha_rate
    if not spec.pooled:
        K = spec.K_lambda
        if K > 1:
            xi.alpha_lam = float(rng.gamma(a_s, 1.0 / a_r))
            xi.lam_pi = draw_tsb(1.0, xi.alpha_lam, K, rng)
        else:
            xi.lam_pi = np.ones(1)
        if spec.is_cre:
            locs, covs = [], []
            for _ in range(K):
                Phi, Sig = draw_mniw(bundle.lam_mniw, rng)
                locs.append(Phi)
                covs.append(Sig)
            xi.lam_loc, xi.lam_cov = np.array(locs), np.array(covs)
        else:
            draws = [draw_nig(bundle.lam_nig, rng) for _ in range(K)]
            xi.lam_loc = np.array([d[0] for d in draws])
            xi.lam_cov = np.array([d[1] for d in draws])
    if not spec.is_cre:
        if spec.y0_known is not None:
            xi.y0_loc, xi.y0_var = spec.y0_known
        else:
            xi.y0_loc, xi.y0_var = draw_nig(bundle.y0_nig, rng)
    if bundle.sig_nig is not None:
        K = spec.K_sigma
        if K > 1:
            xi.alpha_sig = float(rng.gamma(a_s, 1.0 / a_r))
            xi.sig_pi = draw_tsb(1.0, xi.alpha_sig, K, rng)
        else:
            xi.sig_pi = np.ones(1)
        draws = [draw_nig(bundle.sig_nig, rng) for _ in range(K)]
        xi.sig_loc = np.array([d[0] for d in draws])
        xi.sig_var = np.array([d[1] for d in draws])
    xi.check()
    return xi


# ---------------------------------------------------------------------------
# prior summaries


def probe_point(n_x, quantile=0.5, direction=None):
    """A regressor value on the chi-square(n_x) contour of given coverage.

    Regressors are standardized, so the contour is a sphere of radius
    sqrt(chi2.ppf(q, n_x)).  ``direction`` defaults to the first axis.
    """
    if n_x == 0:
        return np.zeros(0)
    d = np.zeros(n_x) if direction is None else np.asarray(direction, float)
    if direction is None:
        d[0] = 1.0
    d = d / np.linalg.norm(d)
    return np.sqrt(chi2.ppf(quantile, n_x)) * d


def mixture_components(xi, x_probe=None):
    """(weights, means, cov) of the (lambda, y0*) mixture at ``x_probe``.

    For RE the two coordinates are independent; cov is (K, 2, 2).
    """
    K = xi.lam_pi.size
    if xi.lam_loc.ndim == 3:
        w = np.concatenate([[1.0], np.zeros(xi.lam_loc.shape[1] - 1) if x_probe is None
                            else np.asarray(x_probe, float)])
        means = np.einsum("p,kpj->kj", w, xi.lam_loc)
        cov = xi.lam_cov
    else:
        means = np.column_stack([xi.lam_loc, np.full(K, xi.y0_loc)])
        cov = np.zeros((K, 2, 2))
        cov[:, 0, 0] = xi.lam_cov
        cov[:, 1, 1] = xi.y0_var
    return xi.lam_pi, means, cov


def mixture_moments(weights, means, variances):
    """Mean, sd, skewness, excess kurtosis of a univariate Normal mixture."""
    w, m, v = map(np.asarray, (weights, means, variances))
    mu = np.sum(w * m)
    d = m - mu
    c2 = np.sum(w * (v + d ** 2))
    c3 = np.sum(w * (d ** 3 + 3 * d * v))
    c4 = np.sum(w * (d ** 4 + 6 * d ** 2 * v + 3 * v ** 2))
    sd = np.sqrt(c2)
    return mu, sd, c3 / sd ** 3, c4 / c2 ** 2 - 3.0


def count_modes(weights, means, variances, n_grid=2048, width=6.0):
    """Number of local maxima of a Normal mixture density on a fixed grid.

    The grid spans +-``width`` total standard deviations around the mean.
    """
    w, m, v = map(np.asarray, (weights, means, variances))
    mu, sd, _, _ = mixture_moments(w, m, v)
    g = np.linspace(mu - width * sd, mu + width * sd, n_grid)
    dens = np.sum(w[:, None] * np.exp(-0.5 * (g[None] - m[:, None]) ** 2 / v[:, None])
                  / np.sqrt(v[:, None]), axis=0)
    tol = 1e-12 * dens.max()
    up = np.diff(dens) > tol
    down = np.diff(dens) < -tol
    # a mode is an up-run followed (after possible flats) by a down-run
    modes = 0
    rising = True
    for u, d in zip(up, down):
        if u:
            rising = True
        elif d and rising:
            modes += 1
            rising = False
    return max(modes, 1)


def prior_summary(xi_draws, x_probe=None):
    """One summary row (dict) per xi draw: moments of lambda and y0*, their
    correlation, and mode counts of the implied marginal densities."""
    rows = []
    for j, xi in enumerate(xi_draws):
        w, means, cov = mixture_components(xi, x_probe)
        row = {"draw": j}
        for c, name in enumerate(("lambda", "y0")):
            mu, sd, sk, ku = mixture_moments(w, means[:, c], cov[:, c, c])
            row.update({f"{name}_mean": mu, f"{name}_sd": sd, f"{name}_skew": sk,
                        f"{name}_kurt": ku,
                        f"{name}_modes": count_modes(w, means[:, c], cov[:, c, c])})
        m = np.sum(w[:, None] * means, axis=0)
        d = means - m
        cxy = np.sum(w * (cov[:, 0, 1] + d[:, 0] * d[:, 1]))
        row["corr_lambda_y0"] = cxy / (row["lambda_sd"] * row["y0_sd"])
        if xi.sig_pi is not None:
            mu, sd, sk, ku = mixture_moments(xi.sig_pi, xi.sig_loc, xi.sig_var)
            row.update({"logsig2_mean": mu, "logsig2_sd": sd,
                        "logsig2_modes": count_modes(xi.sig_pi, xi.sig_loc, xi.sig_var)})
        rows.append(row)
    return rows
