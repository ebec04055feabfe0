"""Posterior predictive densities and highest-density set forecasts.

The h-step predictive for unit i given posterior draw j is a censored
Normal: a point mass Phi(-mu/sd) at zero plus the Normal density on y > 0.
Averaging over draws gives pi0 (zero probability) and a continuous part
pi(y).  Set forecasts pair one positive-part sample per draw with the
weight W = 1 - Phi(-mu/sd) and keep the highest-density samples.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from .distributions import truncnorm_pos_icdf
from .gibbs import run_chain
from .priors import default_priors
from .rng import as_generator, open_uniform

INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ForecastError(ValueError):
    pass


@dataclass
class PredictiveDrawComponents:
    """Conditional moments of y*_{T+h}, arrays of shape (N, M)."""

    mu: np.ndarray
    var: np.ndarray

    @property
    def sd(self):
        return np.sqrt(self.var)

    @property
    def zero_prob(self):
        return ndtr(-self.mu / self.sd)

    @property
    def weight(self):
        return 1.0 - self.zero_prob


@dataclass
class PredictiveDensity:
    """Per-unit predictive: ``pi0`` (N,), and per draw the positive-part
    sample, its weight W and the mixture density at the sample (N, M)."""

    pi0: np.ndarray
    samples: np.ndarray
    weights: np.ndarray
    density: np.ndarray
    components: PredictiveDrawComponents

    @property
    def n_units(self):
        return self.pi0.size

    @property
    def n_draws(self):
        return self.samples.shape[1]

    def unit(self, i):
        c = self.components
        return PredictiveDensity(self.pi0[i : i + 1], self.samples[i : i + 1],
                                 self.weights[i : i + 1], self.density[i : i + 1],
                                 PredictiveDrawComponents(c.mu[i : i + 1], c.var[i : i + 1]))

    def density_at(self, y):
        """Continuous-part mixture density at y (one value per unit)."""
        y = np.broadcast_to(np.asarray(y, float), (self.n_units,))
        return mixture_density(self.components.mu, self.components.sd, y[:, None])[:, 0]

    def point_forecast(self):
        """Posterior predictive mean of the censored outcome."""
        mu, sd = self.components.mu, self.components.sd
        z = mu / sd
        return np.mean(mu * ndtr(z) + sd * INV_SQRT_2PI * np.exp(-0.5 * z * z), axis=1)


@dataclass
class SetForecast:
    includes_zero: bool
    segments: list
    alpha: float
    mode: str
    is_empty: bool = False
    mass: float = float("nan")       # posterior probability of the set

    @property
    def length(self):
        return float(sum(b - a for a, b in self.segments))

    def contains(self, y):
        if self.is_empty:
            return False
        if y == 0:
            return bool(self.includes_zero)
        return any(a <= y <= b for a, b in self.segments)

    def kind(self):
        """One of: empty, zero_only, zero_to_b, zero_plus_interval, multi."""
        if self.is_empty:
            return "empty"
        if not self.segments:
            return "zero_only"
        if len(self.segments) > 1:
            return "multi"
        return "zero_to_b" if self.segments[0][0] == 0.0 else "zero_plus_interval"

    def to_record(self, unit_id, point_forecast, pi0):
        return {"unit_id": unit_id, "mode": self.mode, "alpha": self.alpha,
                "includes_zero": bool(self.includes_zero and not self.is_empty),
                "segments": [[float(a), float(b)] for a, b in self.segments],
                "point_forecast": float(point_forecast), "pi0": float(pi0)}


# ---------------------------------------------------------------------------
# predictive moments


def _geom(rho, n, power=1):
    """sum_{s<n} rho^(power*s) for an array of rho."""
    r = np.asarray(rho, float) ** power
    out = np.zeros_like(r)
    term = np.ones_like(r)
    for _ in range(n):
        out += term
        term = term * r
    return out


def predictive_components(draws, data, h=1, x_future=None):
    """Moments of y*_{i,T+h} for every posterior draw.

    For a direct multi-step fit (lag = h) the one-step formula is applied to
    the lag-h model.  With regressors and h > 1 the future path x_{T+1..}
    must be supplied, shape (N, >= h-1, n_x), standardized like the data.
    """
    if h < 1:
        raise ForecastError("horizon must be at least 1")
    lag = getattr(draws.spec, "lag", 1)
    rho = draws["rho"][None, :]                      # (1, M)
    lam = draws["lam"].T                             # (N, M)
    sig2 = draws["sig2"].T
    yT = draws["ystar_T"].T
    beta = draws["beta"]                             # (M, n_x)
    T = data.n_periods_T
    n_x = data.n_x
    if lag > 1:
        if h != lag:
            raise ForecastError(f"direct fit at lag {lag} forecasts horizon {lag} only")
        steps = 1
    else:
        steps = h
    if n_x and steps > 1:
        if x_future is None:
            x_future = data.x_future
        if x_future is None or x_future.shape[1] < steps - 1:
            raise ForecastError("x_future is required for h > 1 with regressors")
    mu = lam * _geom(rho, steps) + rho ** steps * yT
    if n_x:
        # x_{T+h-1-s} for s = 0..h-1; x_T is the last stored row
        for s in range(steps):
            k = steps - 1 - s                         # date T + k
            xk = data.x[:, T + 1] if k == 0 else x_future[:, k - 1]
            mu = mu + rho ** s * (xk @ beta.T)
    var = _geom(rho, steps, power=2) * sig2
    return PredictiveDrawComponents(mu, var)


# ---------------------------------------------------------------------------
# predictive density


def mixture_density(mu, sd, y, batch=64):
    """(1/M) sum_j N(y_ia | mu_ij, sd_ij^2) for y of shape (N, A)."""
    N = mu.shape[0]
    out = np.empty(y.shape)
    inv = 1.0 / sd
    for a in range(0, N, batch):
        b = min(a + batch, N)
        z = (y[a:b, :, None] - mu[a:b, None, :]) * inv[a:b, None, :]
        out[a:b] = np.mean(np.exp(-0.5 * z * z) * inv[a:b, None, :], axis=2) * INV_SQRT_2PI
    return out


def _grid_density(mu, sd, y, grid_size, batch=16):
    """Mixture density on a per-unit grid spanning the samples, linearly
    interpolated at ``y``."""
    N = mu.shape[0]
    lo = y.min(axis=1)
    hi = y.max(axis=1)
    hi = np.where(hi > lo, hi, lo + 1e-12)
    u = np.linspace(0.0, 1.0, grid_size)
    grid = lo[:, None] + (hi - lo)[:, None] * u[None, :]
    dens = mixture_density(mu, sd, grid, batch=batch)
    out = np.empty_like(y)
    for i in range(N):
        out[i] = np.interp(y[i], grid[i], dens[i])
    return out


def build_predictive_density(components, rng=None, density_method="auto", grid_size=256,
                             exact_max_draws=600):
    """Draw one positive-part sample per posterior draw and evaluate the
    mixture density at every sample.

    ``density_method``: ``exact`` evaluates the full M x M mixture; ``grid``
    evaluates on ``grid_size`` points per unit and interpolates; ``auto``
    uses exact when M <= ``exact_max_draws``.
    """
    rng = as_generator(rng)
    mu, sd = components.mu, components.sd
    N, M = mu.shape
    zero_prob = ndtr(-mu / sd)
    W = 1.0 - zero_prob
    pi0 = zero_prob.mean(axis=1)
    U = open_uniform(rng, (N, M))
    samples = truncnorm_pos_icdf(mu, sd, U)
    samples = np.maximum(samples, 0.0)
    if density_method == "auto":
        density_method = "exact" if M <= exact_max_draws else "grid"
    if density_method == "exact":
        dens = mixture_density(mu, sd, samples, batch=max(1, 4_000_000 // (M * M)))
    elif density_method == "grid":
        dens = _grid_density(mu, sd, samples, grid_size)
    else:
        raise ForecastError(f"unknown density_method {density_method!r}")
    return PredictiveDensity(pi0, samples, W, dens, components)


# ---------------------------------------------------------------------------
# HPD sets


def _segments_from_selection(y_sorted, selected):
    """Intervals over runs of selected samples (y ascending).  A run that
    starts at the smallest sample extends down to 0; singletons are dropped."""
    if not selected.any():
        return []
    s = selected.astype(np.int8)
    d = np.diff(np.concatenate([[0], s, [0]]))
    starts = np.nonzero(d == 1)[0]
    ends = np.nonzero(d == -1)[0] - 1
    segs = []
    for a, b in zip(starts, ends):
        lo = 0.0 if a == 0 else float(y_sorted[a])
        hi = float(y_sorted[b])
        if hi > lo:
            segs.append((lo, hi))
    return segs


def _select(order, w, target):
    """Leading positions of ``order`` whose weights first reach ``target``."""
    if target <= 0:
        return order[:0]
    cw = np.cumsum(w[order])
    s_bar = int(np.searchsorted(cw, target, side="left"))
    return order[: min(s_bar + 1, order.size)]


def hpd_pointwise(pd, alpha, i=0):
    """Set forecast for unit ``i`` targeting 1 - alpha posterior coverage."""
    pi0 = float(pd.pi0[i])
    M = pd.n_draws
    if pi0 >= 1.0 - alpha:
        return SetForecast(True, [], alpha, "pointwise", mass=pi0)
    dens, w, y = pd.density[i], pd.weights[i], pd.samples[i]
    order = np.argsort(-dens, kind="stable")
    chosen = _select(order, w, (1.0 - alpha - pi0) * M)
    return _assemble(y, w, chosen, alpha, "pointwise", pi0, M)


def _assemble(y, w, chosen, alpha, mode, pi0, M):
    sel = np.zeros(y.size, bool)
    sel[chosen] = True
    yorder = np.argsort(y, kind="stable")
    segs = _segments_from_selection(y[yorder], sel[yorder])
    mass = pi0 + _mass_in(segs, y, w) / M
    return SetForecast(True, segs, alpha, mode, mass=mass)


def _mass_in(segs, y, w):
    if not segs:
        return 0.0
    inside = np.zeros(y.size, bool)
    for a, b in segs:
        inside |= (y >= a) & (y <= b)
    return float(w[inside].sum())


def hpd_pointwise_all(pd, alpha):
    return [hpd_pointwise(pd, alpha, i) for i in range(pd.n_units)]


def hpd_average(pd, alpha):
    """Set forecasts with one density threshold shared by all units, so the
    cross-sectional average coverage is 1 - alpha."""
    N, M = pd.samples.shape
    pi0 = pd.pi0
    pibar = float(pi0.mean())
    if pibar >= 1.0 - alpha:
        order = np.argsort(-pi0, kind="stable")
        cum = np.cumsum(pi0[order]) / N
        n_zero = int(np.searchsorted(cum, 1.0 - alpha, side="left")) + 1
        zero_units = set(order[: min(n_zero, N)].tolist())
        return [SetForecast(True, [], alpha, "average", mass=float(pi0[i]))
                if i in zero_units else
                SetForecast(False, [], alpha, "average", is_empty=True, mass=0.0)
                for i in range(N)]
    dens = pd.density.reshape(-1)
    w = pd.weights.reshape(-1)
    order = np.argsort(-dens, kind="stable")
    chosen = _select(order, w, (1.0 - alpha - pibar) * N * M)
    sel = np.zeros(N * M, bool)
    sel[chosen] = True
    sel = sel.reshape(N, M)
    out = []
    for i in range(N):
        out.append(_assemble(pd.samples[i], pd.weights[i], np.nonzero(sel[i])[0],
                             alpha, "average", float(pi0[i]), M))
    return out


def set_forecasts(pd, alpha, mode):
    if mode == "pointwise":
        return hpd_pointwise_all(pd, alpha)
    if mode == "average":
        return hpd_average(pd, alpha)
    raise ForecastError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# direct multi-step estimation


def direct_multistep_estimate(data, spec, priors, settings, h):
    """Re-estimate with lag-h pairings y*_t on (y*_{t-h}, x_{t-h}); serial
    correlation of the composite error is ignored."""
    if data.n_periods_T <= h:
        raise ForecastError("need T > h for direct estimation")
    if h == 1:
        return run_chain(data, spec, priors, settings)
    spec_h = replace(spec, lag=h)
    priors_h = default_priors(spec_h, priors.tuning, priors.fixed_sigma2,
                              priors.fixed_lambda_var)
    return run_chain(data, spec_h, priors_h, settings)
