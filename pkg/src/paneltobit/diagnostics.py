"""Posterior predictive checks, treatment-effect decomposition and chain
convergence summaries."""

import csv
import os
from dataclasses import dataclass

import numpy as np

from .panel import CommonParams, UnitParams, simulate_panel
from .rng import as_generator, stream

PPC_STATS = ("density_positive_yT1", "zero_count_histogram", "autocorr_both_positive",
             "mean_after_zero", "mean_before_zero", "robust_autocorr")
QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)


class DiagnosticsError(ValueError):
    pass


# ---------------------------------------------------------------------------
# posterior predictive checks


@dataclass
class PpcStatistic:
    name: str
    labels: list
    observed: np.ndarray
    replicated: np.ndarray          # (n_hairlines, len(labels))

    def band(self, lo=0.05, hi=0.95):
        if self.replicated.shape[0] == 0:
            nan = np.full(len(self.labels), np.nan)
            return nan, nan, nan
        r = self.replicated
        return (np.nanquantile(r, lo, axis=0), np.nanquantile(r, 0.5, axis=0),
                np.nanquantile(r, hi, axis=0))


def _draw_unit_params(draws, j, data, rng):
    """Fresh (lambda, y0*, sigma2) for every unit from posterior draw j."""
    spec = draws.spec
    N = data.n_units
    xi = draws.xi(j)
    if spec.pooled:
        lam = np.full(N, draws["lam"][j, 0])
    if spec.pooled or not spec.is_cre:
        y0 = xi.y0_loc + np.sqrt(xi.y0_var) * rng.standard_normal(N)
    if not spec.pooled:
        k = rng.choice(xi.lam_pi.size, size=N, p=xi.lam_pi / xi.lam_pi.sum())
        if spec.is_cre:
            w = np.column_stack([np.ones(N), data.x[:, 0]])
            mean = np.einsum("ip,ipj->ij", w, xi.lam_loc[k])
            L = np.linalg.cholesky(xi.lam_cov[k])
            z = mean + np.einsum("ijk,ik->ij", L, rng.standard_normal((N, 2)))
            lam, y0 = z[:, 0], z[:, 1]
        else:
            lam = xi.lam_loc[k] + np.sqrt(xi.lam_cov[k]) * rng.standard_normal(N)
    if xi.sig_pi is not None:
        k = rng.choice(xi.sig_pi.size, size=N, p=xi.sig_pi / xi.sig_pi.sum())
        sig2 = np.exp(xi.sig_loc[k] + np.sqrt(xi.sig_var[k]) * rng.standard_normal(N))
    else:
        sig2 = np.asarray(draws["sig2"][j], float).copy()
    return lam, y0, sig2


def ppc_simulate(draws, data, n_hairlines, seed=0):
    """Replicated panels y_{0:T+1}, one per posterior draw (evenly spaced)."""
    if n_hairlines <= 0:
        return []
    M = draws.n_draws
    idx = np.linspace(0, M - 1, min(n_hairlines, M)).round().astype(int)
    T = data.n_periods_T
    # x dated -1..T+1; the last period's regressor is never used
    x = np.concatenate([data.x, data.x[:, -1:]], axis=1)
    out = []
    for h, j in enumerate(idx):
        rng = stream(seed, 0xC1, h)
        lam, y0, sig2 = _draw_unit_params(draws, j, data, rng)
        common = CommonParams(draws["rho"][j], draws["beta"][j])
        _, rep = simulate_panel(UnitParams(lam, sig2), common, y0, x=x, T=T + 1,
                                rng=stream(seed, 0xC2, h))
        out.append(rep)
    return out


def observed_panel(data):
    """Observed y_{0:T+1} when a holdout period exists, else y_{0:T}."""
    if data.holdout_y is not None and data.holdout_y.shape[1] > 0:
        return np.concatenate([data.y, data.holdout_y[:, :1]], axis=1)
    return data.y


def _runs_mean(row, after):
    """Mean of the positive run after the first zero (``after``) or before
    the last zero; nan when absent."""
    z = np.nonzero(row == 0)[0]
    if z.size == 0:
        return np.nan
    if after:
        start = z[0] + 1
        nxt = z[z > z[0]]
        stop = nxt[0] if nxt.size else row.size
    else:
        stop = z[-1]
        prv = z[z < z[-1]]
        start = prv[-1] + 1 if prv.size else 0
    seg = row[start:stop]
    return float(seg.mean()) if seg.size else np.nan


def robust_autocorr(row, min_positive=5):
    """Median-of-products first-order autocorrelation.

    With d_t = y_t - median(y), the estimate is median(d_t d_{t-1}) /
    median(d_t^2), clipped to [-1, 1].  Centering at the median makes it
    invariant to adding a constant.  Units with fewer than ``min_positive``
    non-zero values return nan.
    """
    row = np.asarray(row, float)
    if np.count_nonzero(row) < min_positive:
        return np.nan
    d = row - np.median(row)
    den = np.median(d * d)
    if not den > 0:
        return np.nan
    return float(np.clip(np.median(d[1:] * d[:-1]) / den, -1.0, 1.0))


def _pooled_autocorr_positive(y):
    a, b = y[:, 1:], y[:, :-1]
    m = (a > 0) & (b > 0)
    if m.sum() < 3:
        return np.nan
    return float(np.corrcoef(a[m], b[m])[0, 1])


def _quantiles(v):
    v = v[np.isfinite(v)]
    if v.size == 0:
        return np.full(len(QUANTILES), np.nan)
    return np.quantile(v, QUANTILES)


def ppc_statistics(y, bins):
    """All statistics for one panel, as {name: vector}."""
    P = y.shape[1]
    last = y[:, -1]
    pos = last[last > 0]
    hist = np.histogram(pos, bins=bins, density=False)[0] / max(last.size, 1)
    nz = np.bincount((y == 0).sum(axis=1), minlength=P + 1) / y.shape[0]
    return {
        "density_positive_yT1": np.concatenate([[np.mean(last == 0)], hist]),
        "zero_count_histogram": nz,
        "autocorr_both_positive": np.array([_pooled_autocorr_positive(y)]),
        "mean_after_zero": _quantiles(np.array([_runs_mean(r, True) for r in y])),
        "mean_before_zero": _quantiles(np.array([_runs_mean(r, False) for r in y])),
        "robust_autocorr": _quantiles(np.array([robust_autocorr(r) for r in y])),
    }


def posterior_predictive_check(draws, data, n_hairlines=100, seed=0, stats=PPC_STATS, n_bins=10):
    """Observed-vs-replicated summaries for the requested statistics."""
    unknown = set(stats) - set(PPC_STATS)
    if unknown:
        raise DiagnosticsError(f"unknown statistics {sorted(unknown)}")
    y_obs = observed_panel(data)
    P = y_obs.shape[1]
    reps = [r.y[:, :P] for r in ppc_simulate(draws, data, n_hairlines, seed)]
    pos = y_obs[:, -1][y_obs[:, -1] > 0]
    hi = np.quantile(pos, 0.99) if pos.size else 1.0
    bins = np.linspace(0.0, hi, n_bins + 1)
    obs = ppc_statistics(y_obs, bins)
    rep = [ppc_statistics(r, bins) for r in reps]
    labels = {
        "density_positive_yT1": ["zero"] + [f"({bins[b]:.4g},{bins[b + 1]:.4g}]" for b in range(n_bins)],
        "zero_count_histogram": [f"n_zero={k}" for k in range(P + 1)],
        "autocorr_both_positive": ["pooled"],
    }
    out = []
    for name in stats:
        lab = labels.get(name, [f"q{q:g}" for q in QUANTILES])
        r = np.array([d[name] for d in rep]).reshape(len(rep), len(lab))
        out.append(PpcStatistic(name, lab, obs[name], r))
    return out


def write_ppc_csv(path, stats):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["statistic", "label", "observed", "rep_q05", "rep_median", "rep_q95"])
        for s in stats:
            lo, med, hi = s.band()
            for k, lab in enumerate(s.labels):
                w.writerow([s.name, lab] + [_f(v) for v in (s.observed[k], lo[k], med[k], hi[k])])


def _f(v):
    return "nan" if not np.isfinite(v) else repr(round(float(v), 10))


# ---------------------------------------------------------------------------
# treatment effects


def treatment_effect_draws(draws, data, iota, delta_x, rng=None):
    """Per draw and unit: (I, II, (y_tilde - y) / delta_x), each (M, N).

    I is beta'iota times the indicator that the baseline outcome is
    positive; II is the switching term.
    """
    if not delta_x > 0:
        raise DiagnosticsError("delta_x must be positive")
    if data.n_x < 1:
        raise DiagnosticsError("treatment effects need regressors")
    iota = np.asarray(iota, float)
    if iota.shape != (data.n_x,) or abs(np.linalg.norm(iota) - 1.0) > 1e-8:
        raise DiagnosticsError("iota must be a unit vector of length n_x")
    rng = as_generator(rng)
    beta = draws["beta"]                                   # (M, n_x)
    xT = data.x[:, -1]                                     # (N, n_x)
    u = np.sqrt(draws["sig2"]) * rng.standard_normal(draws["sig2"].shape)
    m = (draws["lam"] + draws["rho"][:, None] * draws["ystar_T"] + beta @ xT.T + u)
    shift = (beta @ iota)[:, None] * delta_x
    mt = m + shift
    on, on_t = m > 0, mt > 0
    term1 = (beta @ iota)[:, None] * on
    term2 = mt / delta_x * (on_t.astype(float) - on)
    total = (np.maximum(mt, 0.0) - np.maximum(m, 0.0)) / delta_x
    return term1, term2, total


def treatment_effect_decomposition(draws, data, iota, delta_x, rng=None, level=0.90):
    """Posterior means and pointwise credible bands of the two terms."""
    t1, t2, _ = treatment_effect_draws(draws, data, iota, delta_x, rng)
    a = (1.0 - level) / 2.0
    summ = lambda v: {"mean": v.mean(axis=0), "lo": np.quantile(v, a, axis=0),
                      "hi": np.quantile(v, 1.0 - a, axis=0)}
    return {"I": summ(t1), "II": summ(t2)}


# ---------------------------------------------------------------------------
# chain diagnostics


def autocorrelation(x, max_lag=100):
    """Sample ACF via FFT, lags 0..max_lag."""
    x = np.asarray(x, float)
    n = x.size
    d = x - x.mean()
    f = np.fft.rfft(d, n=2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    if acov[0] <= 0:
        out = np.full(min(max_lag, n - 1) + 1, np.nan)
        out[0] = 1.0
        return out
    return acov[: min(max_lag, n - 1) + 1] / acov[0]


def effective_sample_size(x):
    """Initial-monotone-sequence ESS estimator for a single chain."""
    x = np.asarray(x, float)
    n = x.size
    if n < 4:
        return float(n)
    rho = autocorrelation(x, n - 1)
    if not np.isfinite(rho[1:]).all():
        return float(n)
    m = (n - 1) // 2
    gam = rho[0 : 2 * m : 2] + rho[1 : 2 * m + 1 : 2]      # Gamma_k = rho_2k + rho_2k+1
    pos = np.nonzero(gam <= 0)[0]
    gam = gam[: pos[0]] if pos.size else gam
    if gam.size == 0:
        return float(n)
    gam = np.minimum.accumulate(gam)
    tau = -1.0 + 2.0 * gam.sum()
    return float(n / max(tau, 1e-12))


def _scalar_series(draws):
    series = {"rho": draws["rho"]}
    for k in range(draws["beta"].shape[1]):
        series[f"beta{k + 1}"] = draws["beta"][:, k]
    for k in ("alpha_lam", "alpha_sig", "y0_loc", "y0_var"):
        v = draws[k]
        if np.ptp(v) > 0:
            series[k] = v
    series["lam_1"] = draws["lam"][:, 0]
    series["sig2_1"] = draws["sig2"][:, 0]
    return series


def chain_diagnostics(draws, max_lag=100):
    """Summary, ACF and acceptance information for the scalar parameters."""
    series = _scalar_series(draws)
    summary, acfs = [], {}
    for name, v in series.items():
        acf = autocorrelation(v, max_lag)
        acfs[name] = acf
        summary.append({"parameter": name, "mean": float(v.mean()), "sd": float(v.std(ddof=1)),
                        "q05": float(np.quantile(v, 0.05)), "q95": float(np.quantile(v, 0.95)),
                        "ess": effective_sample_size(v),
                        "acf1": float(acf[1]) if acf.size > 1 else np.nan})
    acc = draws.diagnostics.get("accept_sigma")
    burn = draws.settings.burn_in
    accept = {}
    if acc is not None and np.isfinite(acc).any():
        accept = {"sigma2_rwmh_burn_in": float(np.nanmean(acc[:burn])) if burn else np.nan,
                  "sigma2_rwmh_sampling": float(np.nanmean(acc[burn:]))}
    return {"summary": summary, "acf": acfs, "acceptance": accept, "trace": series}


def write_chain_diagnostics(out_dir, report):
    os.makedirs(out_dir, exist_ok=True)
    cols = ["parameter", "mean", "sd", "q05", "q95", "ess", "acf1"]
    with open(os.path.join(out_dir, "chain_summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in report["summary"]:
            w.writerow([r["parameter"]] + [_f(r[c]) for c in cols[1:]])
    names = list(report["acf"])
    with open(os.path.join(out_dir, "chain_acf.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lag"] + names)
        L = max(a.size for a in report["acf"].values())
        for k in range(L):
            w.writerow([k] + [_f(report["acf"][n][k]) if k < report["acf"][n].size else ""
                              for n in names])
    with open(os.path.join(out_dir, "chain_trace.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        tr = report["trace"]
        w.writerow(["draw"] + list(tr))
        for j in range(len(next(iter(tr.values())))):
            w.writerow([j] + [_f(tr[n][j]) for n in tr])
    with open(os.path.join(out_dir, "acceptance.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["block", "rate"])
        for k, v in sorted(report["acceptance"].items()):
            w.writerow([k, _f(v)])
