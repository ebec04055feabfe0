"""Forecast evaluation: log scores, CRPS, PIT and set statistics."""

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

LPS_FLOOR = np.log(1e-300)
SET_KINDS = ("zero_only", "zero_to_b", "zero_plus_interval", "empty", "multi")


class ScoringError(ValueError):
    pass


@dataclass
class ScoreReport:
    lps: float = float("nan")
    crps: float = float("nan")
    coverage_freq: float = float("nan")
    avg_length: float = float("nan")
    set_type_fractions: dict = field(default_factory=dict)
    n_lps_floored: int = 0

    def as_row(self):
        row = {"lps": self.lps, "crps": self.crps, "coverage": self.coverage_freq,
               "length": self.avg_length}
        for k in SET_KINDS:
            row[f"frac_{k}"] = self.set_type_fractions.get(k, float("nan"))
        return row


# ---------------------------------------------------------------------------
# log predictive score


def log_predictive_score(pd, y, floor=LPS_FLOOR):
    """Per-unit log score.  Returns (scores, floored) where ``floored`` flags
    units whose density underflowed and were set to ``floor``."""
    y = np.broadcast_to(np.asarray(y, float), (pd.n_units,))
    if np.any(y < 0):
        raise ScoringError("realized outcomes must be non-negative")
    zero = y == 0
    with np.errstate(divide="ignore"):
        val = np.where(zero, np.log(pd.pi0), 0.0)
        pos = ~zero
        if pos.any():
            dens = pd.density_at(np.where(pos, y, 1.0))
            val = np.where(pos, np.log(dens), val)
    floored = ~(val > floor)
    return np.where(floored, floor, val), floored


# ---------------------------------------------------------------------------
# CRPS


def _check_samples(samples):
    s = np.asarray(samples, float).ravel()
    if s.size == 0:
        raise ScoringError("empty sample set")
    return s


def crps_riemann(samples, y):
    """Integral over [0, inf) of (F_hat(z) - 1{z >= y})^2 with F_hat the
    empirical CDF of the samples.

    The integrand is a step function between consecutive points of the
    merged grid {samples} U {y}; each piece is summed exactly.  The three
    placements of y (below all samples, above all, in between) reduce to
    this one sum.
    """
    s = np.sort(_check_samples(samples), kind="stable")
    M = s.size
    y = float(y)
    if y <= s[0]:
        # (0 - 1)^2 on [y, s_1), then (j/M - 1)^2 between samples
        j = np.arange(1, M)
        return float((s[0] - y) + np.sum((j / M - 1.0) ** 2 * np.diff(s)))
    if y >= s[-1]:
        j = np.arange(1, M)
        return float(np.sum((j / M) ** 2 * np.diff(s)) + (y - s[-1]))
    k = int(np.searchsorted(s, y, side="right"))       # s[k-1] <= y < s[k]
    total = 0.0
    j = np.arange(1, k)
    total += np.sum((j / M) ** 2 * np.diff(s[:k]))       # below y, indicator 0
    total += (k / M) ** 2 * (y - s[k - 1])
    total += (k / M - 1.0) ** 2 * (s[k] - y)
    j = np.arange(k + 1, M)
    total += np.sum((j / M - 1.0) ** 2 * np.diff(s[k:]))
    return float(total)


def crps_pairwise(samples, y):
    """(1/M) sum |y_j - y| - (1/M^2) sum_{i<j} (y_(j) - y_(i))."""
    s = np.sort(_check_samples(samples), kind="stable")
    M = s.size
    j = np.arange(1, M + 1)
    return float(np.mean(np.abs(s - y)) - np.sum((2 * j - M - 1) * s) / (M * M))


def crps_pairwise_rows(samples, y):
    """Row-wise ``crps_pairwise`` for samples of shape (N, M)."""
    s = np.sort(samples, axis=1, kind="stable")
    M = s.shape[1]
    j = np.arange(1, M + 1)
    y = np.asarray(y, float)[:, None]
    return np.mean(np.abs(s - y), axis=1) - (s @ (2 * j - M - 1)) / (M * M)


def full_predictive_sample(pd):
    """Samples from the full predictive, shape (N, M): round(pi0 * M) exact
    zeros followed by a systematic resample of the positive draws with
    probabilities proportional to W."""
    N, M = pd.samples.shape
    out = np.zeros((N, M))
    n0 = np.rint(pd.pi0 * M).astype(int)
    for i in range(N):
        n_pos = M - n0[i]
        if n_pos <= 0:
            continue
        w = pd.weights[i]
        tot = w.sum()
        if not tot > 0:
            continue
        c = np.cumsum(w) / tot
        idx = np.searchsorted(c, (np.arange(n_pos) + 0.5) / n_pos, side="left")
        out[i, n0[i]:] = pd.samples[i, np.minimum(idx, M - 1)]
    return out


def pit(samples, y):
    """Empirical predictive CDF at y, row-wise for (N, M) samples."""
    s = np.atleast_2d(samples)
    y = np.broadcast_to(np.asarray(y, float), (s.shape[0],))
    return np.mean(s <= y[:, None], axis=1)


# ---------------------------------------------------------------------------
# aggregate reports


def evaluate_density(pd, y, floor=LPS_FLOOR):
    """Mean LPS and CRPS over units plus per-unit PIT values."""
    y = np.asarray(y, float)
    lps, floored = log_predictive_score(pd, y, floor)
    full = full_predictive_sample(pd)
    crps = crps_pairwise_rows(full, y)
    return {"lps": float(np.mean(lps)), "crps": float(np.mean(crps)),
            "n_lps_floored": int(floored.sum()), "pit": pit(full, y),
            "lps_units": lps, "crps_units": crps}


def evaluate_sets(sets, y):
    """Coverage frequency, mean length and set-type fractions."""
    y = np.asarray(y, float).ravel()
    if len(sets) != y.size:
        raise ScoringError("sets and outcomes are not aligned")
    hits = np.array([s.contains(v) for s, v in zip(sets, y)], bool)
    lengths = np.array([s.length for s in sets])
    kinds = Counter(s.kind() for s in sets)
    n = max(len(sets), 1)
    return {"coverage_freq": float(hits.mean()) if y.size else float("nan"),
            "avg_length": float(lengths.mean()) if y.size else float("nan"),
            "set_type_fractions": {k: kinds.get(k, 0) / n for k in SET_KINDS},
            "hits": hits, "lengths": lengths}


def score_report(pd, sets, y):
    d = evaluate_density(pd, y)
    s = evaluate_sets(sets, y)
    return ScoreReport(d["lps"], d["crps"], s["coverage_freq"], s["avg_length"],
                       s["set_type_fractions"], d["n_lps_floored"])
