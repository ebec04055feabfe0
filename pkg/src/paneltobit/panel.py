"""Panel containers, the dynamic Tobit law of motion, and CSV ingestion.

Storage layout (unit-major, contiguous rows):

* ``y``  has shape (N, T+1) and covers t = 0..T.
* ``x``  has shape (N, T+2, n_x) and covers t = -1..T, so ``x[:, t]`` is the
  regressor dated t-1, which enters the period-t mean.  ``x[:, 0]`` is the
  t = -1 row used by the correlated random effects and ``x[:, T+1]`` is x_T,
  used for one-step forecasts.
"""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import stream, open_uniform

log = logging.getLogger(__name__)


class PanelError(ValueError):
    pass


@dataclass
class PanelData:
    y: np.ndarray
    x: np.ndarray = None
    unit_ids: list = None
    holdout_y: np.ndarray = None
    x_mean: np.ndarray = None
    x_sd: np.ndarray = None
    x_future: np.ndarray = None
    censored: bool = True

    def __post_init__(self):
        self.y = np.ascontiguousarray(np.asarray(self.y, dtype=float))
        if self.y.ndim != 2 or self.y.shape[1] < 2:
            raise PanelError("y must be N x (T+1) with T >= 1")
        N, T1 = self.y.shape
        if not np.all(np.isfinite(self.y)):
            raise PanelError("y contains missing or non-finite values")
        if self.censored and np.any(self.y < 0):
            raise PanelError("censored panel has negative y")
        if self.x is None:
            self.x = np.zeros((N, T1 + 1, 0))
        self.x = np.ascontiguousarray(np.asarray(self.x, dtype=float))
        if self.x.ndim != 3 or self.x.shape[:2] != (N, T1 + 1):
            raise PanelError(f"x must have shape (N, T+2, n_x) = ({N}, {T1 + 1}, n_x)")
        if not np.all(np.isfinite(self.x)):
            raise PanelError("x contains missing or non-finite values")
        if self.unit_ids is None:
            self.unit_ids = [str(i) for i in range(N)]
        self.unit_ids = [str(u) for u in self.unit_ids]
        if len(self.unit_ids) != N:
            raise PanelError("unit_ids length mismatch")
        if self.holdout_y is not None:
            self.holdout_y = np.asarray(self.holdout_y, dtype=float)
            if self.holdout_y.ndim == 1:
                self.holdout_y = self.holdout_y[:, None]
        if self.x_mean is None:
            self.x_mean = np.zeros(self.n_x)
            self.x_sd = np.ones(self.n_x)

    @property
    def n_units(self):
        return self.y.shape[0]

    @property
    def n_periods_T(self):
        return self.y.shape[1] - 1

    @property
    def n_x(self):
        return self.x.shape[2]

    def subset(self, idx):
        idx = np.asarray(idx)
        return PanelData(
            self.y[idx], self.x[idx], [self.unit_ids[i] for i in idx],
            None if self.holdout_y is None else self.holdout_y[idx],
            self.x_mean, self.x_sd,
            None if self.x_future is None else self.x_future[idx],
            self.censored,
        )


@dataclass
class LatentPanel:
    y_star: np.ndarray

    def check(self, data):
        pos = data.y > 0
        if not np.array_equal(self.y_star[pos], data.y[pos]):
            raise PanelError("latent differs from observed at a positive cell")
        if np.any(self.y_star[~pos] > 0):
            raise PanelError("latent is positive at a censored cell")


@dataclass
class UnitParams:
    lam: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        self.lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        self.sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float))
        if np.any(self.sigma2 <= 0):
            raise PanelError("sigma2 must be positive")


@dataclass
class CommonParams:
    rho: float
    beta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.rho = float(self.rho)
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if not (np.isfinite(self.rho) and np.all(np.isfinite(self.beta))):
            raise PanelError("common parameters must be finite")

    @property
    def theta(self):
        return np.concatenate([[self.rho], self.beta])


def conditional_mean(lambda_i, rho, beta, y_star_prev, x_prev=()):
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    x_prev = np.atleast_1d(np.asarray(x_prev, dtype=float))
    if beta.shape != x_prev.shape:
        raise PanelError(f"beta has length {beta.size} but x_prev has {x_prev.size}")
    return float(lambda_i + rho * y_star_prev + beta @ x_prev)


def censor(y_star):
    return np.where(np.asarray(y_star) >= 0, y_star, 0.0) if np.ndim(y_star) else (
        float(y_star) if y_star >= 0 else 0.0)


def simulate_panel(unit_params, common, y0_star, x=None, T=None, rng=None, seed=None):
    """Iterate the law of motion for t = 1..T.

    Shocks come from a counter-based stream per unit (``seed`` keyed), so the
    result does not depend on how units are batched.  A ``Generator`` may be
    passed instead via ``rng``.
    """
    lam = unit_params.lam
    s2 = unit_params.sigma2
    if np.any(s2 <= 0):
        raise PanelError("sigma2 must be positive")
    N = lam.size
    y0_star = np.broadcast_to(np.asarray(y0_star, dtype=float), (N,))
    if x is None:
        if T is None:
            raise PanelError("T required when x is absent")
        x = np.zeros((N, T + 2, 0))
    T = x.shape[1] - 2 if T is None else int(T)
    if x.shape[:2] != (N, T + 2) or x.shape[2] != common.beta.size:
        raise PanelError("x dimensions inconsistent with N, T, beta")
    if rng is None:
        rng = stream(0 if seed is None else seed, 0x51)
    z = rng.standard_normal((N, T))
    ys = np.empty((N, T + 1))
    ys[:, 0] = y0_star
    xb = x @ common.beta
    sd = np.sqrt(s2)
    for t in range(1, T + 1):
        ys[:, t] = lam + common.rho * ys[:, t - 1] + xb[:, t] + sd * z[:, t - 1]
    y = np.maximum(ys, 0.0)
    return LatentPanel(ys), PanelData(y, x)


def standardize_regressors(x, mean=None, sd=None):
    """Pool over units and periods; returns (x_std, mean, sd)."""
    if x.shape[2] == 0:
        return x, np.zeros(0), np.ones(0)
    flat = x.reshape(-1, x.shape[2])
    mean = flat.mean(axis=0) if mean is None else mean
    sd = flat.std(axis=0) if sd is None else sd
    sd = np.where(sd > 0, sd, 1.0)
    return (x - mean) / sd, mean, sd


def per_unit_variance_mean(y):
    """V*: cross-sectional average of the per-unit time-series variances."""
    return float(np.mean(np.var(y, axis=1, ddof=1)))


# ---------------------------------------------------------------------------
# CSV


def read_panel_csv(path, standardize=True, T=None):
    """Read a long-format panel with header ``unit_id,time,y,x1,...,xk``.

    Rows for t = -1..T carry regressors and rows for t = 0..T carry outcomes.
    Rows after T are the holdout.  When ``T`` is not given it is the last
    period with regressors for every unit (or the last period overall when
    there are no regressors).  NaN or negative y is rejected with its row.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["unit_id", "time", "y"]:
            raise PanelError("header must start with unit_id,time,y")
        n_x = len(header) - 3
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != n_x + 3:
                raise PanelError(f"row {lineno}: expected {n_x + 3} fields")
            uid, t = rec[0], int(rec[1])
            yv = _parse_float(rec[2], lineno, "y")
            if yv is not None and yv < 0:
                raise PanelError(f"row {lineno}: negative y")
            xv = [_parse_float(v, lineno, header[3 + k]) for k, v in enumerate(rec[3:])]
            rows.append((uid, t, yv, xv, lineno))
    if not rows:
        raise PanelError("no data rows")

    units = list(dict.fromkeys(r[0] for r in rows))
    uidx = {u: i for i, u in enumerate(units)}
    times = sorted({r[1] for r in rows})
    if times[0] != -1:
        log.warning("no t=-1 rows; the t=0 regressor row is duplicated")
    tmax = times[-1]
    N = len(units)
    yfull = np.full((N, tmax + 2), np.nan)  # index t+1 for t = -1..tmax
    xfull = np.full((N, tmax + 2, n_x), np.nan)
    for uid, t, yv, xv, lineno in rows:
        i = uidx[uid]
        if t < -1:
            raise PanelError(f"row {lineno}: time below -1")
        if yv is not None:
            yfull[i, t + 1] = yv
        if n_x and all(v is not None for v in xv):
            xfull[i, t + 1] = xv

    have_y = np.all(np.isfinite(yfull), axis=0)
    if T is None and n_x:
        have_x = np.all(np.isfinite(xfull), axis=(0, 2))
        T = max(t for t in range(0, tmax + 1) if have_x[t + 1])
    elif T is None:
        T = tmax
    T = int(T)
    if T < 1 or T > tmax:
        raise PanelError(f"invalid estimation horizon T={T}")
    for t in range(0, T + 1):
        if not have_y[t + 1]:
            bad = [r[4] for r in rows if r[1] == t and r[2] is None]
            where = f" (row {bad[0]})" if bad else ""
            raise PanelError(f"missing y at time {t}{where}")
    y = yfull[:, 1 : T + 2]
    x = xfull[:, : T + 2].copy() if n_x else np.zeros((N, T + 2, 0))
    if n_x and not np.all(np.isfinite(x[:, 0])):
        x[:, 0] = x[:, 1]
    if not np.all(np.isfinite(x)):
        raise PanelError("missing regressor values within -1..T")
    hold = yfull[:, T + 2 :]
    holdout = hold if hold.shape[1] and np.all(np.isfinite(hold)) else None
    x_future = None
    if n_x and tmax > T:
        xf = xfull[:, T + 2 :]
        x_future = xf if np.all(np.isfinite(xf)) else None
    x_mean = x_sd = None
    if standardize and n_x:
        x, x_mean, x_sd = standardize_regressors(x)
        if x_future is not None:
            x_future = (x_future - x_mean) / x_sd
    return PanelData(y, x, units, holdout, x_mean, x_sd, x_future)


def _parse_float(s, lineno, name):
    s = s.strip()
    if s == "":
        return None
    try:
        v = float(s)
    except ValueError:
        raise PanelError(f"row {lineno}: cannot parse {name}={s!r}") from None
    if math.isnan(v) or math.isinf(v):
        raise PanelError(f"row {lineno}: non-finite {name}")
    return v


def write_panel_csv(path, data, raw_x=True):
    """Write long format; regressors are de-standardized when ``raw_x``."""
    N, T1 = data.y.shape
    T = T1 - 1
    n_x = data.n_x
    x = data.x * data.x_sd + data.x_mean if raw_x and n_x else data.x
    H = 0 if data.holdout_y is None else data.holdout_y.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "time", "y"] + [f"x{k + 1}" for k in range(n_x)])
        for i, uid in enumerate(data.unit_ids):
            for t in range(-1, T + 1 + H):
                if t == -1:
                    yv = ""
                elif t <= T:
                    yv = repr(float(data.y[i, t]))
                else:
                    yv = repr(float(data.holdout_y[i, t - T - 1]))
                xv = [repr(float(v)) for v in x[i, t + 1]] if t <= T else [""] * n_x
                w.writerow([uid, t, yv] + xv)
